//! Two-pass connected-component labeling over a binary mask.

use serde::{Deserialize, Serialize};

/// Which neighbours of a foreground pixel count as connected to it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Connectivity {
    /// N, S, E and W neighbours.
    Four,
    /// All eight surrounding pixels.
    Eight,
}

impl TryFrom<u8> for Connectivity {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            other => Err(format!("connectivity must be 4 or 8, got {other}")),
        }
    }
}

impl From<Connectivity> for u8 {
    fn from(c: Connectivity) -> u8 {
        match c {
            Connectivity::Four => 4,
            Connectivity::Eight => 8,
        }
    }
}

/// Row-major binary image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Mask {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn from_rows(rows: &[&[u8]]) -> Self {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        let data = rows
            .iter()
            .flat_map(|r| r.iter().map(|&v| v != 0))
            .collect();
        Mask {
            width,
            height,
            data,
        }
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: bool) {
        self.data[row * self.width + col] = v;
    }

    pub fn foreground_count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }
}

/// Summary of one connected component, in mask coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentStats {
    pub pixel_count: usize,
    pub centroid_row: f64,
    pub centroid_col: f64,
    pub min_row: usize,
    pub max_row: usize,
    pub min_col: usize,
    pub max_col: usize,
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn new() -> Self {
        // label 0 is background
        DisjointSet { parent: vec![0] }
    }

    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Labels the foreground of `mask` and returns one entry per component,
/// ordered by the top-left of its extent (min row, then min col).
pub fn connected_components(mask: &Mask, connectivity: Connectivity) -> Vec<ComponentStats> {
    let (w, h) = (mask.width, mask.height);
    let mut labels = vec![0u32; w * h];
    let mut sets = DisjointSet::new();

    // first pass: provisional labels from already-visited neighbours
    for r in 0..h {
        for c in 0..w {
            if !mask.get(r, c) {
                continue;
            }
            let mut neighbours = [0u32; 4];
            let mut n = 0;
            let mut push = |l: u32| {
                if l != 0 {
                    neighbours[n] = l;
                    n += 1;
                }
            };
            if c > 0 {
                push(labels[r * w + c - 1]);
            }
            if r > 0 {
                push(labels[(r - 1) * w + c]);
                if connectivity == Connectivity::Eight {
                    if c > 0 {
                        push(labels[(r - 1) * w + c - 1]);
                    }
                    if c + 1 < w {
                        push(labels[(r - 1) * w + c + 1]);
                    }
                }
            }
            let label = match neighbours[..n].iter().min() {
                None => sets.make(),
                Some(&m) => {
                    for &l in &neighbours[..n] {
                        sets.union(m, l);
                    }
                    m
                }
            };
            labels[r * w + c] = label;
        }
    }

    // second pass: resolve equivalences and accumulate statistics
    #[derive(Clone)]
    struct Acc {
        count: usize,
        sum_row: u64,
        sum_col: u64,
        min_row: usize,
        max_row: usize,
        min_col: usize,
        max_col: usize,
    }
    let mut accs: Vec<Option<Acc>> = vec![None; sets.parent.len()];
    for r in 0..h {
        for c in 0..w {
            let l = labels[r * w + c];
            if l == 0 {
                continue;
            }
            let root = sets.find(l) as usize;
            let acc = accs[root].get_or_insert(Acc {
                count: 0,
                sum_row: 0,
                sum_col: 0,
                min_row: r,
                max_row: r,
                min_col: c,
                max_col: c,
            });
            acc.count += 1;
            acc.sum_row += r as u64;
            acc.sum_col += c as u64;
            acc.min_row = acc.min_row.min(r);
            acc.max_row = acc.max_row.max(r);
            acc.min_col = acc.min_col.min(c);
            acc.max_col = acc.max_col.max(c);
        }
    }

    let mut out: Vec<ComponentStats> = accs
        .into_iter()
        .flatten()
        .map(|a| ComponentStats {
            pixel_count: a.count,
            centroid_row: a.sum_row as f64 / a.count as f64,
            centroid_col: a.sum_col as f64 / a.count as f64,
            min_row: a.min_row,
            max_row: a.max_row,
            min_col: a.min_col,
            max_col: a.max_col,
        })
        .collect();
    out.sort_by_key(|s| (s.min_row, s.min_col, s.max_row, s.max_col));
    out
}

/// Component with the most pixels; ties go to the earliest in the
/// (min row, min col) ordering.
pub fn select_largest(components: &[ComponentStats]) -> Option<&ComponentStats> {
    components.iter().fold(None, |best, c| match best {
        Some(b) if b.pixel_count >= c.pixel_count => Some(b),
        _ => Some(c),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Flood fill over an explicit adjacency definition.
    fn flood_sizes(mask: &Mask, conn: Connectivity) -> Vec<usize> {
        let mut seen = vec![false; mask.data.len()];
        let mut sizes = vec![];
        let offsets: Vec<(i64, i64)> = match conn {
            Connectivity::Four => vec![(-1, 0), (1, 0), (0, -1), (0, 1)],
            Connectivity::Eight => (-1..=1)
                .flat_map(|dr| (-1..=1).map(move |dc| (dr, dc)))
                .filter(|&d| d != (0, 0))
                .collect(),
        };
        for start in 0..mask.data.len() {
            if !mask.data[start] || seen[start] {
                continue;
            }
            let mut stack = vec![start];
            seen[start] = true;
            let mut n = 0;
            while let Some(i) = stack.pop() {
                n += 1;
                let (r, c) = ((i / mask.width) as i64, (i % mask.width) as i64);
                for &(dr, dc) in &offsets {
                    let (nr, nc) = (r + dr, c + dc);
                    if nr < 0 || nc < 0 || nr >= mask.height as i64 || nc >= mask.width as i64 {
                        continue;
                    }
                    let j = nr as usize * mask.width + nc as usize;
                    if mask.data[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
            sizes.push(n);
        }
        sizes.sort();
        sizes
    }

    #[test]
    fn empty_mask_has_no_components() {
        assert!(connected_components(&Mask::new(5, 4), Connectivity::Eight).is_empty());
    }

    #[test]
    fn block_centroid_at_center() {
        let mut m = Mask::new(7, 7);
        for r in 2..5 {
            for c in 1..4 {
                m.set(r, c, true);
            }
        }
        let comps = connected_components(&m, Connectivity::Four);
        assert_eq!(comps.len(), 1);
        assert_eq!(comps[0].pixel_count, 9);
        assert_eq!((comps[0].centroid_row, comps[0].centroid_col), (3.0, 2.0));
    }

    #[test]
    fn diagonal_pixels_depend_on_connectivity() {
        let m = Mask::from_rows(&[&[1, 0], &[0, 1]]);
        assert_eq!(flood_sizes(&m, Connectivity::Eight), vec![2]);
        assert_eq!(flood_sizes(&m, Connectivity::Four), vec![1, 1]);
        assert_eq!(connected_components(&m, Connectivity::Eight).len(), 1);
        assert_eq!(connected_components(&m, Connectivity::Four).len(), 2);
    }

    #[test]
    fn u_shape_merges_labels() {
        let m = Mask::from_rows(&[
            &[1, 0, 1],
            &[1, 0, 1],
            &[1, 1, 1],
        ]);
        let comps = connected_components(&m, Connectivity::Four);
        assert_eq!(comps.len(), 1);
        assert_eq!(comps[0].pixel_count, 7);
    }

    #[test]
    fn largest_selection() {
        let mk = |n: usize, row: usize| ComponentStats {
            pixel_count: n,
            centroid_row: row as f64,
            centroid_col: 0.0,
            min_row: row,
            max_row: row,
            min_col: 0,
            max_col: 0,
        };
        assert!(select_largest(&[]).is_none());
        let cs = [mk(5, 0), mk(9, 1), mk(3, 2)];
        assert_eq!(select_largest(&cs).unwrap().pixel_count, 9);
        let tie = [mk(7, 2), mk(7, 5)];
        assert_eq!(select_largest(&tie).unwrap().min_row, 2);
    }

    #[test]
    fn connectivity_serde_is_numeric() {
        assert_eq!(serde_json::to_string(&Connectivity::Eight).unwrap(), "8");
        let c: Connectivity = serde_json::from_str("4").unwrap();
        assert_eq!(c, Connectivity::Four);
        assert!(serde_json::from_str::<Connectivity>("6").is_err());
    }

    fn arb_mask() -> impl Strategy<Value = Mask> {
        (1usize..16, 1usize..16).prop_flat_map(|(w, h)| {
            proptest::collection::vec(any::<bool>(), w * h).prop_map(move |data| Mask {
                width: w,
                height: h,
                data,
            })
        })
    }

    proptest! {
        #[test]
        fn counts_sum_to_foreground_and_match_flood(m in arb_mask()) {
            for conn in [Connectivity::Four, Connectivity::Eight] {
                let comps = connected_components(&m, conn);
                let total: usize = comps.iter().map(|c| c.pixel_count).sum();
                prop_assert_eq!(total, m.foreground_count());
                let mut sizes: Vec<usize> = comps.iter().map(|c| c.pixel_count).collect();
                sizes.sort();
                prop_assert_eq!(sizes, flood_sizes(&m, conn));
                for c in &comps {
                    prop_assert!(c.centroid_row >= c.min_row as f64 && c.centroid_row <= c.max_row as f64);
                    prop_assert!(c.centroid_col >= c.min_col as f64 && c.centroid_col <= c.max_col as f64);
                }
            }
        }
    }
}
