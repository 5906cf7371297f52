#ifndef THERMLABEL_H
#define THERMLABEL_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define TL_CATEGORY_ANIMAL 0

#define TL_CATEGORY_HUMAN 1

#define TL_ORIGIN_DRAWN 0

#define TL_ORIGIN_PROPAGATED 1

#define TL_ORIGIN_TRACKED 2

#define TL_ORIGIN_REVIEW_EDITED 3

/**
 * Result code of every fallible call.
 */
typedef enum TlStatus {
  TL_STATUS_OK = 0,
  TL_STATUS_NULL_POINTER = 1,
  TL_STATUS_INVALID_ARGUMENT = 2,
  TL_STATUS_BUFFER_TOO_SMALL = 3,
  TL_STATUS_PANIC = 4,
} TlStatus;

/**
 * Grayscale frame owned by the library.
 */
typedef struct TlFrame TlFrame;

/**
 * Tracker settings owned by the library.
 */
typedef struct TlTracker TlTracker;

/**
 * Axis-aligned box in pixel coordinates; `x`/`y` is the top-left corner.
 */
typedef struct TlBox {
  uint64_t box_id;
  uint32_t frame_index;
  int64_t x;
  int64_t y;
  int64_t width;
  int64_t height;
  /**
   * `TL_CATEGORY_*`
   */
  uint8_t category;
  /**
   * `TL_ORIGIN_*`
   */
  uint8_t origin;
  /**
   * Panel index of the labeler who drew the box.
   */
  uint32_t labeler;
} TlBox;

/**
 * A consensus label: the anchor box plus a bit per supporting labeler.
 */
typedef struct TlFinalLabel {
  struct TlBox bbox;
  uint64_t support_mask;
  uint32_t support_count;
} TlFinalLabel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *tl_version(void);

/**
 * Length in bytes of the last error message of this thread, excluding the
 * terminating NUL; 0 when there is none.
 */
size_t tl_last_error_length(void);

/**
 * Copies the last error message (NUL-terminated) into `buf`.
 *
 * # Safety
 * `buf` must be valid for `cap` bytes.
 */
enum TlStatus tl_last_error_message(char *buf, size_t cap);

/**
 * Intersection over union of two boxes.
 *
 * # Safety
 * Pointers must be valid or null.
 */
enum TlStatus tl_iou(const struct TlBox *a, const struct TlBox *b, double *out);

/**
 * Clips a box to the frame. `*kept` is set to 0 when the clipped box is
 * narrower or shorter than `min_size`, in which case `out` is untouched.
 *
 * # Safety
 * Pointers must be valid or null.
 */
enum TlStatus tl_clamp_and_filter(const struct TlBox *b,
                                  uint32_t frame_width,
                                  uint32_t frame_height,
                                  uint32_t min_size,
                                  struct TlBox *out,
                                  uint8_t *kept);

/**
 * Copies `len` row-major 8-bit pixels into a new frame.
 *
 * # Safety
 * `pixels` must be valid for `len` bytes; `out` must be valid.
 */
enum TlStatus tl_frame_new(uint32_t width,
                           uint32_t height,
                           const uint8_t *pixels,
                           size_t len,
                           uint32_t frame_index,
                           struct TlFrame **out);

/**
 * Releases a frame. Null is ignored.
 *
 * # Safety
 * `frame` must come from [`tl_frame_new`] and not be used afterwards.
 */
void tl_frame_free(struct TlFrame *frame);

/**
 * Creates tracker settings. `connectivity` is 4 or 8.
 *
 * # Safety
 * `out` must be valid.
 */
enum TlStatus tl_tracker_new(uint32_t buffer,
                             uint8_t brightness_threshold,
                             uint64_t size_threshold,
                             uint8_t connectivity,
                             struct TlTracker **out);

/**
 * Releases a tracker. Null is ignored.
 *
 * # Safety
 * `tracker` must come from [`tl_tracker_new`] and not be used afterwards.
 */
void tl_tracker_free(struct TlTracker *tracker);

/**
 * Moves `n` boxes of the previous frame onto `frame`, writing `n` boxes to
 * `out` in input order.
 *
 * # Safety
 * `prev` and `out` must be valid for `n` elements; handles must be live.
 */
enum TlStatus tl_track_boxes(const struct TlTracker *tracker,
                             const struct TlBox *prev,
                             size_t n,
                             const struct TlFrame *frame,
                             struct TlBox *out);

/**
 * Quorum vote over one frame. `boxes[i].labeler` selects the panel member
 * (`0..panel_size`, at most 64). Writes up to `cap` labels and the total
 * count to `*out_len`; returns `BufferTooSmall` when `cap` is short.
 *
 * # Safety
 * `boxes` must be valid for `n` elements and `out` for `cap`.
 */
enum TlStatus tl_majority_vote_frame(const struct TlBox *boxes,
                                     size_t n,
                                     uint32_t panel_size,
                                     double iou_threshold,
                                     uint32_t quorum,
                                     struct TlFinalLabel *out,
                                     size_t cap,
                                     size_t *out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* THERMLABEL_H */
