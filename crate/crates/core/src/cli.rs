//! Operator command line. `main.rs` is a thin wrapper around [`run`].

use std::io::{BufRead, Write};
use std::net::SocketAddr;
use std::path::PathBuf;

use chrono::Duration;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::analytics::{ReportOptions, TrimScope};
use crate::api::{self, ApiConfig, AppState};
use crate::consensus::ConsensusConfig;
use crate::geometry::AccountId;
use crate::pipeline::{self, AssignRequest, ExportFormat, PipelineError};
use crate::store::{AccountRole, Store, StoreConfig, DEFAULT_SESSION_IDLE_HOURS};
use crate::tracker::TrackerConfig;
use crate::workflow::{AssignmentStatus, Framework};

pub const DATA_ROOT_ENV: &str = "THERMLABEL_DATA";

#[derive(Debug, Parser)]
#[command(name = "thermlabel", version, about = "Thermal video labeling: ingest, assign, consensus, export, report, serve")]
pub struct Cli {
    /// Data directory shared with the service.
    #[arg(long, env = DATA_ROOT_ENV, global = true, default_value = "data")]
    pub data_root: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Register a directory of frame_NNNNNN.png grayscale frames as a video.
    Ingest {
        dir: PathBuf,
        #[arg(long)]
        video_id: String,
        #[arg(long, default_value_t = 30.0)]
        fps: f64,
        /// Frames are black-hot; invert before tracking.
        #[arg(long)]
        polarity_inverted: bool,
    },
    /// Manage accounts.
    #[command(subcommand)]
    User(UserCommand),
    /// Split videos into segments and create assignments (printed as CSV).
    Assign {
        #[arg(long, value_enum)]
        framework: FrameworkArg,
        #[arg(long)]
        max_frames: u32,
        /// Videos to assign (repeatable).
        #[arg(long = "video", required = true)]
        videos: Vec<String>,
        /// Labeler pool (repeatable); defaults to every labeler account.
        #[arg(long = "labeler")]
        labelers: Vec<String>,
        #[arg(long, default_value = "")]
        week: String,
        #[arg(long, default_value_t = 5)]
        panel_size: usize,
    },
    /// Compute final labels for segments (all open ones when none given).
    Consensus {
        segments: Vec<String>,
        #[command(flatten)]
        rule: ConsensusArgs,
    },
    /// Write final labels.
    Export {
        #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
        format: FormatArg,
        /// Restrict to these videos (repeatable).
        #[arg(long = "video")]
        videos: Vec<String>,
        /// Output file; stdout when omitted.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Write efficiency report tables into a directory.
    Report {
        #[arg(long)]
        no_trim: bool,
        #[arg(long)]
        global_trim: bool,
        #[arg(long)]
        no_density_groups: bool,
        #[arg(long, default_value_t = 5)]
        panel_size: usize,
        #[arg(long, short, default_value = "report")]
        out: PathBuf,
    },
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Subcommand)]
pub enum UserCommand {
    /// Create an account; the password is read from the first line of stdin.
    Add {
        username: String,
        #[arg(long)]
        admin: bool,
    },
    /// Remove an account and end its sessions.
    Rm { username: String },
}

#[derive(Debug, Clone, Args)]
pub struct ConsensusArgs {
    #[arg(long, default_value_t = 0.5)]
    pub iou_threshold: f64,
    #[arg(long, default_value_t = 3)]
    pub quorum: usize,
    #[arg(long, default_value_t = 5)]
    pub panel_size: usize,
}

impl From<&ConsensusArgs> for ConsensusConfig {
    fn from(a: &ConsensusArgs) -> Self {
        ConsensusConfig { iou_threshold: a.iou_threshold, quorum: a.quorum, panel_size: a.panel_size }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[arg(long, env = "THERMLABEL_BIND", default_value = "127.0.0.1:8080")]
    pub bind: SocketAddr,
    #[arg(long, env = "THERMLABEL_SESSION_HOURS", default_value_t = DEFAULT_SESSION_IDLE_HOURS)]
    pub session_hours: i64,
    #[arg(long, default_value_t = TrackerConfig::default().buffer)]
    pub buffer: u32,
    #[arg(long, default_value_t = TrackerConfig::default().brightness_threshold)]
    pub brightness_threshold: u8,
    #[arg(long, default_value_t = TrackerConfig::default().size_threshold)]
    pub size_threshold: u64,
    #[command(flatten)]
    pub rule: ConsensusArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FrameworkArg {
    Majvote,
    Labelreview,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Csv,
    Jsonl,
}

/// Parses `args` and executes the command, returning the exit status.
pub fn run<I, T>(args: I, input: &mut dyn BufRead, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli, input, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn open_store(root: &std::path::Path, config: StoreConfig) -> Result<Store, PipelineError> {
    Ok(Store::open(root, config)?)
}

fn execute(cli: Cli, input: &mut dyn BufRead, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), PipelineError> {
    let root = cli.data_root;
    match cli.command {
        Command::Ingest { dir, video_id, fps, polarity_inverted } => {
            let store = open_store(&root, StoreConfig::default())?;
            let meta = pipeline::ingest(&store, &dir, &video_id, fps, polarity_inverted)?;
            writeln!(out, "{}: {} frames, {}x{}", meta.video_id, meta.frame_count, meta.width, meta.height)?;
        }
        Command::User(UserCommand::Add { username, admin }) => {
            let store = open_store(&root, StoreConfig::default())?;
            let mut password = String::new();
            input.read_line(&mut password)?;
            let password = password.trim_end_matches(['\r', '\n']);
            let role = if admin { AccountRole::Admin } else { AccountRole::Labeler };
            let info = store.add_user(&username, password, role)?;
            writeln!(out, "added {} ({:?})", info.username, info.role)?;
        }
        Command::User(UserCommand::Rm { username }) => {
            let store = open_store(&root, StoreConfig::default())?;
            store.remove_user(&username)?;
            writeln!(out, "removed {username}")?;
        }
        Command::Assign { framework, max_frames, videos, labelers, week, panel_size } => {
            let store = open_store(&root, StoreConfig::default())?;
            let req = AssignRequest {
                videos,
                labelers: labelers.into_iter().map(AccountId::new).collect(),
                framework: match framework {
                    FrameworkArg::Majvote => Framework::MajVote,
                    FrameworkArg::Labelreview => Framework::LabelReview,
                },
                max_frames,
                week,
                panel_size,
            };
            let created = pipeline::assign(&store, &req)?;
            out.write_all(crate::workflow::assignments_to_csv(&created)?.as_bytes())?;
        }
        Command::Consensus { segments, rule } => {
            let store = open_store(&root, StoreConfig::default())?;
            let cfg = ConsensusConfig::from(&rule);
            let targets = if segments.is_empty() {
                let mut open: Vec<String> = store
                    .assignments()?
                    .into_iter()
                    .filter(|a| a.status == AssignmentStatus::Open)
                    .map(|a| a.video_segment_id)
                    .collect();
                open.sort();
                open.dedup();
                open
            } else {
                segments
            };
            let mut first_err = None;
            for seg in targets {
                match pipeline::run_consensus(&store, &seg, &cfg) {
                    Ok(set) => writeln!(out, "{seg}: {} final labels ({})", set.labels.len(), set.framework)?,
                    Err(e) => {
                        writeln!(err, "{seg}: {e}")?;
                        first_err.get_or_insert(e);
                    }
                }
            }
            if let Some(e) = first_err {
                return Err(e);
            }
        }
        Command::Export { format, videos, out: path } => {
            let store = open_store(&root, StoreConfig::default())?;
            let records = pipeline::export_records(&store, &videos)?;
            if records.is_empty() {
                writeln!(err, "warning: no final labels to export")?;
            }
            let format = match format {
                FormatArg::Csv => ExportFormat::Csv,
                FormatArg::Jsonl => ExportFormat::Jsonl,
            };
            let bytes = pipeline::render_export(&records, format)?;
            match path {
                Some(p) => crate::store::write_atomic(&p, &bytes)?,
                None => out.write_all(&bytes)?,
            }
        }
        Command::Report { no_trim, global_trim, no_density_groups, panel_size, out: dir } => {
            let store = open_store(&root, StoreConfig::default())?;
            let options = ReportOptions {
                trim: !no_trim,
                scope: if global_trim { TrimScope::Global } else { TrimScope::PerGroup },
                group_by_density: !no_density_groups,
                panel_size,
            };
            let report = pipeline::report(&store, options)?;
            for p in pipeline::write_report(&report, &dir)? {
                writeln!(out, "wrote {}", p.display())?;
            }
        }
        Command::Serve(args) => {
            if args.session_hours <= 0 {
                return Err(PipelineError::Validation("session timeout must be positive".into()));
            }
            let tracker = TrackerConfig {
                buffer: args.buffer,
                brightness_threshold: args.brightness_threshold,
                size_threshold: args.size_threshold,
                ..TrackerConfig::default()
            };
            tracker.validate().map_err(|e| PipelineError::Validation(e.to_string()))?;
            let consensus = ConsensusConfig::from(&args.rule);
            consensus.validate()?;
            let store = open_store(
                &root,
                StoreConfig { session_idle_timeout: Duration::hours(args.session_hours), ..StoreConfig::default() },
            )?;
            let state = AppState::new(store, ApiConfig { tracker, consensus });
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(api::serve(args.bind, state))?;
        }
    }
    Ok(())
}
