use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::settings::Profile;

#[derive(Debug, Parser)]
#[command(name = "splatstream", version, about = "Gaussian splat reconstruction from live and recorded UAV streams")]
pub struct Cli {
    /// Log filter, e.g. `info` or `splatstream_stream=debug`.
    #[arg(long, global = true, env = "SPLATSTREAM_LOG", default_value = "warn")]
    pub log: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Replay a recorded capture to an ingest endpoint.
    Restream(RestreamArgs),
    /// Train a model offline from a COLMAP reconstruction and its images.
    Train(TrainArgs),
    /// Ingest a live stream, refine the model online and publish updates.
    Live(LiveArgs),
    /// Render a model from COLMAP poses or a pose list.
    Render(RenderArgs),
    /// Serve a model file to delivery clients, republishing on change.
    Serve(ServeArgs),
    /// Image metrics for a model, report summaries and trajectory error.
    Eval(EvalArgs),
}

/// Trainer settings. Precedence: flag, then `SPLATSTREAM_<KEY>`
/// environment variables, then the config file.
#[derive(Debug, Args, Clone, Default)]
pub struct TrainSettings {
    /// `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override any config key, e.g. `--set lr_opacity=0.02`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub iterations: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub sh_degree: Option<u8>,
    /// Base settings the overrides apply to.
    #[arg(long, value_enum, default_value_t = Profile::Default)]
    pub profile: Profile,
}

impl TrainSettings {
    pub fn flag_overrides(&self) -> Vec<String> {
        let mut v = self.set.clone();
        if let Some(i) = self.iterations {
            v.push(format!("iterations={i}"));
        }
        if let Some(s) = self.seed {
            v.push(format!("seed={s}"));
        }
        if let Some(d) = self.sh_degree {
            v.push(format!("sh_degree={d}"));
        }
        v
    }
}

#[derive(Debug, Args)]
pub struct RestreamArgs {
    /// Capture directory containing `manifest.txt`.
    #[arg(long)]
    pub capture: PathBuf,
    /// Ingest endpoint.
    #[arg(long, env = "SPST_BIND", default_value = "127.0.0.1:7400")]
    pub addr: String,
    /// Playback speed multiplier.
    #[arg(long, default_value_t = 1.0)]
    pub rate: f64,
    /// Uniform send-time jitter, ± milliseconds.
    #[arg(long, default_value_t = 0.0)]
    pub jitter_ms: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Connection attempts before giving up.
    #[arg(long, default_value_t = 5)]
    pub attempts: u32,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory with cameras.txt, images.txt and points3D.txt.
    #[arg(long)]
    pub colmap: PathBuf,
    /// Image directory; defaults to `<colmap>/images`.
    #[arg(long)]
    pub images: Option<PathBuf>,
    /// Output model (.splm, or .ply for the reference layout).
    #[arg(long)]
    pub out: PathBuf,
    /// Hold out every N-th view for evaluation; 0 disables.
    #[arg(long, default_value_t = 8)]
    pub holdout_every: usize,
    /// Print a metric line every N iterations.
    #[arg(long, default_value_t = 1000)]
    pub metric_interval: u64,
    /// Per-view held-out metric report.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub settings: TrainSettings,
}

#[derive(Debug, Args)]
pub struct LiveArgs {
    /// COLMAP model supplying camera poses (matched by timestamp) and,
    /// without --model, the seed points.
    #[arg(long)]
    pub colmap: Option<PathBuf>,
    /// Initial model.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Final model, written on shutdown.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, env = "SPST_BIND", default_value = "127.0.0.1:7400")]
    pub ingest_bind: String,
    #[arg(long, env = "SPLATSTREAM_SERVE_BIND", default_value = "127.0.0.1:7500")]
    pub serve_bind: String,
    /// `none`, `uniform:N` or `adaptive:PIXEL,DEGREES`.
    #[arg(long, default_value = "none")]
    pub decimate: String,
    /// Optimizer iterations per accepted frame.
    #[arg(long, default_value_t = 20)]
    pub budget: u64,
    /// Telemetry alignment window, milliseconds.
    #[arg(long, default_value_t = 50.0)]
    pub window_ms: f64,
    /// Largest frame-to-pose timestamp distance, milliseconds.
    #[arg(long, default_value_t = 20.0)]
    pub pose_tolerance_ms: f64,
    /// Publish frames straight through without optimizing.
    #[arg(long)]
    pub bypass_training: bool,
    /// Warn after this many seconds without frames.
    #[arg(long, default_value_t = 30)]
    pub idle_warn_secs: u64,
    /// Exit once every session has ended and this many seconds pass idle.
    #[arg(long)]
    pub exit_after_idle_secs: Option<u64>,
    /// Arrival-to-publish latency per update.
    #[arg(long)]
    pub latency_report: Option<PathBuf>,
    #[command(flatten)]
    pub settings: TrainSettings,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// COLMAP model whose images are rendered.
    #[arg(long, conflicts_with = "poses")]
    pub colmap: Option<PathBuf>,
    /// Pose list, one view per line:
    /// `name qw qx qy qz tx ty tz fx fy cx cy width height` (world to camera).
    #[arg(long)]
    pub poses: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Background color `r,g,b` in [0, 1].
    #[arg(long, default_value = "0,0,0")]
    pub background: String,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, env = "SPLATSTREAM_SERVE_BIND", default_value = "127.0.0.1:7500")]
    pub bind: String,
    /// ROI grid cell size; 0 derives it from the model extent.
    #[arg(long, default_value_t = 0.0)]
    pub cell_size: f32,
    /// Model file poll interval, milliseconds.
    #[arg(long, default_value_t = 500)]
    pub watch_ms: u64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Model to evaluate against the images of --colmap.
    #[arg(long, requires = "colmap")]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub colmap: Option<PathBuf>,
    #[arg(long)]
    pub images: Option<PathBuf>,
    /// Evaluate every N-th view only (the training hold-out); 0 = all.
    #[arg(long, default_value_t = 0)]
    pub holdout_every: usize,
    #[arg(long, default_value = "0,0,0")]
    pub background: String,
    /// Also write the per-view records to this file.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Summarize an existing per-view report instead.
    #[arg(long, conflicts_with_all = ["model", "trajectory"])]
    pub summarize: Option<PathBuf>,
    /// Estimated trajectory (COLMAP directory) for ATE/RPE.
    #[arg(long, requires = "reference", conflicts_with = "model")]
    pub trajectory: Option<PathBuf>,
    /// Reference trajectory (COLMAP directory).
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// RPE frame gap.
    #[arg(long, default_value_t = 1)]
    pub rpe_delta: usize,
}
