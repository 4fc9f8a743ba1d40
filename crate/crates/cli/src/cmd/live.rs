use std::io::Write;
use std::sync::atomic::AtomicBool;
use std::time::Duration;

use splatstream_core::pose::colmap::import_colmap;
use splatstream_core::train::init_from_points;

use crate::args::LiveArgs;
use crate::cmd::{emit, load_model, save_model};
use crate::dataset::{seeds_from, write_text_atomic};
use crate::error::{CliError, CliResult};
use crate::pipeline::{latency_report, parse_decimation, LiveConfig, LivePipeline};
use crate::settings::Layers;

fn ms(v: f64, what: &str) -> CliResult<u64> {
    if !(v >= 0.0 && v.is_finite()) {
        return Err(CliError::input(format!("{what} must be a non-negative number of milliseconds")));
    }
    Ok((v * 1e6).round() as u64)
}

pub fn run(a: &LiveArgs, stop: &AtomicBool, out: &mut dyn Write) -> CliResult<()> {
    let train = Layers::load(a.settings.config.as_deref(), &a.settings.flag_overrides())?.resolve(a.settings.profile)?;
    let import = a.colmap.as_deref().map(import_colmap).transpose()?;
    let cloud = match (&a.model, &import) {
        (Some(m), _) => load_model(m)?,
        (None, Some(i)) => init_from_points(&seeds_from(i), &train)?,
        (None, None) => return Err(CliError::input("give --model or --colmap")),
    };
    let mut cfg = LiveConfig {
        decimation: parse_decimation(&a.decimate)?,
        budget_iters: a.budget,
        pose_tolerance_ns: ms(a.pose_tolerance_ms, "pose tolerance")?,
        bypass_training: a.bypass_training,
        idle_warning: Duration::from_secs(a.idle_warn_secs),
        ..LiveConfig::default()
    };
    cfg.ingest.window_ns = ms(a.window_ms, "window")?;
    let poses = import.map(|i| i.poses);
    let mut pipeline = LivePipeline::new(&a.ingest_bind, &a.serve_bind, cloud, train, poses, cfg)?;
    emit(
        out,
        format!("live ingest={} serve={}", pipeline.ingest_addr()?, pipeline.delivery_addr()),
    );
    let result = pipeline.run(stop, a.exit_after_idle_secs.map(Duration::from_secs));
    let (cloud, stats, latency) = pipeline.into_parts();
    // whatever happened, leave the last good model behind
    save_model(&cloud, &a.out)?;
    if let Some(path) = &a.latency_report {
        write_text_atomic(path, &latency_report(&latency))?;
    }
    emit(
        out,
        format!(
            "sessions={} frames={} updates={} align_failed={} decimated={} no_pose={} bad_frames={} idle_warnings={} revision={}",
            stats.sessions,
            stats.frames,
            stats.updates,
            stats.align_failed,
            stats.decimated,
            stats.no_pose,
            stats.bad_frames,
            stats.idle_warnings,
            cloud.revision()
        ),
    );
    result?;
    if stats.diverged {
        return Err(CliError::runtime(format!(
            "training diverged; last good revision {} saved to {}",
            cloud.revision(),
            a.out.display()
        )));
    }
    Ok(())
}
