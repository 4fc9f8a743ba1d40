use std::io::Write;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Instant;

use splatstream_core::metrics::{psnr, ssim, MetricSeries, ViewMetric};
use splatstream_core::train::{init_from_points, TrainState, TrainView};

use crate::args::TrainArgs;
use crate::cmd::{emit, save_model};
use crate::dataset::{load_dataset, split_views, write_text_atomic};
use crate::error::{CliError, CliResult};
use crate::settings::Layers;

fn mean_psnr(state: &TrainState, views: &[TrainView]) -> f64 {
    let v: Vec<f64> = views
        .iter()
        .filter_map(|v| {
            let img = state.render_view(&v.pose, &v.intrinsics).ok()?;
            psnr(&img, &v.image, 1.0).ok()
        })
        .collect();
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

pub fn evaluate(state: &TrainState, views: &[TrainView]) -> CliResult<MetricSeries> {
    let mut series = MetricSeries::new();
    for v in views {
        let img = state.render_view(&v.pose, &v.intrinsics)?;
        series.push(ViewMetric {
            view: v.name.clone(),
            psnr: psnr(&img, &v.image, 1.0)?,
            ssim: ssim(&img, &v.image)?,
        });
    }
    Ok(series)
}

pub fn summary_line(s: &MetricSeries) -> String {
    format!(
        "summary views={} mean_psnr={:.4} mean_ssim={:.6}",
        s.len(),
        s.mean_psnr(),
        s.mean_ssim()
    )
}

pub fn run(a: &TrainArgs, stop: &AtomicBool, out: &mut dyn Write) -> CliResult<()> {
    let cfg = Layers::load(a.settings.config.as_deref(), &a.settings.flag_overrides())?.resolve(a.settings.profile)?;
    let data = load_dataset(&a.colmap, a.images.as_deref())?;
    let (train, held) = split_views(data.views, a.holdout_every)?;
    if train.is_empty() {
        return Err(CliError::input("no training views"));
    }
    let monitor: &[TrainView] = if held.is_empty() { &train } else { &held };
    let label = if held.is_empty() { "train_psnr" } else { "heldout_psnr" };
    let interval = a.metric_interval.max(1);

    let mut state = TrainState::new(init_from_points(&data.seeds, &cfg)?, cfg.clone())?;
    let start = Instant::now();
    emit(
        out,
        format!(
            "iter=0 gaussians={} {label}={:.4}",
            state.cloud().len(),
            mean_psnr(&state, monitor)
        ),
    );
    let mut interrupted = false;
    state.train_while(&train, |st, loss| {
        let it = st.iteration();
        if it % interval == 0 || it == cfg.iterations {
            emit(
                out,
                format!(
                    "iter={it} loss={loss:.6} loss_ma={:.6} gaussians={} {label}={:.4} elapsed_s={:.1}",
                    st.loss_moving_average().unwrap_or(loss),
                    st.cloud().len(),
                    mean_psnr(st, monitor),
                    start.elapsed().as_secs_f64()
                ),
            );
        }
        interrupted = stop.load(Ordering::Relaxed);
        !interrupted
    })?;

    let iteration = state.iteration();
    let metrics = if held.is_empty() { None } else { Some(evaluate(&state, &held)?) };
    let cloud = state.into_cloud();
    let bytes = save_model(&cloud, &a.out)?;
    emit(
        out,
        format!("saved model={} gaussians={} bytes={bytes}", a.out.display(), cloud.len()),
    );
    if let Some(m) = &metrics {
        for r in m.records() {
            emit(out, r);
        }
        emit(out, summary_line(m));
        if let Some(path) = &a.report {
            write_text_atomic(path, &m.to_report())?;
        }
    }
    if interrupted {
        return Err(CliError::Interrupted(format!(
            " at iteration {iteration}; model saved to {}",
            a.out.display()
        )));
    }
    Ok(())
}
