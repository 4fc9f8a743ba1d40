use std::io::Write;

use splatstream_core::metrics::{psnr, ssim, MetricSeries, ViewMetric};
use splatstream_core::pose::colmap::import_colmap;
use splatstream_core::pose::trajectory::{ate, rpe};
use splatstream_core::raster::rasterize;

use crate::args::EvalArgs;
use crate::cmd::train::summary_line;
use crate::cmd::{emit, load_model, parse_rgb};
use crate::dataset::{load_dataset, write_text_atomic};
use crate::error::{CliError, CliResult};

pub fn run(a: &EvalArgs, out: &mut dyn Write) -> CliResult<()> {
    if let Some(path) = &a.summarize {
        if !path.exists() {
            return Err(splatstream_core::Error::MissingFile(path.clone()).into());
        }
        let series = MetricSeries::parse_report(&std::fs::read_to_string(path)?)?;
        emit(out, summary_line(&series));
        return Ok(());
    }
    if let Some(est) = &a.trajectory {
        let reference = a.reference.as_ref().ok_or_else(|| CliError::input("--trajectory needs --reference"))?;
        let est = import_colmap(est)?.poses;
        let reference = import_colmap(reference)?.poses;
        let t = ate(&est, &reference)?;
        let r = rpe(&est, &reference, a.rpe_delta)?;
        emit(
            out,
            format!(
                "ate_rmse={:.9} ate_mean={:.9} ate_median={:.9} pairs={} rpe_trans_rmse={:.9} rpe_rot_rmse_deg={:.9}",
                t.rmse, t.mean, t.median, t.pairs, r.trans_rmse, r.rot_rmse
            ),
        );
        return Ok(());
    }
    let (Some(model), Some(colmap)) = (&a.model, &a.colmap) else {
        return Err(CliError::input("give --model with --colmap, --summarize, or --trajectory with --reference"));
    };
    let cloud = load_model(model)?;
    let background = parse_rgb(&a.background)?;
    let data = load_dataset(colmap, a.images.as_deref())?;
    let mut series = MetricSeries::new();
    for (i, v) in data.views.iter().enumerate() {
        if a.holdout_every > 0 && i % a.holdout_every != 0 {
            continue;
        }
        let img = rasterize(&cloud, &v.pose, &v.intrinsics, background).image;
        let m = ViewMetric {
            view: v.name.clone(),
            psnr: psnr(&img, &v.image, 1.0)?,
            ssim: ssim(&img, &v.image)?,
        };
        emit(out, &m);
        series.push(m);
    }
    emit(out, summary_line(&series));
    if let Some(path) = &a.report {
        write_text_atomic(path, &series.to_report())?;
    }
    Ok(())
}
