use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;
use splatstream_core::camera::{CameraIntrinsics, PoseSE3};
use splatstream_core::pose::colmap::import_colmap;
use splatstream_core::raster::rasterize;

use crate::args::RenderArgs;
use crate::cmd::{emit, load_model, parse_rgb};
use crate::dataset::write_png_atomic;
use crate::error::{CliError, CliResult};

pub struct PoseView {
    pub name: String,
    pub pose: PoseSE3,
    pub intrinsics: CameraIntrinsics,
}

/// `name qw qx qy qz tx ty tz fx fy cx cy width height` per line.
pub fn parse_pose_list(path: &Path) -> CliResult<Vec<PoseView>> {
    if !path.exists() {
        return Err(splatstream_core::Error::MissingFile(path.to_path_buf()).into());
    }
    let text = std::fs::read_to_string(path)?;
    let mut out = vec![];
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |m: &str| CliError::input(format!("{}:{}: {m}", path.display(), i + 1));
        let tok: Vec<&str> = line.split_whitespace().collect();
        if tok.len() != 14 {
            return Err(bad("expected 14 fields"));
        }
        let num: Vec<f64> = tok[1..12]
            .iter()
            .map(|t| t.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| bad("bad number"))?;
        let w: u32 = tok[12].parse().map_err(|_| bad("bad width"))?;
        let h: u32 = tok[13].parse().map_err(|_| bad("bad height"))?;
        let pose = PoseSE3::from_quaternion([num[0], num[1], num[2], num[3]], Vector3::new(num[4], num[5], num[6]), 0)
            .map_err(|e| bad(&e.to_string()))?;
        let intrinsics = CameraIntrinsics::new(num[7], num[8], num[9], num[10], w, h).map_err(|e| bad(&e.to_string()))?;
        out.push(PoseView {
            name: tok[0].to_string(),
            pose,
            intrinsics,
        });
    }
    Ok(out)
}

pub fn run(a: &RenderArgs, out: &mut dyn Write) -> CliResult<()> {
    let cloud = load_model(&a.model)?;
    let background = parse_rgb(&a.background)?;
    let views = match (&a.colmap, &a.poses) {
        (Some(dir), None) => {
            let import = import_colmap(dir)?;
            import
                .poses
                .entries
                .iter()
                .map(|e| {
                    let k = import.poses.intrinsics_for(e).copied();
                    k.map(|intrinsics| PoseView {
                        name: e.name.clone(),
                        pose: e.pose,
                        intrinsics,
                    })
                    .ok_or_else(|| CliError::input(format!("image `{}` has no camera", e.name)))
                })
                .collect::<CliResult<Vec<_>>>()?
        }
        (None, Some(list)) => parse_pose_list(list)?,
        _ => return Err(CliError::input("give exactly one of --colmap or --poses")),
    };
    std::fs::create_dir_all(&a.out)?;
    let mut names = BTreeSet::new();
    for v in &views {
        let stem = Path::new(&v.name).file_stem().and_then(|s| s.to_str()).unwrap_or(&v.name);
        let file = format!("{stem}.png");
        if !names.insert(file.clone()) {
            return Err(CliError::input(format!("two views render to {file}")));
        }
        let img = rasterize(&cloud, &v.pose, &v.intrinsics, background).image;
        write_png_atomic(&img, &a.out.join(&file))?;
    }
    emit(out, format!("rendered views={} out={}", views.len(), a.out.display()));
    Ok(())
}
