//! Checks on the toy PLY written by the original 3DGS training code's
//! `save_ply` layout (see fixtures/make_toy_3dgs_ply.py).

#![allow(dead_code)]

use std::path::PathBuf;

use nalgebra::Vector3;
use splatstream_core::camera::{CameraIntrinsics, PoseSE3};
use splatstream_core::raster::rasterize;
use splatstream_core::store::ply;

pub fn toy_ply_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/toy_3dgs.ply")
}

fn body(bytes: &[u8]) -> &[u8] {
    let end = bytes.windows(11).position(|w| w == b"end_header\n").expect("header") + 11;
    &bytes[end..]
}

/// Import, validate, render from eight sides, and check that re-export
/// reproduces the vertex data byte for byte.
pub fn check_toy_ply() -> Result<String, String> {
    let path = toy_ply_path();
    let cloud = ply::import_ply(&path).map_err(|e| format!("import: {e}"))?;
    cloud.validate().map_err(|e| format!("validate: {e}"))?;
    if cloud.len() != 96 || cloud.sh_degree() != 3 {
        return Err(format!("{} gaussians at degree {}", cloud.len(), cloud.sh_degree()));
    }
    let k = CameraIntrinsics::simple(70.0, 64, 64).map_err(|e| e.to_string())?;
    let mut covered = 0.0;
    for i in 0..8 {
        let a = i as f64 * std::f64::consts::TAU / 8.0;
        let eye = Vector3::new(2.5 * a.cos(), 2.5 * a.sin(), 0.8);
        let pose = PoseSE3::look_at(eye, Vector3::zeros(), Vector3::z()).map_err(|e| e.to_string())?;
        let r = rasterize(&cloud, &pose, &k, [0.0; 3]);
        if !r.image.data().iter().all(|v| v.is_finite()) {
            return Err(format!("non-finite pixels from view {i}"));
        }
        covered += r.alpha.iter().sum::<f64>() / r.alpha.len() as f64;
    }
    if covered / 8.0 < 0.05 {
        return Err(format!("mean coverage {:.3}", covered / 8.0));
    }
    let original = std::fs::read(&path).map_err(|e| e.to_string())?;
    if body(&ply::to_bytes(&cloud)) != body(&original) {
        return Err("re-exported vertex data differs".into());
    }
    Ok(format!("{} gaussians, degree {}, mean coverage {:.3}", cloud.len(), cloud.sh_degree(), covered / 8.0))
}
