use std::path::{Path, PathBuf};

use splatstream_core::camera::CameraIntrinsics;
use splatstream_core::pose::colmap::{import_colmap, ColmapImport, PoseSequence};
use splatstream_core::store::splm::write_atomic;
use splatstream_core::train::{SeedPoint, TrainView};
use splatstream_core::Image;

use crate::error::{CliError, CliResult};

/// Posed images plus seed points from a COLMAP text model.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub poses: PoseSequence,
    pub views: Vec<TrainView>,
    pub seeds: Vec<SeedPoint>,
}

pub fn default_images_dir(colmap: &Path) -> PathBuf {
    colmap.join("images")
}

pub fn seeds_from(import: &ColmapImport) -> Vec<SeedPoint> {
    import
        .points
        .iter()
        .map(|p| SeedPoint {
            xyz: p.xyz,
            rgb: p.rgb.map(|c| c as f64 / 255.0),
        })
        .collect()
}

/// Intrinsics matched to an image that may have been downsampled by a
/// power of two.
pub fn fit_intrinsics(k: &CameraIntrinsics, width: usize, height: usize) -> Option<CameraIntrinsics> {
    let mut k = *k;
    for _ in 0..8 {
        if k.width as usize == width && k.height as usize == height {
            return Some(k);
        }
        if (k.width as usize) < width || k.width % 2 != 0 || k.height % 2 != 0 {
            return None;
        }
        k = k.scaled(0.5);
    }
    None
}

pub fn load_dataset(colmap: &Path, images: Option<&Path>) -> CliResult<Dataset> {
    let import = import_colmap(colmap)?;
    let images = images.map_or_else(|| default_images_dir(colmap), Path::to_path_buf);
    let mut views = Vec::with_capacity(import.poses.len());
    for e in &import.poses.entries {
        let path = images.join(&e.name);
        let image = Image::load_png(&path)?;
        let k = import
            .poses
            .intrinsics_for(e)
            .ok_or_else(|| CliError::input(format!("image `{}` has no camera", e.name)))?;
        let intrinsics = fit_intrinsics(k, image.width(), image.height()).ok_or_else(|| {
            CliError::input(format!(
                "{}: image is {}x{}, camera {} is {}x{}",
                path.display(),
                image.width(),
                image.height(),
                e.camera_id,
                k.width,
                k.height
            ))
        })?;
        views.push(TrainView {
            name: e.name.clone(),
            pose: e.pose,
            intrinsics,
            image,
        });
    }
    Ok(Dataset {
        seeds: seeds_from(&import),
        poses: import.poses,
        views,
    })
}

/// Every `every`-th view (index 0, every, 2·every, …) is held out;
/// `every = 0` holds out nothing.
pub fn split_views(views: Vec<TrainView>, every: usize) -> CliResult<(Vec<TrainView>, Vec<TrainView>)> {
    if every == 0 {
        return Ok((views, vec![]));
    }
    let (held, train): (Vec<_>, Vec<_>) = views.into_iter().enumerate().partition(|(i, _)| i % every == 0);
    if train.is_empty() {
        return Err(CliError::input("hold-out leaves no training views"));
    }
    Ok((train.into_iter().map(|x| x.1).collect(), held.into_iter().map(|x| x.1).collect()))
}

pub fn write_png_atomic(image: &Image, path: &Path) -> CliResult<()> {
    write_atomic(path, &image.encode_png()?)?;
    Ok(())
}

/// Write a text file via temp-then-rename.
pub fn write_text_atomic(path: &Path, text: &str) -> CliResult<()> {
    write_atomic(path, text.as_bytes())?;
    Ok(())
}
