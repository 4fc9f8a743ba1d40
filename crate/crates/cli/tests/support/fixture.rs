//! Toy COLMAP datasets and helpers for running the `splatstream` binary.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use splatstream_core::pose::colmap::{export_colmap, PoseEntry, PoseSequence, SparsePoint};
use splatstream_core::synthetic::{degraded_seed_points, procedural_scene, SceneSpec, SyntheticScene};
use splatstream_core::Image;
use splatstream_stream::{Capture, FramePayload, GpsFix, Payload, TimedSample};

pub const FRAME_INTERVAL_NS: u64 = 100_000_000;
/// Offset of the first frame so timestamps read as plain integers.
pub const T0_NS: u64 = 1_000_000_000;

pub fn toy_scene(views: usize, size: u32) -> SyntheticScene {
    procedural_scene(&SceneSpec {
        gaussians: 30,
        views,
        width: size,
        height: size,
        focal: size as f64 * 0.9,
        seed: 21,
        ..SceneSpec::default()
    })
    .unwrap()
}

pub fn frame_ts(i: usize) -> u64 {
    T0_NS + i as u64 * FRAME_INTERVAL_NS
}

/// COLMAP text model plus `images/`. Image names are their timestamps in
/// nanoseconds; seed points are jittered ground-truth means.
pub fn write_dataset(dir: &Path, scene: &SyntheticScene) -> PathBuf {
    let images = dir.join("images");
    std::fs::create_dir_all(&images).unwrap();
    let k = scene.views[0].intrinsics;
    let entries = scene
        .views
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let name = format!("{}.png", frame_ts(i));
            v.image.save_png(&images.join(&name)).unwrap();
            PoseEntry {
                image_id: i as u32 + 1,
                camera_id: 1,
                name,
                pose: v.pose.with_timestamp(frame_ts(i)),
            }
        })
        .collect();
    let poses = PoseSequence {
        entries,
        cameras: BTreeMap::from([(1, k)]),
        convention: splatstream_core::pose::colmap::PoseConvention::WorldToCamera,
    };
    let points: Vec<SparsePoint> = degraded_seed_points(&scene.cloud, 4, 0.05)
        .into_iter()
        .enumerate()
        .map(|(i, s)| SparsePoint {
            id: i as u64 + 1,
            xyz: s.xyz,
            rgb: s.rgb.map(|c| (c * 255.0).round() as u8),
            error: 0.5,
            track: vec![],
        })
        .collect();
    export_colmap(dir, &poses, &points).unwrap();
    dir.to_path_buf()
}

/// Frames at the dataset timestamps with a GPS fix every 20 ms around them.
pub fn capture_for(frames: &[Image]) -> Capture {
    let mut samples = vec![];
    let end = frame_ts(frames.len());
    let mut t = T0_NS - 40_000_000;
    while t <= end {
        let s = t as f64 * 1e-9;
        samples.push(TimedSample::new(t, Payload::Gps(GpsFix::from_array([47.0 + s * 1e-5, 8.0, 400.0]))));
        t += 20_000_000;
    }
    for (i, img) in frames.iter().enumerate() {
        samples.push(TimedSample::new(
            frame_ts(i),
            Payload::Frame(FramePayload {
                seq: i as u32,
                png: Arc::new(img.encode_png().unwrap()),
            }),
        ));
    }
    samples.sort_by_key(|s| s.timestamp_ns);
    Capture { samples }
}

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_splatstream"))
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).env_remove("SPLATSTREAM_LOG").output().unwrap()
}

pub fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}
