//! Procedural scenes and camera rigs for fixtures, demos and tests.

use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::camera::{CameraIntrinsics, PoseSE3};
use crate::error::Result;
use crate::image::Image;
use crate::raster::rasterize;
use crate::sh::rgb_to_dc;
use crate::splat::{logit, sh_coeff_count, Gaussian3D, SplatCloud};
use crate::train::{SeedPoint, TrainConfig, TrainView};

/// Ranges used when drawing random Gaussians.
#[derive(Debug, Clone)]
pub struct GaussianRanges {
    pub center: [f64; 3],
    pub half_extent: [f64; 3],
    pub scale: (f64, f64),
    pub opacity: (f64, f64),
    pub color: (f64, f64),
    /// Magnitude bound for SH coefficients above the DC band.
    pub sh_rest: f64,
}

impl Default for GaussianRanges {
    fn default() -> Self {
        Self {
            center: [0.0; 3],
            half_extent: [1.0; 3],
            scale: (0.05, 0.2),
            opacity: (0.3, 0.9),
            color: (0.1, 0.9),
            sh_rest: 0.05,
        }
    }
}

fn random_unit_quat(rng: &mut impl Rng) -> [f32; 4] {
    loop {
        let q: [f64; 4] = [0; 4].map(|_| rng.gen_range(-1.0..1.0));
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.1 && n <= 1.0 {
            return q.map(|v| (v / n) as f32);
        }
    }
}

pub fn random_gaussian(rng: &mut impl Rng, degree: u8, r: &GaussianRanges) -> Gaussian3D {
    let position: [f32; 3] =
        std::array::from_fn(|i| (r.center[i] + rng.gen_range(-r.half_extent[i]..=r.half_extent[i])) as f32);
    let log_scale: [f32; 3] = [0; 3].map(|_| rng.gen_range(r.scale.0..=r.scale.1).ln() as f32);
    let mut sh = vec![0.0f32; 3 * sh_coeff_count(degree)];
    for c in 0..3 {
        sh[c] = rgb_to_dc(rng.gen_range(r.color.0..=r.color.1)) as f32;
    }
    for v in sh.iter_mut().skip(3) {
        *v = rng.gen_range(-r.sh_rest..=r.sh_rest) as f32;
    }
    Gaussian3D {
        id: 0,
        position,
        rotation: random_unit_quat(rng),
        log_scale,
        sh,
        opacity_logit: logit(rng.gen_range(r.opacity.0..=r.opacity.1)) as f32,
    }
}

pub fn random_cloud(rng: &mut impl Rng, n: usize, degree: u8, ranges: &GaussianRanges) -> SplatCloud {
    let mut cloud = SplatCloud::new(degree).expect("degree within range");
    cloud
        .extend_new((0..n).map(|_| random_gaussian(rng, degree, ranges)))
        .expect("sh length matches degree");
    cloud
}

/// Cameras on a ring around `target`, all looking at it, with image +y
/// pointing towards world -z... i.e. world +z is up.
pub fn orbit_poses(count: usize, radius: f64, height: f64, target: Vector3<f64>, phase: f64) -> Vec<PoseSE3> {
    (0..count)
        .map(|i| {
            let a = phase + std::f64::consts::TAU * i as f64 / count as f64;
            let eye = target + Vector3::new(radius * a.cos(), radius * a.sin(), height);
            PoseSE3::look_at(eye, target, Vector3::new(0.0, 0.0, 1.0))
                .expect("orbit eye never coincides with target")
                .with_timestamp(i as u64 * 33_333_333)
        })
        .collect()
}

/// Ground-truth cloud with rendered views.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub cloud: SplatCloud,
    pub views: Vec<TrainView>,
    pub background: [f64; 3],
}

#[derive(Debug, Clone)]
pub struct SceneSpec {
    pub seed: u64,
    pub gaussians: usize,
    pub views: usize,
    pub width: u32,
    pub height: u32,
    pub sh_degree: u8,
    pub background: [f64; 3],
    pub ranges: GaussianRanges,
    pub orbit_radius: f64,
    pub orbit_height: f64,
    pub focal: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            gaussians: 200,
            views: 20,
            width: 128,
            height: 128,
            sh_degree: 0,
            background: [0.0; 3],
            ranges: GaussianRanges {
                half_extent: [0.8, 0.8, 0.5],
                scale: (0.06, 0.16),
                opacity: (0.5, 0.95),
                ..GaussianRanges::default()
            },
            orbit_radius: 3.5,
            orbit_height: 1.5,
            focal: 110.0,
        }
    }
}

pub fn procedural_scene(spec: &SceneSpec) -> Result<SyntheticScene> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let cloud = random_cloud(&mut rng, spec.gaussians, spec.sh_degree, &spec.ranges);
    let k = CameraIntrinsics::simple(spec.focal, spec.width, spec.height)?;
    let target = Vector3::from(spec.ranges.center);
    let views = orbit_poses(spec.views, spec.orbit_radius, spec.orbit_height, target, 0.0)
        .into_iter()
        .enumerate()
        .map(|(i, pose)| {
            // alternate elevation so the rig is not planar
            let pose = if i % 2 == 1 {
                let eye = pose.camera_center();
                let eye = Vector3::new(eye.x, eye.y, target.z - spec.orbit_height * 0.5);
                PoseSE3::look_at(eye, target, Vector3::new(0.0, 0.0, 1.0))
                    .expect("valid eye")
                    .with_timestamp(pose.timestamp_ns)
            } else {
                pose
            };
            let image = rasterize(&cloud, &pose, &k, spec.background).image;
            TrainView {
                name: format!("view_{i:03}"),
                pose,
                intrinsics: k,
                image,
            }
        })
        .collect();
    Ok(SyntheticScene {
        cloud,
        views,
        background: spec.background,
    })
}

/// Trainer settings for scenes of a few hundred Gaussians at ~128 px.
/// Small images give each splat a large share of the loss, so the default
/// densification threshold would grow the model tenfold; this raises the
/// threshold and ends densification (and with it opacity resets) early.
pub fn small_scene_config(iterations: u64, sh_degree: u8) -> TrainConfig {
    let mut c = TrainConfig::for_iterations(iterations);
    c.sh_degree = sh_degree;
    c.densify_grad_threshold = 1e-3;
    c.densify_stop = c.densify_stop.min(2500);
    c.fit_densify_window();
    c
}

/// Seed points from a ground-truth cloud: jittered positions and a
/// uniform gray, i.e. a deliberately poor starting point.
pub fn degraded_seed_points(cloud: &SplatCloud, seed: u64, jitter: f64) -> Vec<SeedPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    cloud
        .gaussians()
        .iter()
        .map(|g| SeedPoint {
            xyz: std::array::from_fn(|i| g.position[i] as f64 + rng.gen_range(-jitter..=jitter)),
            rgb: [0.5; 3],
        })
        .collect()
}

/// Render-only helper used by tooling: the image a cloud produces for a view.
pub fn render_view(cloud: &SplatCloud, view: &TrainView, background: [f64; 3]) -> Image {
    rasterize(cloud, &view.pose, &view.intrinsics, background).image
}
