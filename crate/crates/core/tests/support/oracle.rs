//! Independent reference implementations used by the integration and
//! acceptance tests: a per-pixel brute-force compositor and a central
//! finite-difference gradient checker.

#![allow(dead_code)]

use nalgebra::Vector3;
use rand::Rng;

use splatstream_core::camera::{CameraIntrinsics, PoseSE3};
use splatstream_core::image::Image;
use splatstream_core::raster::{prepare_splats, render, RenderOptions, Scene};
use splatstream_core::sh::rgb_to_dc;
use splatstream_core::splat::{logit, sh_coeff_count, SplatParams};

pub struct RandomScene {
    pub params: Vec<SplatParams>,
    pub ids: Vec<u64>,
    pub pose: PoseSE3,
    pub k: CameraIntrinsics,
    pub opts: RenderOptions,
}

impl RandomScene {
    pub fn scene(&self) -> Scene<'_> {
        Scene {
            params: &self.params,
            ids: &self.ids,
        }
    }
}

pub struct SceneLimits {
    pub max_gaussians: usize,
    pub max_px: u32,
    pub opacity: (f64, f64),
}

fn unit_quat(rng: &mut impl Rng) -> [f64; 4] {
    loop {
        let q: [f64; 4] = [0; 4].map(|_| rng.gen_range(-1.0..1.0));
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.2 && n <= 1.0 {
            // leave it unnormalized on purpose: the renderer normalizes
            return q.map(|v| v / n * rng.gen_range(0.8..1.2));
        }
    }
}

/// Depth order is a discontinuity of the compositor; central differences
/// straddling a swap are meaningless, so splats keep at least this much
/// depth separation.
pub const MIN_DEPTH_GAP: f64 = 1e-3;

/// Gaussians in a unit ball around the origin seen from 3 to 5 units
/// away. Colors stay strictly positive so the color clamp never engages.
pub fn random_scene(rng: &mut impl Rng, lim: &SceneLimits) -> RandomScene {
    let n = rng.gen_range(1..=lim.max_gaussians);
    let w = rng.gen_range(16..=lim.max_px);
    let h = rng.gen_range(16..=lim.max_px);
    let degree: u8 = rng.gen_range(0..=3);
    let dist: f64 = rng.gen_range(3.0..5.0);
    let az: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let el: f64 = rng.gen_range(-1.0..1.0);
    let eye = Vector3::new(dist * el.cos() * az.cos(), dist * el.cos() * az.sin(), dist * el.sin());
    let target = Vector3::new(rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2));
    let pose = PoseSE3::look_at(eye, target, Vector3::new(0.0, 0.0, 1.0)).unwrap();
    let f = 1.6 * w.max(h) as f64 * rng.gen_range(0.8..1.2);
    let k = CameraIntrinsics::new(
        f,
        f * rng.gen_range(0.9..1.1),
        w as f64 / 2.0 + rng.gen_range(-2.0..2.0),
        h as f64 / 2.0 + rng.gen_range(-2.0..2.0),
        w,
        h,
    )
    .unwrap();
    let mut depths: Vec<f64> = Vec::with_capacity(n);
    let params = (0..n)
        .map(|_| {
            let position = loop {
                let p = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
                let z = pose.transform_point(&p).z;
                if p.norm() <= 1.0 && depths.iter().all(|d| (d - z).abs() >= MIN_DEPTH_GAP) {
                    depths.push(z);
                    break [p.x, p.y, p.z];
                }
            };
            let mut sh = vec![0.0; 3 * sh_coeff_count(degree)];
            for c in 0..3 {
                sh[c] = rgb_to_dc(rng.gen_range(0.25..0.9));
            }
            for v in sh.iter_mut().skip(3) {
                *v = rng.gen_range(-0.02..0.02);
            }
            SplatParams {
                position,
                rotation: unit_quat(rng),
                log_scale: [0; 3].map(|_| rng.gen_range(0.03f64..0.25).ln()),
                opacity_logit: logit(rng.gen_range(lim.opacity.0..=lim.opacity.1)),
                sh,
            }
        })
        .collect();
    let mut ids: Vec<u64> = (0..n as u64).map(|i| i * 3 + 7).collect();
    // ids are not in storage order
    ids.reverse();
    let background = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
    RandomScene {
        params,
        ids,
        pose,
        k,
        opts: RenderOptions::with_background(background),
    }
}

const ORACLE_CUTOFF_Q: f64 = 49.0;
const ORACLE_MAX_ALPHA: f64 = 0.999;
const ORACLE_MIN_T: f64 = 1e-4;

/// Per-pixel compositor: every projected splat, sorted by (depth, id),
/// evaluated at every pixel center with no tiling or bounding boxes.
pub fn brute_force(s: &RandomScene) -> (Image, Vec<f64>) {
    let mut splats: Vec<_> = prepare_splats(&s.scene(), &s.pose, &s.k, &s.opts)
        .unwrap()
        .into_iter()
        .flatten()
        .collect();
    splats.sort_by(|a, b| a.depth.partial_cmp(&b.depth).unwrap().then(a.id.cmp(&b.id)));
    let (w, h) = (s.k.width as usize, s.k.height as usize);
    let mut img = Image::new(w, h);
    let mut alpha = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut t = 1.0;
            let mut c = [0.0; 3];
            for sp in &splats {
                // invert cov2d directly rather than trusting the stored conic
                let m = sp.cov2d.try_inverse().unwrap();
                let d = nalgebra::Vector2::new(px - sp.mean2d[0], py - sp.mean2d[1]);
                let q = (d.transpose() * m * d)[0];
                if q > ORACLE_CUTOFF_Q {
                    continue;
                }
                let a = (sp.opacity * (-0.5 * q).exp()).min(ORACLE_MAX_ALPHA);
                for ch in 0..3 {
                    c[ch] += sp.color[ch] * a * t;
                }
                t *= 1.0 - a;
                if t < ORACLE_MIN_T {
                    break;
                }
            }
            let bg = s.opts.background;
            img.set_pixel(x, y, [c[0] + t * bg[0], c[1] + t * bg[1], c[2] + t * bg[2]]);
            alpha[y * w + x] = 1.0 - t;
        }
    }
    (img, alpha)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn random_upstream(rng: &mut impl Rng, k: &CameraIntrinsics) -> Image {
    Image::from_fn(k.width as usize, k.height as usize, |_, _| {
        [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]
    })
}

fn objective(s: &RandomScene, params: &[SplatParams], upstream: &Image) -> f64 {
    let scene = Scene { params, ids: &s.ids };
    let img = render(&scene, &s.pose, &s.k, &s.opts).unwrap().image;
    img.data().iter().zip(upstream.data()).map(|(a, b)| a * b).sum()
}

#[derive(Debug, Default)]
pub struct FdReport {
    pub checked: usize,
    pub failures: Vec<String>,
    pub worst_abs: f64,
}

/// Compare every analytic partial against central differences of
/// `⟨upstream, render⟩`.
pub fn fd_check(s: &RandomScene, analytic: &[SplatParams], upstream: &Image, eps: f64, rel: f64, abs: f64) -> FdReport {
    let mut report = FdReport::default();
    let mut params = s.params.clone();
    for i in 0..params.len() {
        for j in 0..params[i].len() {
            let x0 = params[i].get(j);
            *params[i].get_mut(j) = x0 + eps;
            let fp = objective(s, &params, upstream);
            *params[i].get_mut(j) = x0 - eps;
            let fm = objective(s, &params, upstream);
            *params[i].get_mut(j) = x0;
            let num = (fp - fm) / (2.0 * eps);
            let an = analytic[i].get(j);
            let err = (num - an).abs();
            report.checked += 1;
            report.worst_abs = report.worst_abs.max(err);
            if !(err <= abs || err <= rel * num.abs().max(an.abs())) {
                report
                    .failures
                    .push(format!("gaussian {i} param {j}: analytic {an:e} numeric {num:e}"));
            }
        }
    }
    report
}
