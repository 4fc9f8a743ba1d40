//! Optimization of a [`SplatCloud`] against posed images.

pub mod config;

use std::collections::{HashMap, HashSet};

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rstar::primitives::GeomWithData;
use rstar::RTree;

pub use config::TrainConfig;

use crate::camera::{CameraIntrinsics, PoseSE3};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::loss::photometric_loss_weighted;
use crate::raster::{render, render_backward, GradientSet, RenderOptions, Scene};
use crate::sh::rgb_to_dc;
use crate::splat::{
    logit, quat_to_matrix, sh_coeff_count, sigmoid, Gaussian3D, SplatCloud, SplatParams, DEFAULT_DILATION, NEAR_PLANE,
};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-15;
pub const LOSS_WINDOW: usize = 100;
const SPLIT_CHILDREN: usize = 2;
const SPLIT_SCALE_DIVISOR: f64 = 1.6;
const INIT_OPACITY: f64 = 0.1;
const KNN: usize = 3;

/// Point used to seed Gaussians; `rgb` in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeedPoint {
    pub xyz: [f64; 3],
    pub rgb: [f64; 3],
}

/// A posed training image.
#[derive(Debug, Clone)]
pub struct TrainView {
    pub name: String,
    pub pose: PoseSE3,
    pub intrinsics: CameraIntrinsics,
    pub image: Image,
}

impl TrainView {
    pub fn validate(&self) -> Result<()> {
        self.pose.validate()?;
        self.intrinsics.validate()?;
        if self.image.width() != self.intrinsics.width as usize || self.image.height() != self.intrinsics.height as usize
        {
            return Err(Error::InvalidInput(format!(
                "view `{}`: image is {}x{}, camera is {}x{}",
                self.name,
                self.image.width(),
                self.image.height(),
                self.intrinsics.width,
                self.intrinsics.height
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DensifyReport {
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OnlineReport {
    pub affected: usize,
    pub iterations: u64,
    pub replayed: usize,
}

/// Mean distance from each point to its `KNN` nearest neighbours; `None`
/// when a point has no neighbours at all.
fn mean_knn_distance(points: &[[f64; 3]], queries: &[[f64; 3]]) -> Vec<Option<f64>> {
    let tree = RTree::bulk_load(
        points
            .iter()
            .enumerate()
            .map(|(i, p)| GeomWithData::new(*p, i))
            .collect::<Vec<_>>(),
    );
    queries
        .iter()
        .map(|q| {
            let mut d: Vec<f64> = tree
                .nearest_neighbor_iter_with_distance_2(q)
                .take(KNN + 1)
                .map(|(_, d2)| d2.sqrt())
                .collect();
            // the query itself is among the points: drop one zero distance
            if let Some(z) = d.iter().position(|&v| v == 0.0) {
                d.remove(z);
            }
            d.truncate(KNN);
            if d.is_empty() {
                None
            } else {
                Some(d.iter().sum::<f64>() / d.len() as f64)
            }
        })
        .collect()
}

const MIN_INIT_DISTANCE: f64 = 1e-7;

fn seed_gaussian(p: &SeedPoint, dist: Option<f64>, sh_degree: u8) -> Gaussian3D {
    let log_scale = dist.map_or(0.0, |d| d.max(MIN_INIT_DISTANCE).ln()) as f32;
    let mut sh = vec![0.0f32; 3 * sh_coeff_count(sh_degree)];
    for c in 0..3 {
        sh[c] = rgb_to_dc(p.rgb[c]) as f32;
    }
    Gaussian3D {
        id: 0,
        position: p.xyz.map(|v| v as f32),
        rotation: [1.0, 0.0, 0.0, 0.0],
        log_scale: [log_scale; 3],
        sh,
        opacity_logit: logit(INIT_OPACITY) as f32,
    }
}

/// One Gaussian per point: isotropic scale from the mean distance to the
/// three nearest neighbours, identity rotation, opacity 0.1.
pub fn init_from_points(points: &[SeedPoint], config: &TrainConfig) -> Result<SplatCloud> {
    if points.is_empty() {
        return Err(Error::InvalidInput("no seed points".into()));
    }
    let xyz: Vec<[f64; 3]> = points.iter().map(|p| p.xyz).collect();
    if xyz.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite seed point".into()));
    }
    let dists = mean_knn_distance(&xyz, &xyz);
    let mut cloud = SplatCloud::new(config.sh_degree)?;
    cloud.extend_new(points.iter().zip(dists).map(|(p, d)| seed_gaussian(p, d, config.sh_degree)))?;
    Ok(cloud)
}

fn zero_like(n: usize) -> Vec<f64> {
    vec![0.0; n]
}

/// Optimizer state for one cloud. Per-Gaussian arrays are parallel to
/// `cloud.gaussians()`.
#[derive(Debug, Clone)]
pub struct TrainState {
    cloud: SplatCloud,
    config: TrainConfig,
    exp_avg: Vec<Vec<f64>>,
    exp_avg_sq: Vec<Vec<f64>>,
    adam_step: u64,
    iteration: u64,
    losses: Vec<f64>,
    grad_accum: Vec<f64>,
    grad_count: Vec<u32>,
    max_radii: Vec<f64>,
    active_sh_degree: u8,
    extent: f64,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    order_pos: usize,
}

impl TrainState {
    pub fn new(cloud: SplatCloud, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        cloud.validate()?;
        let extent = cloud.extent();
        let extent = if extent > 0.0 && extent.is_finite() { extent } else { 1.0 };
        let n = cloud.len();
        let len = 11 + cloud.sh_len();
        Ok(Self {
            exp_avg: vec![zero_like(len); n],
            exp_avg_sq: vec![zero_like(len); n],
            adam_step: 0,
            iteration: 0,
            losses: Vec::new(),
            grad_accum: vec![0.0; n],
            grad_count: vec![0; n],
            max_radii: vec![0.0; n],
            active_sh_degree: 0,
            extent,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            order: Vec::new(),
            order_pos: 0,
            cloud,
            config,
        })
    }

    pub fn cloud(&self) -> &SplatCloud {
        &self.cloud
    }

    pub fn into_cloud(self) -> SplatCloud {
        self.cloud
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn extent(&self) -> f64 {
        self.extent
    }

    pub fn active_sh_degree(&self) -> u8 {
        self.active_sh_degree
    }

    pub fn set_active_sh_degree(&mut self, degree: u8) {
        self.active_sh_degree = degree.min(self.cloud.sh_degree());
    }

    /// Per-iteration batch losses, oldest first.
    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    /// Mean of the last `LOSS_WINDOW` losses up to and including
    /// iteration `it` (1-based).
    pub fn loss_moving_average_at(&self, it: u64) -> Option<f64> {
        let end = (it as usize).min(self.losses.len());
        if end == 0 {
            return None;
        }
        let start = end.saturating_sub(LOSS_WINDOW);
        let w = &self.losses[start..end];
        Some(w.iter().sum::<f64>() / w.len() as f64)
    }

    pub fn loss_moving_average(&self) -> Option<f64> {
        self.loss_moving_average_at(self.iteration)
    }

    /// Accumulated densification statistics: mean screen-space gradient
    /// norm per Gaussian.
    pub fn mean_grad_stats(&self) -> Vec<f64> {
        self.grad_accum
            .iter()
            .zip(&self.grad_count)
            .map(|(a, &c)| if c > 0 { a / c as f64 } else { 0.0 })
            .collect()
    }

    /// Overwrite densification statistics for Gaussian at `index`, as if
    /// it had been observed `count` times with the given mean gradient.
    pub fn set_grad_stats(&mut self, index: usize, mean_grad: f64, count: u32, max_radius: f64) {
        self.grad_accum[index] = mean_grad * count as f64;
        self.grad_count[index] = count;
        self.max_radii[index] = max_radius;
    }

    fn position_lr(&self, step: u64) -> f64 {
        let c = &self.config;
        let t = (step as f64 / c.lr_position_max_steps as f64).clamp(0.0, 1.0);
        let lr = ((1.0 - t) * c.lr_position_init.ln() + t * c.lr_position_final.ln()).exp();
        let scale = if c.position_lr_scale > 0.0 { c.position_lr_scale } else { self.extent };
        lr * scale
    }

    fn lr_for_index(&self, j: usize, pos_lr: f64) -> f64 {
        let c = &self.config;
        match j {
            0..=2 => pos_lr,
            3..=6 => c.lr_rotation,
            7..=9 => c.lr_scale,
            10 => c.lr_opacity,
            11..=13 => c.lr_sh,
            _ => c.lr_sh / c.sh_rest_lr_divisor,
        }
    }

    fn render_options(&self) -> RenderOptions {
        RenderOptions {
            background: self.config.background,
            sh_degree: Some(self.active_sh_degree),
            dilation: DEFAULT_DILATION,
        }
    }

    /// Render the current cloud with training settings.
    pub fn render_view(&self, pose: &PoseSE3, k: &CameraIntrinsics) -> Result<Image> {
        let params = self.cloud.params();
        let ids = self.cloud.ids();
        let scene = Scene {
            params: &params,
            ids: &ids,
        };
        Ok(render(&scene, pose, k, &self.render_options())?.image)
    }

    /// One optimization step over `batch`. Returns the mean batch loss.
    pub fn train_step(&mut self, batch: &[&TrainView]) -> Result<f64> {
        self.step_masked(batch, None)
    }

    /// Mean batch loss with the batch-averaged parameter gradients and the
    /// per-view gradient sets (for densification statistics).
    pub fn compute_gradients(&self, batch: &[&TrainView]) -> Result<(f64, GradientSet, Vec<GradientSet>)> {
        if batch.is_empty() {
            return Err(Error::InvalidInput("empty training batch".into()));
        }
        for v in batch {
            v.validate()?;
        }
        let params = self.cloud.params();
        let ids = self.cloud.ids();
        let scene = Scene {
            params: &params,
            ids: &ids,
        };
        let opts = self.render_options();
        let weight = 1.0 / batch.len() as f64;
        let mut total = GradientSet::zeros(&params, &ids);
        let mut loss_sum = 0.0;
        let mut per_view = Vec::with_capacity(batch.len());
        for v in batch {
            let rendered = render(&scene, &v.pose, &v.intrinsics, &opts)?;
            let loss = photometric_loss_weighted(&rendered.image, &v.image, self.config.ssim_weight)?;
            if !loss.value.is_finite() {
                return Err(Error::TrainingDiverged {
                    iteration: self.iteration + 1,
                });
            }
            loss_sum += loss.value;
            let g = render_backward(&scene, &v.pose, &v.intrinsics, &opts, &loss.grad)?;
            total.accumulate(&g, weight);
            per_view.push(g);
        }
        let loss = loss_sum * weight;
        if !loss.is_finite() || !total.is_finite() {
            return Err(Error::TrainingDiverged {
                iteration: self.iteration + 1,
            });
        }
        Ok((loss, total, per_view))
    }

    fn step_masked(&mut self, batch: &[&TrainView], trainable: Option<&[bool]>) -> Result<f64> {
        let (loss, total, per_view) = self.compute_gradients(batch)?;
        let params = self.cloud.params();
        for g in &per_view {
            for i in 0..g.len() {
                if g.visible[i] {
                    self.grad_accum[i] += g.mean2d_grad_norm[i];
                    self.grad_count[i] += 1;
                    self.max_radii[i] = self.max_radii[i].max(g.radius_px[i]);
                }
            }
        }

        self.adam_step += 1;
        let t = self.adam_step as i32;
        let bc1 = 1.0 - BETA1.powi(t);
        let bc2 = 1.0 - BETA2.powi(t);
        let pos_lr = self.position_lr(self.adam_step);
        let lrs: Vec<f64> = (0..params.first().map_or(0, SplatParams::len))
            .map(|j| self.lr_for_index(j, pos_lr))
            .collect();
        let gaussians = self.cloud.gaussians_mut();
        for (i, (p, grad)) in params.iter().zip(&total.grads).enumerate() {
            if trainable.is_some_and(|m| !m[i]) {
                continue;
            }
            let m = &mut self.exp_avg[i];
            let v = &mut self.exp_avg_sq[i];
            let mut updated = p.clone();
            for (j, &lr) in lrs.iter().enumerate() {
                let g = grad.get(j);
                m[j] = BETA1 * m[j] + (1.0 - BETA1) * g;
                v[j] = BETA2 * v[j] + (1.0 - BETA2) * g * g;
                if lr == 0.0 {
                    continue;
                }
                let denom = (v[j] / bc2).sqrt() + ADAM_EPS;
                *updated.get_mut(j) -= lr * (m[j] / bc1) / denom;
            }
            write_params(&mut gaussians[i], &updated, p);
        }
        self.iteration += 1;
        self.losses.push(loss);
        Ok(loss)
    }

    fn next_batch<'v>(&mut self, views: &'v [TrainView]) -> Vec<&'v TrainView> {
        let b = self.config.batch_size;
        let mut out = Vec::with_capacity(b);
        while out.len() < b {
            if self.order_pos >= self.order.len() || self.order.len() != views.len() {
                self.order = (0..views.len()).collect();
                self.order.shuffle(&mut self.rng);
                self.order_pos = 0;
            }
            out.push(&views[self.order[self.order_pos]]);
            self.order_pos += 1;
        }
        out
    }

    /// Run scheduled training until `config.iterations`, calling
    /// `on_iteration(state, loss)` after every step.
    pub fn train(&mut self, views: &[TrainView], mut on_iteration: impl FnMut(&TrainState, f64)) -> Result<()> {
        self.train_while(views, |s, l| {
            on_iteration(s, l);
            true
        })
    }

    /// As [`train`](Self::train), stopping early once `on_iteration`
    /// returns false.
    pub fn train_while(&mut self, views: &[TrainView], mut on_iteration: impl FnMut(&TrainState, f64) -> bool) -> Result<()> {
        if views.is_empty() {
            return Err(Error::InvalidInput("no training views".into()));
        }
        while self.iteration < self.config.iterations {
            let batch = self.next_batch(views);
            let loss = self.train_step(&batch)?;
            self.after_step();
            if !on_iteration(self, loss) {
                break;
            }
        }
        Ok(())
    }

    /// Density control, opacity reset and SH promotion for the iteration
    /// just completed.
    fn after_step(&mut self) {
        let it = self.iteration;
        let c = &self.config;
        if it % c.sh_degree_promote_interval == 0 && self.active_sh_degree < self.cloud.sh_degree() {
            self.active_sh_degree += 1;
        }
        let in_window = it >= c.densify_start && it < c.densify_stop;
        if in_window && it % c.densify_interval == 0 {
            self.densify_and_prune();
        }
        let c = &self.config;
        if it < c.densify_stop && it % c.opacity_reset_interval == 0 {
            self.reset_opacity();
        }
    }

    /// Clamp every opacity to at most the reset value and clear its
    /// optimizer moments.
    pub fn reset_opacity(&mut self) {
        let cap = logit(self.config.opacity_reset_value) as f32;
        for g in self.cloud.gaussians_mut() {
            g.opacity_logit = g.opacity_logit.min(cap);
        }
        for (m, v) in self.exp_avg.iter_mut().zip(&mut self.exp_avg_sq) {
            m[10] = 0.0;
            v[10] = 0.0;
        }
    }

    /// Clone small and split large Gaussians with high screen-space
    /// gradient, then prune transparent and oversized ones.
    pub fn densify_and_prune(&mut self) -> DensifyReport {
        let c = self.config.clone();
        let grads = self.mean_grad_stats();
        let size_bound = c.percent_dense * self.extent;
        let mut report = DensifyReport::default();
        let mut new = Vec::new();
        let mut split_parents = HashSet::new();
        for (i, g) in self.cloud.gaussians().iter().enumerate() {
            if !(grads[i] >= c.densify_grad_threshold) {
                continue;
            }
            let scale = g.scale();
            let max_scale = scale.iter().cloned().fold(0.0, f64::max);
            if max_scale <= size_bound {
                new.push(g.clone());
                report.cloned += 1;
            } else {
                let r = quat_to_matrix(g.rotation.map(f64::from));
                for _ in 0..SPLIT_CHILDREN {
                    let local = Vector3::from_fn(|k, _| {
                        let z: f64 = StandardNormal.sample(&mut self.rng);
                        z * scale[k]
                    });
                    let offset = r * local;
                    let mut child = g.clone();
                    for k in 0..3 {
                        child.position[k] = (g.position[k] as f64 + offset[k]) as f32;
                        child.log_scale[k] = (g.log_scale[k] as f64 - SPLIT_SCALE_DIVISOR.ln()) as f32;
                    }
                    new.push(child);
                }
                split_parents.insert(g.id);
                report.split += 1;
            }
        }

        let size_culling = self.iteration > c.opacity_reset_interval;
        let world_bound = c.max_world_size * self.extent;
        let radii: HashMap<u64, f64> = self
            .cloud
            .ids()
            .into_iter()
            .zip(self.max_radii.iter().copied())
            .collect();
        let before = self.cloud.len();
        let moments: HashMap<u64, (Vec<f64>, Vec<f64>)> = self
            .cloud
            .ids()
            .into_iter()
            .zip(std::mem::take(&mut self.exp_avg).into_iter().zip(std::mem::take(&mut self.exp_avg_sq)))
            .collect();

        self.cloud.extend_new(new).expect("children share the parent sh length");
        let after_growth = self.cloud.len();
        self.cloud.retain(|g| {
            if split_parents.contains(&g.id) {
                return false;
            }
            let transparent = !(sigmoid(g.opacity_logit as f64) >= c.opacity_prune_threshold);
            let too_big = size_culling
                && (radii.get(&g.id).is_some_and(|&r| r > c.max_screen_size)
                    || g.scale().iter().any(|&s| s > world_bound));
            !(transparent || too_big)
        });
        report.pruned = after_growth - self.cloud.len() - split_parents.len();
        debug_assert!(self.cloud.len() + report.pruned + report.split == before + report.cloned + SPLIT_CHILDREN * report.split);

        let len = 11 + self.cloud.sh_len();
        let (m, v): (Vec<_>, Vec<_>) = self
            .cloud
            .ids()
            .iter()
            .map(|id| moments.get(id).cloned().unwrap_or_else(|| (zero_like(len), zero_like(len))))
            .unzip();
        self.exp_avg = m;
        self.exp_avg_sq = v;
        self.reset_stats();
        report
    }

    fn reset_stats(&mut self) {
        let n = self.cloud.len();
        self.grad_accum = vec![0.0; n];
        self.grad_count = vec![0; n];
        self.max_radii = vec![0.0; n];
    }

    /// Whether each Gaussian's mean projects inside any of `views`.
    pub fn frustum_mask(&self, views: &[TrainView]) -> Vec<bool> {
        self.cloud
            .gaussians()
            .iter()
            .map(|g| {
                let p = g.position_f64();
                views.iter().any(|v| in_frustum(&p, &v.pose, &v.intrinsics))
            })
            .collect()
    }

    /// Refine only the Gaussians seen by `new_views`, mixing in
    /// `prior_views` at `config.replay_fraction`. All other Gaussians stay
    /// bit-identical.
    pub fn online_update(&mut self, new_views: &[TrainView], prior_views: &[TrainView], budget_iters: u64) -> Result<OnlineReport> {
        if budget_iters == 0 {
            return Ok(OnlineReport::default());
        }
        if new_views.is_empty() {
            return Err(Error::InvalidInput("online update without new views".into()));
        }
        let mask = self.frustum_mask(new_views);
        let mut report = OnlineReport {
            affected: mask.iter().filter(|&&m| m).count(),
            ..OnlineReport::default()
        };
        for _ in 0..budget_iters {
            let mut batch = Vec::with_capacity(self.config.batch_size);
            for _ in 0..self.config.batch_size {
                if !prior_views.is_empty() && self.rng.gen::<f64>() < self.config.replay_fraction {
                    batch.push(&prior_views[self.rng.gen_range(0..prior_views.len())]);
                    report.replayed += 1;
                } else {
                    batch.push(&new_views[self.rng.gen_range(0..new_views.len())]);
                }
            }
            self.step_masked(&batch, Some(&mask))?;
            report.iterations += 1;
        }
        Ok(report)
    }

    /// Add Gaussians seeded from `points`, scaled by their nearest
    /// neighbours among existing and new means. Returns the new IDs.
    pub fn inject_points(&mut self, points: &[SeedPoint]) -> Result<Vec<u64>> {
        if points.is_empty() {
            return Ok(Vec::new());
        }
        let mut all: Vec<[f64; 3]> = self.cloud.gaussians().iter().map(|g| g.position.map(f64::from)).collect();
        let queries: Vec<[f64; 3]> = points.iter().map(|p| p.xyz).collect();
        all.extend_from_slice(&queries);
        let dists = mean_knn_distance(&all, &queries);
        let degree = self.cloud.sh_degree();
        let ids = self
            .cloud
            .extend_new(points.iter().zip(dists).map(|(p, d)| seed_gaussian(p, d, degree)))?;
        let len = 11 + self.cloud.sh_len();
        for _ in &ids {
            self.exp_avg.push(zero_like(len));
            self.exp_avg_sq.push(zero_like(len));
            self.grad_accum.push(0.0);
            self.grad_count.push(0);
            self.max_radii.push(0.0);
        }
        Ok(ids)
    }
}

/// Projected mean lies inside the image and in front of the near plane.
pub fn in_frustum(p: &Vector3<f64>, pose: &PoseSE3, k: &CameraIntrinsics) -> bool {
    let pc = pose.transform_point(p);
    if pc.z <= NEAR_PLANE {
        return false;
    }
    let u = k.fx * pc.x / pc.z + k.cx;
    let v = k.fy * pc.y / pc.z + k.cy;
    (0.0..k.width as f64).contains(&u) && (0.0..k.height as f64).contains(&v)
}

/// Store `updated` into `g`, touching only fields that changed so that
/// unchanged parameters stay bit-identical.
fn write_params(g: &mut Gaussian3D, updated: &SplatParams, original: &SplatParams) {
    let cast = |new: f64, old: f64, slot: &mut f32| {
        if new != old {
            *slot = new as f32;
        }
    };
    for k in 0..3 {
        cast(updated.position[k], original.position[k], &mut g.position[k]);
        cast(updated.log_scale[k], original.log_scale[k], &mut g.log_scale[k]);
    }
    for k in 0..4 {
        cast(updated.rotation[k], original.rotation[k], &mut g.rotation[k]);
    }
    cast(updated.opacity_logit, original.opacity_logit, &mut g.opacity_logit);
    for (k, slot) in g.sh.iter_mut().enumerate() {
        cast(updated.sh[k], original.sh[k], slot);
    }
}
