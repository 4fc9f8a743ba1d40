//! Tile-based forward rasterization and its analytic backward pass.
//!
//! Splats are binned into 16x16 pixel tiles by the bounding box of their
//! truncated footprint, sorted front to back per tile by `(depth, id)` and
//! alpha-composited per pixel. The backward pass replays the same per-pixel
//! compositing and chains the pixel gradients through projection, SH
//! evaluation and the activations down to every stored parameter.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector3};
use rayon::prelude::*;

use crate::camera::{CameraIntrinsics, PoseSE3};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::sh::{basis, basis_grad, stored_degree, DC_OFFSET};
use crate::splat::{
    covariance_from_params, normalize_quat, project_mean_cov, projection_jacobian, quat_to_matrix, sh_coeff_count,
    sigmoid, SplatCloud, SplatParams, DEFAULT_DILATION,
};

pub const TILE_SIZE: usize = 16;

/// Footprint truncation radius in standard deviations: a splat contributes
/// only where its Mahalanobis distance is at most this. The tail beyond it
/// is below `exp(-24.5) ≈ 2.3e-11`.
pub const FOOTPRINT_SIGMA: f64 = 7.0;

/// Per-pixel compositing stops once transmittance falls below this.
pub const MIN_TRANSMITTANCE: f64 = 1e-4;

/// Upper clamp on a splat's per-pixel alpha.
pub const MAX_ALPHA: f64 = 0.999;

const CUTOFF_Q: f64 = FOOTPRINT_SIGMA * FOOTPRINT_SIGMA;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    pub background: [f64; 3],
    /// SH degree used for color; `None` means the stored degree.
    pub sh_degree: Option<u8>,
    pub dilation: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            background: [0.0; 3],
            sh_degree: None,
            dilation: DEFAULT_DILATION,
        }
    }
}

impl RenderOptions {
    pub fn with_background(background: [f64; 3]) -> Self {
        Self {
            background,
            ..Self::default()
        }
    }
}

/// Borrowed view of a cloud's parameters in double precision.
#[derive(Debug, Clone, Copy)]
pub struct Scene<'a> {
    pub params: &'a [SplatParams],
    pub ids: &'a [u64],
}

/// A splat ready for compositing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreparedSplat {
    pub index: usize,
    pub id: u64,
    pub mean2d: [f64; 2],
    pub cov2d: Matrix2<f64>,
    /// Inverse covariance `(a, b, c)` for `[[a, b], [b, c]]`.
    pub conic: [f64; 3],
    pub color: [f64; 3],
    pub opacity: f64,
    pub depth: f64,
    /// Inclusive pixel bounds `[x0, y0, x1, y1]` of the truncated footprint,
    /// clipped to the image. Empty when `x0 > x1` or `y0 > y1`.
    pub pixel_rect: [i64; 4],
    /// Three-sigma radius along the major axis, in pixels.
    pub radius_px: f64,
}

impl PreparedSplat {
    pub fn touches_image(&self) -> bool {
        self.pixel_rect[0] <= self.pixel_rect[2] && self.pixel_rect[1] <= self.pixel_rect[3]
    }

    /// Truncated Gaussian weight at a pixel center.
    #[inline]
    pub fn weight_at(&self, px: f64, py: f64) -> f64 {
        let dx = px - self.mean2d[0];
        let dy = py - self.mean2d[1];
        let q = self.conic[0] * dx * dx + 2.0 * self.conic[1] * dx * dy + self.conic[2] * dy * dy;
        if q > CUTOFF_Q {
            0.0
        } else {
            (-0.5 * q).exp()
        }
    }
}

/// Front-to-back ordering shared by every compositing path.
pub fn depth_order(a: &PreparedSplat, b: &PreparedSplat) -> std::cmp::Ordering {
    a.depth.total_cmp(&b.depth).then(a.id.cmp(&b.id))
}

fn resolve_degree(params: &[SplatParams], opts: &RenderOptions) -> Result<u8> {
    let stored = match params.first() {
        Some(p) => stored_degree(p.sh.len())?,
        None => return Ok(opts.sh_degree.unwrap_or(0)),
    };
    match opts.sh_degree {
        Some(d) if d > stored => Err(Error::InvalidParameter(format!(
            "render sh degree {d} above stored degree {stored}"
        ))),
        Some(d) => Ok(d),
        None => Ok(stored),
    }
}

fn raw_color(p: &SplatParams, degree: u8, dir: [f64; 3]) -> [f64; 3] {
    let y = basis(degree, dir);
    let mut rgb = [DC_OFFSET; 3];
    for (k, yk) in y.iter().enumerate().take(sh_coeff_count(degree)) {
        for (c, v) in rgb.iter_mut().enumerate() {
            *v += p.sh[k * 3 + c] * yk;
        }
    }
    rgb
}

fn view_direction(position: &Vector3<f64>, camera_center: &Vector3<f64>) -> (Vector3<f64>, f64) {
    let v = position - camera_center;
    let n = v.norm();
    if n > 0.0 {
        (v / n, n)
    } else {
        (Vector3::new(0.0, 0.0, 1.0), 0.0)
    }
}

/// Project every Gaussian; `None` marks culled ones.
pub fn prepare_splats(
    scene: &Scene<'_>,
    pose: &PoseSE3,
    k: &CameraIntrinsics,
    opts: &RenderOptions,
) -> Result<Vec<Option<PreparedSplat>>> {
    if scene.params.len() != scene.ids.len() {
        return Err(Error::InvalidParameter("params and ids differ in length".into()));
    }
    let degree = resolve_degree(scene.params, opts)?;
    let center = pose.camera_center();
    Ok(scene
        .params
        .iter()
        .zip(scene.ids)
        .enumerate()
        .map(|(index, (p, &id))| prepare_one(index, id, p, degree, pose, k, opts, &center))
        .collect())
}

#[allow(clippy::too_many_arguments)]
fn prepare_one(
    index: usize,
    id: u64,
    p: &SplatParams,
    degree: u8,
    pose: &PoseSE3,
    k: &CameraIntrinsics,
    opts: &RenderOptions,
    center: &Vector3<f64>,
) -> Option<PreparedSplat> {
    let cov3 = covariance_from_params(p.rotation, p.log_scale).ok()?;
    let mu = Vector3::from(p.position);
    let s = project_mean_cov(&mu, &cov3, pose, k, opts.dilation)?;
    let (a, b, c) = (s.cov2d[(0, 0)], s.cov2d[(0, 1)], s.cov2d[(1, 1)]);
    let det = a * c - b * b;
    if !(det > 0.0) || !det.is_finite() {
        return None;
    }
    let conic = [c / det, -b / det, a / det];
    let (dir, _) = view_direction(&mu, center);
    let color = raw_color(p, degree, [dir.x, dir.y, dir.z]).map(|v| v.max(0.0));
    let rx = FOOTPRINT_SIGMA * a.sqrt();
    let ry = FOOTPRINT_SIGMA * c.sqrt();
    let [mx, my] = s.mean2d;
    // pixel i is sampled at i + 0.5
    let x0 = ((mx - rx - 0.5).ceil() as i64).max(0);
    let x1 = ((mx + rx - 0.5).floor() as i64).min(k.width as i64 - 1);
    let y0 = ((my - ry - 0.5).ceil() as i64).max(0);
    let y1 = ((my + ry - 0.5).floor() as i64).min(k.height as i64 - 1);
    let mid = 0.5 * (a + c);
    let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
    Some(PreparedSplat {
        index,
        id,
        mean2d: s.mean2d,
        cov2d: s.cov2d,
        conic,
        color,
        opacity: sigmoid(p.opacity_logit),
        depth: s.depth,
        pixel_rect: [x0, y0, x1, y1],
        radius_px: 3.0 * lambda_max.sqrt(),
    })
}

/// Output of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedImage {
    pub image: Image,
    /// Accumulated opacity per pixel, row-major.
    pub alpha: Vec<f64>,
    /// Splats binned into each tile, row-major over tiles.
    pub per_tile_counts: Vec<u32>,
    pub tiles_x: usize,
    pub tiles_y: usize,
}

impl RenderedImage {
    pub fn width(&self) -> usize {
        self.image.width()
    }

    pub fn height(&self) -> usize {
        self.image.height()
    }
}

struct TileGrid {
    tiles_x: usize,
    tiles_y: usize,
    width: usize,
    height: usize,
}

impl TileGrid {
    fn new(k: &CameraIntrinsics) -> Self {
        let width = k.width as usize;
        let height = k.height as usize;
        Self {
            tiles_x: width.div_ceil(TILE_SIZE),
            tiles_y: height.div_ceil(TILE_SIZE),
            width,
            height,
        }
    }

    fn count(&self) -> usize {
        self.tiles_x * self.tiles_y
    }

    /// Pixel bounds `[x0, x1) x [y0, y1)` of a tile.
    fn bounds(&self, tile: usize) -> (usize, usize, usize, usize) {
        let tx = tile % self.tiles_x;
        let ty = tile / self.tiles_x;
        let x0 = tx * TILE_SIZE;
        let y0 = ty * TILE_SIZE;
        (x0, (x0 + TILE_SIZE).min(self.width), y0, (y0 + TILE_SIZE).min(self.height))
    }

    /// Per-tile splat lists in front-to-back order.
    fn bin(&self, splats: &[PreparedSplat]) -> Vec<Vec<u32>> {
        let mut bins: Vec<Vec<u32>> = vec![Vec::new(); self.count()];
        for (i, s) in splats.iter().enumerate() {
            if !s.touches_image() {
                continue;
            }
            let [x0, y0, x1, y1] = s.pixel_rect;
            let tx0 = x0 as usize / TILE_SIZE;
            let tx1 = x1 as usize / TILE_SIZE;
            let ty0 = y0 as usize / TILE_SIZE;
            let ty1 = y1 as usize / TILE_SIZE;
            for ty in ty0..=ty1 {
                for tx in tx0..=tx1 {
                    bins[ty * self.tiles_x + tx].push(i as u32);
                }
            }
        }
        for bin in &mut bins {
            bin.sort_by(|&a, &b| depth_order(&splats[a as usize], &splats[b as usize]));
        }
        bins
    }
}

fn visible(prepared: Vec<Option<PreparedSplat>>) -> Vec<PreparedSplat> {
    prepared.into_iter().flatten().collect()
}

/// Forward pass over an explicit parameter set.
pub fn render(
    scene: &Scene<'_>,
    pose: &PoseSE3,
    k: &CameraIntrinsics,
    opts: &RenderOptions,
) -> Result<RenderedImage> {
    let splats = visible(prepare_splats(scene, pose, k, opts)?);
    let grid = TileGrid::new(k);
    let bins = grid.bin(&splats);
    let bg = opts.background;

    let tiles: Vec<(Vec<[f64; 3]>, Vec<f64>)> = (0..grid.count())
        .into_par_iter()
        .map(|tile| {
            let (x0, x1, y0, y1) = grid.bounds(tile);
            let list: Vec<&PreparedSplat> = bins[tile].iter().map(|&i| &splats[i as usize]).collect();
            let mut colors = Vec::with_capacity((x1 - x0) * (y1 - y0));
            let mut alphas = Vec::with_capacity(colors.capacity());
            for py in y0..y1 {
                for px in x0..x1 {
                    let (pxf, pyf) = (px as f64 + 0.5, py as f64 + 0.5);
                    let mut t = 1.0;
                    let mut c = [0.0; 3];
                    for s in &list {
                        let g = s.weight_at(pxf, pyf);
                        if g == 0.0 {
                            continue;
                        }
                        let a = (s.opacity * g).min(MAX_ALPHA);
                        let w = a * t;
                        c[0] += s.color[0] * w;
                        c[1] += s.color[1] * w;
                        c[2] += s.color[2] * w;
                        t *= 1.0 - a;
                        if t < MIN_TRANSMITTANCE {
                            break;
                        }
                    }
                    colors.push([c[0] + t * bg[0], c[1] + t * bg[1], c[2] + t * bg[2]]);
                    alphas.push(1.0 - t);
                }
            }
            (colors, alphas)
        })
        .collect();

    let mut image = Image::new(grid.width, grid.height);
    let mut alpha = vec![0.0; grid.width * grid.height];
    for (tile, (colors, alphas)) in tiles.into_iter().enumerate() {
        let (x0, x1, y0, y1) = grid.bounds(tile);
        let mut i = 0;
        for py in y0..y1 {
            for px in x0..x1 {
                image.set_pixel(px, py, colors[i]);
                alpha[py * grid.width + px] = alphas[i];
                i += 1;
            }
        }
    }
    Ok(RenderedImage {
        image,
        alpha,
        per_tile_counts: bins.iter().map(|b| b.len() as u32).collect(),
        tiles_x: grid.tiles_x,
        tiles_y: grid.tiles_y,
    })
}

/// Render a cloud at its stored SH degree over a solid background.
pub fn rasterize(cloud: &SplatCloud, pose: &PoseSE3, k: &CameraIntrinsics, background: [f64; 3]) -> RenderedImage {
    let params = cloud.params();
    let ids = cloud.ids();
    let scene = Scene {
        params: &params,
        ids: &ids,
    };
    render(&scene, pose, k, &RenderOptions::with_background(background))
        .expect("a valid cloud always renders at its stored degree")
}

/// Per-Gaussian partial derivatives, aligned with the input order.
///
/// `grads[i]` reuses the [`SplatParams`] layout to hold `∂L/∂θ` for each
/// parameter of Gaussian `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub ids: Vec<u64>,
    pub grads: Vec<SplatParams>,
    /// `|∂L/∂mean2d|` in normalized device units for this view.
    pub mean2d_grad_norm: Vec<f64>,
    /// Whether the Gaussian's footprint touched the image in this view.
    pub visible: Vec<bool>,
    /// Three-sigma screen radius in pixels (0 when not visible).
    pub radius_px: Vec<f64>,
}

impl GradientSet {
    pub fn zeros(params: &[SplatParams], ids: &[u64]) -> Self {
        Self {
            ids: ids.to_vec(),
            grads: params
                .iter()
                .map(|p| SplatParams {
                    position: [0.0; 3],
                    rotation: [0.0; 4],
                    log_scale: [0.0; 3],
                    opacity_logit: 0.0,
                    sh: vec![0.0; p.sh.len()],
                })
                .collect(),
            mean2d_grad_norm: vec![0.0; params.len()],
            visible: vec![false; params.len()],
            radius_px: vec![0.0; params.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Add another view's parameter gradients scaled by `weight`.
    pub fn accumulate(&mut self, other: &Self, weight: f64) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            for i in 0..a.len() {
                *a.get_mut(i) += weight * b.get(i);
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().all(|g| (0..g.len()).all(|i| g.get(i).is_finite()))
    }
}

/// Gradients with respect to a splat's screen-space quantities.
#[derive(Debug, Clone, Copy, Default)]
struct ScreenGrad {
    mean2d: [f64; 2],
    conic: [f64; 3],
    color: [f64; 3],
    opacity: f64,
}

impl ScreenGrad {
    fn add(&mut self, o: &Self) {
        for i in 0..2 {
            self.mean2d[i] += o.mean2d[i];
        }
        for i in 0..3 {
            self.conic[i] += o.conic[i];
            self.color[i] += o.color[i];
        }
        self.opacity += o.opacity;
    }
}

struct Contribution {
    local: usize,
    alpha: f64,
    weight: f64,
    clamped: bool,
    transmittance: f64,
    dx: f64,
    dy: f64,
}

/// Gradient of `⟨upstream, rendered⟩` with respect to every parameter.
pub fn render_backward(
    scene: &Scene<'_>,
    pose: &PoseSE3,
    k: &CameraIntrinsics,
    opts: &RenderOptions,
    upstream: &Image,
) -> Result<GradientSet> {
    if upstream.width() != k.width as usize || upstream.height() != k.height as usize {
        return Err(Error::InvalidParameter(format!(
            "upstream gradient is {}x{}, camera is {}x{}",
            upstream.width(),
            upstream.height(),
            k.width,
            k.height
        )));
    }
    let degree = resolve_degree(scene.params, opts)?;
    let splats = visible(prepare_splats(scene, pose, k, opts)?);
    let grid = TileGrid::new(k);
    let bins = grid.bin(&splats);
    let bg = opts.background;

    let tile_grads: Vec<Vec<ScreenGrad>> = (0..grid.count())
        .into_par_iter()
        .map(|tile| {
            let (x0, x1, y0, y1) = grid.bounds(tile);
            let list: Vec<&PreparedSplat> = bins[tile].iter().map(|&i| &splats[i as usize]).collect();
            let mut grads = vec![ScreenGrad::default(); list.len()];
            let mut contribs: Vec<Contribution> = Vec::new();
            for py in y0..y1 {
                for px in x0..x1 {
                    let up = upstream.pixel(px, py);
                    if up == [0.0; 3] {
                        continue;
                    }
                    let (pxf, pyf) = (px as f64 + 0.5, py as f64 + 0.5);
                    contribs.clear();
                    let mut t = 1.0;
                    for (local, s) in list.iter().enumerate() {
                        let g = s.weight_at(pxf, pyf);
                        if g == 0.0 {
                            continue;
                        }
                        let raw = s.opacity * g;
                        let clamped = raw > MAX_ALPHA;
                        let a = raw.min(MAX_ALPHA);
                        contribs.push(Contribution {
                            local,
                            alpha: a,
                            weight: g,
                            clamped,
                            transmittance: t,
                            dx: pxf - s.mean2d[0],
                            dy: pyf - s.mean2d[1],
                        });
                        t *= 1.0 - a;
                        if t < MIN_TRANSMITTANCE {
                            break;
                        }
                    }
                    // color seen behind each splat, normalized by the
                    // transmittance just past it
                    let mut behind = bg;
                    for c in contribs.iter().rev() {
                        let s = list[c.local];
                        let sg = &mut grads[c.local];
                        let w = c.alpha * c.transmittance;
                        let mut d_alpha = 0.0;
                        for ch in 0..3 {
                            sg.color[ch] += up[ch] * w;
                            d_alpha += up[ch] * (s.color[ch] - behind[ch]);
                        }
                        d_alpha *= c.transmittance;
                        for ch in 0..3 {
                            behind[ch] = s.color[ch] * c.alpha + (1.0 - c.alpha) * behind[ch];
                        }
                        if c.clamped {
                            continue;
                        }
                        sg.opacity += d_alpha * c.weight;
                        let dg = d_alpha * s.opacity;
                        let g = c.weight;
                        let [ca, cb, cc] = s.conic;
                        sg.mean2d[0] += dg * g * (ca * c.dx + cb * c.dy);
                        sg.mean2d[1] += dg * g * (cb * c.dx + cc * c.dy);
                        sg.conic[0] += dg * (-0.5 * g * c.dx * c.dx);
                        sg.conic[1] += dg * (-g * c.dx * c.dy);
                        sg.conic[2] += dg * (-0.5 * g * c.dy * c.dy);
                    }
                }
            }
            grads
        })
        .collect();

    // merge in tile order so the sums do not depend on scheduling
    let mut screen = vec![ScreenGrad::default(); splats.len()];
    for (tile, grads) in tile_grads.iter().enumerate() {
        for (local, g) in bins[tile].iter().zip(grads) {
            screen[*local as usize].add(g);
        }
    }

    let mut out = GradientSet::zeros(scene.params, scene.ids);
    let center = pose.camera_center();
    let half = [k.width as f64 / 2.0, k.height as f64 / 2.0];
    for (s, sg) in splats.iter().zip(&screen) {
        let i = s.index;
        out.visible[i] = s.touches_image();
        out.radius_px[i] = if s.touches_image() { s.radius_px } else { 0.0 };
        out.mean2d_grad_norm[i] = (sg.mean2d[0] * half[0]).hypot(sg.mean2d[1] * half[1]);
        chain_to_params(&scene.params[i], s, sg, degree, pose, k, &center, &mut out.grads[i]);
    }
    Ok(out)
}

/// Backward pass for a cloud at its stored SH degree.
pub fn rasterize_backward(
    cloud: &SplatCloud,
    pose: &PoseSE3,
    k: &CameraIntrinsics,
    background: [f64; 3],
    upstream: &Image,
) -> Result<GradientSet> {
    let params = cloud.params();
    let ids = cloud.ids();
    let scene = Scene {
        params: &params,
        ids: &ids,
    };
    render_backward(&scene, pose, k, &RenderOptions::with_background(background), upstream)
}

#[allow(clippy::too_many_arguments)]
fn chain_to_params(
    p: &SplatParams,
    s: &PreparedSplat,
    sg: &ScreenGrad,
    degree: u8,
    pose: &PoseSE3,
    k: &CameraIntrinsics,
    center: &Vector3<f64>,
    out: &mut SplatParams,
) {
    let mu = Vector3::from(p.position);
    let mut d_mu = Vector3::zeros();

    // opacity
    out.opacity_logit = sg.opacity * s.opacity * (1.0 - s.opacity);

    // color through SH, including the view-direction dependence
    let (dir, dist) = view_direction(&mu, center);
    let dir_arr = [dir.x, dir.y, dir.z];
    let raw = raw_color(p, degree, dir_arr);
    let d_color: [f64; 3] = std::array::from_fn(|c| if raw[c] < 0.0 { 0.0 } else { sg.color[c] });
    let y = basis(degree, dir_arr);
    let n_coeff = sh_coeff_count(degree);
    for (kk, yk) in y.iter().enumerate().take(n_coeff) {
        for c in 0..3 {
            out.sh[kk * 3 + c] = d_color[c] * yk;
        }
    }
    if degree > 0 && dist > 0.0 {
        let yg = basis_grad(degree, dir_arr);
        let mut d_dir = Vector3::zeros();
        for (kk, gk) in yg.iter().enumerate().take(n_coeff).skip(1) {
            let w: f64 = (0..3).map(|c| d_color[c] * p.sh[kk * 3 + c]).sum();
            d_dir += Vector3::from(*gk) * w;
        }
        d_mu += (d_dir - dir * dir.dot(&d_dir)) / dist;
    }

    // conic → 2D covariance: dL/dCov = -M G M with G the symmetric-matrix
    // gradient of the conic
    let m = Matrix2::new(s.conic[0], s.conic[1], s.conic[1], s.conic[2]);
    let g_conic = Matrix2::new(sg.conic[0], 0.5 * sg.conic[1], 0.5 * sg.conic[1], sg.conic[2]);
    let g_cov2 = -(m * g_conic * m);

    // 2D covariance → 3D covariance and the projection Jacobian
    let pc = pose.transform_point(&mu);
    let jac = projection_jacobian(&pc, k);
    let w = pose.rotation;
    let t = jac * w;
    let (q_unit, q_norm) = match normalize_quat(p.rotation) {
        Ok(v) => v,
        Err(_) => return,
    };
    let r = quat_to_matrix(q_unit);
    let scale = Vector3::from(p.log_scale.map(f64::exp));
    let m3 = r * Matrix3::from_diagonal(&scale);
    let cov3 = m3 * m3.transpose();
    let g_cov3: Matrix3<f64> = t.transpose() * g_cov2 * t;
    let g_t: Matrix2x3<f64> = g_cov2 * t * cov3 * 2.0;
    let g_j: Matrix2x3<f64> = g_t * w.transpose();

    let (x, yv, z) = (pc.x, pc.y, pc.z);
    let iz = 1.0 / z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let mut d_pc = Vector3::zeros();
    d_pc.x += g_j[(0, 2)] * (-k.fx * iz2);
    d_pc.y += g_j[(1, 2)] * (-k.fy * iz2);
    d_pc.z += g_j[(0, 0)] * (-k.fx * iz2)
        + g_j[(0, 2)] * (2.0 * k.fx * x * iz3)
        + g_j[(1, 1)] * (-k.fy * iz2)
        + g_j[(1, 2)] * (2.0 * k.fy * yv * iz3);
    // mean projection
    let [gu, gv] = sg.mean2d;
    d_pc.x += gu * k.fx * iz;
    d_pc.y += gv * k.fy * iz;
    d_pc.z += -gu * k.fx * x * iz2 - gv * k.fy * yv * iz2;
    d_mu += w.transpose() * d_pc;
    out.position = [d_mu.x, d_mu.y, d_mu.z];

    // Σ = M Mᵀ, M = R S
    let g_m = g_cov3 * m3 * 2.0;
    for j in 0..3 {
        let ds: f64 = (0..3).map(|i| g_m[(i, j)] * r[(i, j)]).sum();
        out.log_scale[j] = ds * scale[j];
    }
    let g_r = Matrix3::from_fn(|i, j| g_m[(i, j)] * scale[j]);
    let [qw, qx, qy, qz] = q_unit;
    let dr_dw = Matrix3::new(0.0, -2.0 * qz, 2.0 * qy, 2.0 * qz, 0.0, -2.0 * qx, -2.0 * qy, 2.0 * qx, 0.0);
    let dr_dx = Matrix3::new(0.0, 2.0 * qy, 2.0 * qz, 2.0 * qy, -4.0 * qx, -2.0 * qw, 2.0 * qz, 2.0 * qw, -4.0 * qx);
    let dr_dy = Matrix3::new(-4.0 * qy, 2.0 * qx, 2.0 * qw, 2.0 * qx, 0.0, 2.0 * qz, -2.0 * qw, 2.0 * qz, -4.0 * qy);
    let dr_dz = Matrix3::new(-4.0 * qz, -2.0 * qw, 2.0 * qx, 2.0 * qw, -4.0 * qz, 2.0 * qy, 2.0 * qx, 2.0 * qy, 0.0);
    let d_qu = [
        g_r.component_mul(&dr_dw).sum(),
        g_r.component_mul(&dr_dx).sum(),
        g_r.component_mul(&dr_dy).sum(),
        g_r.component_mul(&dr_dz).sum(),
    ];
    let dot: f64 = (0..4).map(|i| d_qu[i] * q_unit[i]).sum();
    for i in 0..4 {
        out.rotation[i] = (d_qu[i] - q_unit[i] * dot) / q_norm;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splat::Gaussian3D;

    fn single(opacity_logit: f32, sh: Vec<f32>, position: [f32; 3], log_scale: f32) -> SplatCloud {
        let mut cloud = SplatCloud::new(0).unwrap();
        cloud
            .extend_new([Gaussian3D {
                id: 0,
                position,
                rotation: [1.0, 0.0, 0.0, 0.0],
                log_scale: [log_scale; 3],
                sh,
                opacity_logit,
            }])
            .unwrap();
        cloud
    }

    #[test]
    fn empty_cloud_renders_background() {
        let cloud = SplatCloud::new(0).unwrap();
        let k = CameraIntrinsics::simple(30.0, 20, 17).unwrap();
        let out = rasterize(&cloud, &PoseSE3::identity(), &k, [0.0; 3]);
        assert!(out.image.data().iter().all(|&v| v == 0.0));
        assert!(out.alpha.iter().all(|&a| a == 0.0));
        assert_eq!((out.tiles_x, out.tiles_y), (2, 2));
        let out = rasterize(&cloud, &PoseSE3::identity(), &k, [0.2, 0.4, 0.6]);
        assert_eq!(out.image.pixel(19, 16), [0.2, 0.4, 0.6]);
    }

    #[test]
    fn one_term_compositing() {
        // red, opacity 0.6, centered on pixel (8, 8) of a 17x17 image
        let logit = crate::splat::logit(0.6) as f32;
        let sh = [1.0, 0.0, 0.0].map(|v| crate::sh::rgb_to_dc(v) as f32).to_vec();
        let cloud = single(logit, sh, [0.0, 0.0, 5.0], -3.0);
        let k = CameraIntrinsics::new(40.0, 40.0, 8.5, 8.5, 17, 17).unwrap();
        let out = rasterize(&cloud, &PoseSE3::identity(), &k, [0.0, 0.0, 1.0]);
        let p = out.image.pixel(8, 8);
        let opacity = cloud.gaussians()[0].opacity();
        assert!((opacity - 0.6).abs() < 1e-7);
        let c0 = crate::sh::dc_to_rgb(cloud.gaussians()[0].sh[0] as f64);
        assert!((p[0] - c0 * opacity).abs() < 1e-12, "{p:?}");
        assert!(p[1].abs() < 1e-7);
        assert!((p[2] - (1.0 - opacity)).abs() < 1e-12);
        assert!((out.alpha[8 * 17 + 8] - opacity).abs() < 1e-12);
    }

    #[test]
    fn alpha_is_clamped() {
        let cloud = single(20.0, vec![0.0; 3], [0.0, 0.0, 5.0], -3.0);
        let k = CameraIntrinsics::new(40.0, 40.0, 8.5, 8.5, 17, 17).unwrap();
        let out = rasterize(&cloud, &PoseSE3::identity(), &k, [1.0, 1.0, 1.0]);
        assert!((out.alpha[8 * 17 + 8] - MAX_ALPHA).abs() < 1e-12);
        // clamped pixels pass no gradient to opacity or geometry
        let mut up = Image::new(17, 17);
        up.set_pixel(8, 8, [1.0, 1.0, 1.0]);
        let g = rasterize_backward(&cloud, &PoseSE3::identity(), &k, [1.0, 1.0, 1.0], &up).unwrap();
        assert_eq!(g.grads[0].opacity_logit, 0.0);
        assert_eq!(g.grads[0].position, [0.0; 3]);
        assert!(g.grads[0].sh[0] != 0.0);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let cloud = single(0.3, vec![0.2, -0.1, 0.4], [0.1, -0.2, 4.0], -1.0);
        let k = CameraIntrinsics::simple(30.0, 24, 24).unwrap();
        let g = rasterize_backward(&cloud, &PoseSE3::identity(), &k, [0.0; 3], &Image::new(24, 24)).unwrap();
        assert!(g.grads.iter().all(|p| (0..p.len()).all(|i| p.get(i) == 0.0)));
        assert!(g.visible[0]);
    }

    #[test]
    fn upstream_shape_checked() {
        let cloud = single(0.0, vec![0.0; 3], [0.0, 0.0, 4.0], -1.0);
        let k = CameraIntrinsics::simple(30.0, 24, 24).unwrap();
        assert!(rasterize_backward(&cloud, &PoseSE3::identity(), &k, [0.0; 3], &Image::new(23, 24)).is_err());
    }

    #[test]
    fn render_degree_above_stored_is_rejected() {
        let cloud = single(0.0, vec![0.0; 3], [0.0, 0.0, 4.0], -1.0);
        let params = cloud.params();
        let ids = cloud.ids();
        let scene = Scene { params: &params, ids: &ids };
        let k = CameraIntrinsics::simple(30.0, 24, 24).unwrap();
        let opts = RenderOptions {
            sh_degree: Some(1),
            ..RenderOptions::default()
        };
        assert!(render(&scene, &PoseSE3::identity(), &k, &opts).is_err());
    }
}
