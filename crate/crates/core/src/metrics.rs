//! Image and geometry quality metrics: PSNR, SSIM (with its gradient for the
//! training loss), distance-threshold F-score and a cumulative per-view
//! series for drift monitoring.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::image::Image;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Below this many points per set the F-score uses an exhaustive search.
pub const BRUTE_FORCE_LIMIT: usize = 5000;

fn check_shapes(a: &Image, b: &Image) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::InvalidParameter(format!(
            "image shapes differ: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB; `f64::INFINITY` for identical images.
pub fn psnr(a: &Image, b: &Image, peak: f64) -> Result<f64> {
    check_shapes(a, b)?;
    if !(peak > 0.0) {
        return Err(Error::InvalidParameter(format!("peak must be positive, got {peak}")));
    }
    if a.data().is_empty() {
        return Err(Error::InvalidParameter("empty image".into()));
    }
    let sse: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    let mse = sse / a.data().len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Valid-mode separable filtering of one `w x h` plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w + 1 - SSIM_WINDOW;
    let oh = h + 1 - SSIM_WINDOW;
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                acc += kv * row[x + i];
            }
            tmp[y * ow + x] = acc;
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                acc += kv * tmp[(y + i) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

/// Adjoint of [`filter_valid`]: scatters an output-sized map back onto
/// the input grid.
fn filter_valid_adjoint(map: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w + 1 - SSIM_WINDOW;
    let oh = h + 1 - SSIM_WINDOW;
    let mut tmp = vec![0.0; ow * h];
    for y in 0..oh {
        for x in 0..ow {
            let v = map[y * ow + x];
            for (i, kv) in k.iter().enumerate() {
                tmp[(y + i) * ow + x] += kv * v;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..ow {
            let v = tmp[y * ow + x];
            for (i, kv) in k.iter().enumerate() {
                out[y * w + x + i] += kv * v;
            }
        }
    }
    out
}

fn channel_plane(img: &Image, c: usize) -> Vec<f64> {
    img.data().iter().skip(c).step_by(3).copied().collect()
}

struct SsimParts {
    value: f64,
    grad_a: Option<Image>,
}

fn ssim_impl(a: &Image, b: &Image, want_grad: bool) -> Result<SsimParts> {
    check_shapes(a, b)?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::InvalidParameter(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {w}x{h}"
        )));
    }
    let k = gaussian_window();
    let n_out = (w + 1 - SSIM_WINDOW) * (h + 1 - SSIM_WINDOW);
    let total = (3 * n_out) as f64;
    let mut sum = 0.0;
    let mut grad = if want_grad { Some(Image::new(w, h)) } else { None };

    for c in 0..3 {
        let x = channel_plane(a, c);
        let y = channel_plane(b, c);
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let mu_x = filter_valid(&x, w, h, &k);
        let mu_y = filter_valid(&y, w, h, &k);
        let s_xx = filter_valid(&xx, w, h, &k);
        let s_yy = filter_valid(&yy, w, h, &k);
        let s_xy = filter_valid(&xy, w, h, &k);

        let mut d_mu = vec![0.0; n_out];
        let mut d_sxx = vec![0.0; n_out];
        let mut d_sxy = vec![0.0; n_out];
        for i in 0..n_out {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let var_x = s_xx[i] - mx * mx;
            let var_y = s_yy[i] - my * my;
            let cov = s_xy[i] - mx * my;
            let a1 = 2.0 * mx * my + SSIM_C1;
            let a2 = 2.0 * cov + SSIM_C2;
            let b1 = mx * mx + my * my + SSIM_C1;
            let b2 = var_x + var_y + SSIM_C2;
            let den = b1 * b2;
            let s = a1 * a2 / den;
            sum += s;
            if want_grad {
                // derivatives w.r.t. mu_x, E[x²] and E[xy]
                d_mu[i] = (2.0 * my * a2 - 2.0 * my * a1) / den - s * (2.0 * mx / b1 - 2.0 * mx / b2);
                d_sxx[i] = -s / b2;
                d_sxy[i] = 2.0 * a1 / den;
            }
        }
        if let Some(g) = grad.as_mut() {
            let g_mu = filter_valid_adjoint(&d_mu, w, h, &k);
            let g_xx = filter_valid_adjoint(&d_sxx, w, h, &k);
            let g_xy = filter_valid_adjoint(&d_sxy, w, h, &k);
            let data = g.data_mut();
            for p in 0..w * h {
                data[p * 3 + c] = (g_mu[p] + 2.0 * x[p] * g_xx[p] + y[p] * g_xy[p]) / total;
            }
        }
    }
    Ok(SsimParts {
        value: sum / total,
        grad_a: grad,
    })
}

/// Mean local SSIM over all fully contained 11x11 Gaussian windows and all
/// three channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    Ok(ssim_impl(a, b, false)?.value)
}

/// SSIM and its gradient with respect to the first image.
pub fn ssim_with_grad(a: &Image, b: &Image) -> Result<(f64, Image)> {
    let parts = ssim_impl(a, b, true)?;
    Ok((parts.value, parts.grad_a.expect("gradient requested")))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FScore {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

struct PointGrid<'a> {
    cell: f64,
    points: &'a [Vector3<f64>],
    cells: HashMap<[i64; 3], Vec<usize>>,
}

impl<'a> PointGrid<'a> {
    fn new(points: &'a [Vector3<f64>], cell: f64) -> Self {
        let mut cells: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(p, cell)).or_default().push(i);
        }
        Self { cell, points, cells }
    }

    fn key(p: &Vector3<f64>, cell: f64) -> [i64; 3] {
        [
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        ]
    }

    fn any_within(&self, q: &Vector3<f64>, tau: f64) -> bool {
        let [kx, ky, kz] = Self::key(q, self.cell);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(members) = self.cells.get(&[kx + dx, ky + dy, kz + dz]) {
                        if members.iter().any(|&i| (self.points[i] - q).norm() <= tau) {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }
}

fn fraction_within(from: &[Vector3<f64>], to: &[Vector3<f64>], tau: f64) -> f64 {
    let hits = if from.len() < BRUTE_FORCE_LIMIT && to.len() < BRUTE_FORCE_LIMIT {
        from.iter()
            .filter(|p| to.iter().any(|q| (*p - q).norm() <= tau))
            .count()
    } else {
        let grid = PointGrid::new(to, tau);
        from.iter().filter(|p| grid.any_within(p, tau)).count()
    };
    hits as f64 / from.len() as f64
}

/// Precision (estimated points within `tau` of the reference), recall
/// (the reverse) and their harmonic mean.
pub fn fscore(est: &[Vector3<f64>], reference: &[Vector3<f64>], tau: f64) -> Result<FScore> {
    if est.is_empty() || reference.is_empty() {
        return Err(Error::InvalidInput("fscore needs non-empty point sets".into()));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidParameter(format!("tau must be positive, got {tau}")));
    }
    let precision = fraction_within(est, reference, tau);
    let recall = fraction_within(reference, est, tau);
    let f = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(FScore { precision, recall, f })
}

/// One line of a metric report: `view=<id> psnr=<f64> ssim=<f64>`.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewMetric {
    pub view: String,
    pub psnr: f64,
    pub ssim: f64,
}

impl fmt::Display for ViewMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "view={} psnr={} ssim={}", self.view, self.psnr, self.ssim)
    }
}

impl FromStr for ViewMetric {
    type Err = Error;

    fn from_str(line: &str) -> Result<Self> {
        let mut view = None;
        let mut psnr = None;
        let mut ssim = None;
        for field in line.split_whitespace() {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| Error::InvalidInput(format!("field `{field}` is not key=value")))?;
            let num = || {
                value
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidInput(format!("bad number `{value}` for {key}")))
            };
            match key {
                "view" => view = Some(value.to_string()),
                "psnr" => psnr = Some(num()?),
                "ssim" => ssim = Some(num()?),
                _ => {}
            }
        }
        match (view, psnr, ssim) {
            (Some(view), Some(psnr), Some(ssim)) => Ok(Self { view, psnr, ssim }),
            _ => Err(Error::InvalidInput(format!("incomplete metric record `{line}`"))),
        }
    }
}

/// Per-view metrics with running means, for monitoring drift over a
/// sequence. `window` limits the trailing mean to the last N views.
#[derive(Debug, Clone, Default)]
pub struct MetricSeries {
    records: Vec<ViewMetric>,
    window: Option<usize>,
    psnr_sum: f64,
    ssim_sum: f64,
    infinite_psnr: usize,
}

impl MetricSeries {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_window(window: usize) -> Self {
        Self {
            window: Some(window.max(1)),
            ..Self::default()
        }
    }

    pub fn push(&mut self, record: ViewMetric) {
        if record.psnr.is_infinite() {
            self.infinite_psnr += 1;
        } else {
            self.psnr_sum += record.psnr;
        }
        self.ssim_sum += record.ssim;
        self.records.push(record);
    }

    pub fn records(&self) -> &[ViewMetric] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Mean PSNR over finite values; `+∞` when every view was exact.
    pub fn mean_psnr(&self) -> f64 {
        let finite = self.records.len() - self.infinite_psnr;
        if finite == 0 {
            if self.records.is_empty() {
                f64::NAN
            } else {
                f64::INFINITY
            }
        } else {
            self.psnr_sum / finite as f64
        }
    }

    pub fn mean_ssim(&self) -> f64 {
        self.ssim_sum / self.records.len() as f64
    }

    /// Means over the trailing window (or everything without one).
    pub fn trailing_means(&self) -> (f64, f64) {
        let n = self.window.unwrap_or(self.records.len()).min(self.records.len());
        let tail = &self.records[self.records.len() - n..];
        let finite: Vec<f64> = tail.iter().map(|r| r.psnr).filter(|p| p.is_finite()).collect();
        let psnr = if finite.is_empty() {
            f64::INFINITY
        } else {
            finite.iter().sum::<f64>() / finite.len() as f64
        };
        let ssim = tail.iter().map(|r| r.ssim).sum::<f64>() / n as f64;
        (psnr, ssim)
    }

    pub fn to_report(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&r.to_string());
            out.push('\n');
        }
        out
    }

    pub fn parse_report(text: &str) -> Result<Self> {
        let mut s = Self::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            s.push(line.parse()?);
        }
        Ok(s)
    }
}
