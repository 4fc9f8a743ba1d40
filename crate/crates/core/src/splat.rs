//! Gaussian primitives, the cloud container and per-primitive math.

use std::collections::{BTreeMap, HashSet};

use nalgebra::{Matrix2, Matrix3, Vector3};

use crate::camera::{CameraIntrinsics, PoseSE3};
use crate::error::{Error, Result};

/// Highest supported spherical-harmonics degree.
pub const MAX_SH_DEGREE: u8 = 3;

/// Added to the diagonal of every projected covariance, in px².
pub const DEFAULT_DILATION: f64 = 0.3;

/// Gaussians whose camera-space depth is at or below this are culled.
pub const NEAR_PLANE: f64 = 0.01;

/// SH coefficients per color channel for a degree.
pub const fn sh_coeff_count(degree: u8) -> usize {
    (degree as usize + 1) * (degree as usize + 1)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// One anisotropic Gaussian. Parameters are stored in single precision in
/// their unconstrained form; `sh` is laid out coefficient-major as
/// `[k * 3 + channel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian3D {
    pub id: u64,
    pub position: [f32; 3],
    /// (w, x, y, z); not necessarily unit length during optimization.
    pub rotation: [f32; 4],
    pub log_scale: [f32; 3],
    pub sh: Vec<f32>,
    pub opacity_logit: f32,
}

impl Gaussian3D {
    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit as f64)
    }

    pub fn scale(&self) -> [f64; 3] {
        self.log_scale.map(|s| (s as f64).exp())
    }

    pub fn position_f64(&self) -> Vector3<f64> {
        Vector3::new(
            self.position[0] as f64,
            self.position[1] as f64,
            self.position[2] as f64,
        )
    }

    /// Renormalize the stored quaternion in place.
    pub fn normalize_rotation(&mut self) {
        let q = self.rotation.map(|v| v as f64);
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 && n.is_finite() {
            self.rotation = q.map(|v| (v / n) as f32);
        }
    }

    /// All parameters compared by bit pattern.
    pub fn bit_eq(&self, other: &Self) -> bool {
        fn bits<const N: usize>(a: &[f32; N]) -> [u32; N] {
            a.map(f32::to_bits)
        }
        self.id == other.id
            && bits(&self.position) == bits(&other.position)
            && bits(&self.rotation) == bits(&other.rotation)
            && bits(&self.log_scale) == bits(&other.log_scale)
            && self.opacity_logit.to_bits() == other.opacity_logit.to_bits()
            && self.sh.len() == other.sh.len()
            && self.sh.iter().zip(&other.sh).all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.rotation.iter().all(|v| v.is_finite())
            && self.log_scale.iter().all(|v| v.is_finite())
            && self.opacity_logit.is_finite()
            && self.sh.iter().all(|v| v.is_finite())
    }
}

/// Double-precision working copy of a Gaussian's parameters, used by the
/// rasterizer and by gradient checks.
#[derive(Debug, Clone, PartialEq)]
pub struct SplatParams {
    pub position: [f64; 3],
    pub rotation: [f64; 4],
    pub log_scale: [f64; 3],
    pub opacity_logit: f64,
    pub sh: Vec<f64>,
}

impl From<&Gaussian3D> for SplatParams {
    fn from(g: &Gaussian3D) -> Self {
        Self {
            position: g.position.map(f64::from),
            rotation: g.rotation.map(f64::from),
            log_scale: g.log_scale.map(f64::from),
            opacity_logit: g.opacity_logit as f64,
            sh: g.sh.iter().map(|&v| v as f64).collect(),
        }
    }
}

impl SplatParams {
    /// Flat parameter count: 3 + 4 + 3 + 1 + sh.
    pub fn len(&self) -> usize {
        11 + self.sh.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Flat accessor in the order position, rotation, log_scale,
    /// opacity_logit, sh.
    pub fn get(&self, i: usize) -> f64 {
        match i {
            0..=2 => self.position[i],
            3..=6 => self.rotation[i - 3],
            7..=9 => self.log_scale[i - 7],
            10 => self.opacity_logit,
            _ => self.sh[i - 11],
        }
    }

    pub fn get_mut(&mut self, i: usize) -> &mut f64 {
        match i {
            0..=2 => &mut self.position[i],
            3..=6 => &mut self.rotation[i - 3],
            7..=9 => &mut self.log_scale[i - 7],
            10 => &mut self.opacity_logit,
            _ => &mut self.sh[i - 11],
        }
    }
}

/// Pack integer cell coordinates into a `u32` cell index. Each axis gets
/// 10 bits covering `[-512, 511]`; coordinates outside are clamped to the
/// border cells.
pub fn cell_index(position: [f32; 3], cell_size: f32) -> u32 {
    let c = cell_coords(position, cell_size);
    pack_cell(c)
}

pub fn cell_coords(position: [f32; 3], cell_size: f32) -> [i32; 3] {
    position.map(|p| {
        let v = (p as f64 / cell_size as f64).floor();
        if v.is_nan() {
            0
        } else {
            v.clamp(-512.0, 511.0) as i32
        }
    })
}

pub fn pack_cell(c: [i32; 3]) -> u32 {
    let enc = |v: i32| (v.clamp(-512, 511) + 512) as u32;
    (enc(c[0]) << 20) | (enc(c[1]) << 10) | enc(c[2])
}

pub fn unpack_cell(index: u32) -> [i32; 3] {
    let dec = |v: u32| (v & 0x3ff) as i32 - 512;
    [dec(index >> 20), dec(index >> 10), dec(index)]
}

/// Uniform spatial grid over Gaussian means.
#[derive(Debug, Clone, PartialEq)]
pub struct Tiling {
    pub cell_size: f32,
    /// cell index → member IDs in cloud order.
    pub cells: BTreeMap<u32, Vec<u64>>,
}

impl Tiling {
    pub fn build(gaussians: &[Gaussian3D], cell_size: f32) -> Self {
        let mut cells: BTreeMap<u32, Vec<u64>> = BTreeMap::new();
        for g in gaussians {
            cells.entry(cell_index(g.position, cell_size)).or_default().push(g.id);
        }
        Self { cell_size, cells }
    }

    pub fn cell_of(&self, position: [f32; 3]) -> u32 {
        cell_index(position, self.cell_size)
    }
}

/// Ordered collection of Gaussians with stable IDs.
///
/// Every mutation bumps `revision` and drops the spatial tiling, so a
/// present tiling always describes the current contents.
#[derive(Debug, Clone, PartialEq)]
pub struct SplatCloud {
    gaussians: Vec<Gaussian3D>,
    sh_degree: u8,
    next_id: u64,
    tiling: Option<Tiling>,
    revision: u64,
}

impl SplatCloud {
    pub fn new(sh_degree: u8) -> Result<Self> {
        if sh_degree > MAX_SH_DEGREE {
            return Err(Error::invalid_param(format!(
                "sh degree {sh_degree} exceeds {MAX_SH_DEGREE}"
            )));
        }
        Ok(Self {
            gaussians: Vec::new(),
            sh_degree,
            next_id: 0,
            tiling: None,
            revision: 0,
        })
    }

    /// Rebuild a cloud from stored parts, checking its invariants.
    pub fn from_parts(
        sh_degree: u8,
        gaussians: Vec<Gaussian3D>,
        revision: u64,
        tiling: Option<Tiling>,
    ) -> Result<Self> {
        let next_id = gaussians.iter().map(|g| g.id + 1).max().unwrap_or(0);
        let cloud = Self {
            gaussians,
            sh_degree,
            next_id,
            tiling,
            revision,
        };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn gaussians(&self) -> &[Gaussian3D] {
        &self.gaussians
    }

    /// Mutable access to parameters. Callers must not alter IDs or SH
    /// lengths.
    pub fn gaussians_mut(&mut self) -> &mut [Gaussian3D] {
        self.touch();
        &mut self.gaussians
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn sh_degree(&self) -> u8 {
        self.sh_degree
    }

    pub fn sh_len(&self) -> usize {
        3 * sh_coeff_count(self.sh_degree)
    }

    pub fn next_id(&self) -> u64 {
        self.next_id
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn tiling(&self) -> Option<&Tiling> {
        self.tiling.as_ref()
    }

    pub fn params(&self) -> Vec<SplatParams> {
        self.gaussians.iter().map(SplatParams::from).collect()
    }

    pub fn ids(&self) -> Vec<u64> {
        self.gaussians.iter().map(|g| g.id).collect()
    }

    /// Record a mutation that happened through other means.
    pub fn touch(&mut self) {
        self.revision += 1;
        self.tiling = None;
    }

    /// Append Gaussians, assigning fresh IDs; the `id` field of the inputs
    /// is ignored. Bumps the revision once. Returns the assigned IDs.
    pub fn extend_new<I>(&mut self, items: I) -> Result<Vec<u64>>
    where
        I: IntoIterator<Item = Gaussian3D>,
    {
        let sh_len = self.sh_len();
        let mut ids = Vec::new();
        for mut g in items {
            if g.sh.len() != sh_len {
                return Err(Error::invalid_param(format!(
                    "gaussian has {} sh coefficients, cloud degree {} needs {sh_len}",
                    g.sh.len(),
                    self.sh_degree
                )));
            }
            g.id = self.next_id;
            self.next_id += 1;
            ids.push(g.id);
            self.gaussians.push(g);
        }
        self.touch();
        Ok(ids)
    }

    /// Keep Gaussians for which `keep` returns true. Returns the number
    /// removed. Always bumps the revision.
    pub fn retain<F: FnMut(&Gaussian3D) -> bool>(&mut self, keep: F) -> usize {
        let before = self.gaussians.len();
        self.gaussians.retain(keep);
        self.touch();
        before - self.gaussians.len()
    }

    pub fn remove_ids(&mut self, ids: &HashSet<u64>) -> usize {
        self.retain(|g| !ids.contains(&g.id))
    }

    pub fn build_tiling(&mut self, cell_size: f32) {
        self.tiling = Some(Tiling::build(&self.gaussians, cell_size));
    }

    /// Tiling with the default cell size (scene extent / 32) unless one
    /// is already present.
    pub fn ensure_tiling(&mut self) -> &Tiling {
        if self.tiling.is_none() {
            let cell = default_cell_size(&self.gaussians);
            self.build_tiling(cell);
        }
        self.tiling.as_ref().expect("tiling just built")
    }

    /// Radius of the bounding sphere of the means around their centroid.
    pub fn extent(&self) -> f64 {
        let pts: Vec<Vector3<f64>> = self.gaussians.iter().map(|g| g.position_f64()).collect();
        scene_extent(&pts)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sh_degree > MAX_SH_DEGREE {
            return Err(Error::invalid_param("sh degree above 3"));
        }
        let mut seen = HashSet::with_capacity(self.gaussians.len());
        let sh_len = self.sh_len();
        for g in &self.gaussians {
            if !seen.insert(g.id) {
                return Err(Error::InvalidInput(format!("duplicate gaussian id {}", g.id)));
            }
            if g.id >= self.next_id {
                return Err(Error::InvalidInput(format!(
                    "id {} not below next_id {}",
                    g.id, self.next_id
                )));
            }
            if g.sh.len() != sh_len {
                return Err(Error::InvalidInput(format!(
                    "gaussian {} has {} sh coefficients, expected {sh_len}",
                    g.id,
                    g.sh.len()
                )));
            }
        }
        let bad: Vec<usize> = self
            .gaussians
            .iter()
            .enumerate()
            .filter(|(_, g)| !g.is_finite())
            .map(|(i, _)| i)
            .collect();
        if !bad.is_empty() {
            return Err(Error::NonFinite(bad));
        }
        if let Some(t) = &self.tiling {
            let mut count = 0;
            for members in t.cells.values() {
                for id in members {
                    if !seen.contains(id) {
                        return Err(Error::InvalidInput(format!("tiling references unknown id {id}")));
                    }
                    count += 1;
                }
            }
            if count != self.gaussians.len() {
                return Err(Error::InvalidInput("tiling does not cover every gaussian once".into()));
            }
        }
        Ok(())
    }
}

pub fn scene_extent(points: &[Vector3<f64>]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let centroid = points.iter().fold(Vector3::zeros(), |a, p| a + p) / points.len() as f64;
    points.iter().map(|p| (p - centroid).norm()).fold(0.0, f64::max)
}

pub fn default_cell_size(gaussians: &[Gaussian3D]) -> f32 {
    let pts: Vec<Vector3<f64>> = gaussians.iter().map(|g| g.position_f64()).collect();
    let extent = scene_extent(&pts);
    if extent > 0.0 && extent.is_finite() {
        (extent / 32.0) as f32
    } else {
        1.0
    }
}

/// Rotation matrix of a unit (w, x, y, z) quaternion.
pub fn quat_to_matrix(q: [f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

pub fn normalize_quat(q: [f64; 4]) -> Result<([f64; 4], f64)> {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::invalid_param("zero-norm quaternion"));
    }
    Ok((q.map(|v| v / n), n))
}

/// `Σ = R S Sᵀ Rᵀ` with `S = diag(exp(log_scale))`.
pub fn covariance_from_params(rotation: [f64; 4], log_scale: [f64; 3]) -> Result<Matrix3<f64>> {
    let (q, _) = normalize_quat(rotation)?;
    let r = quat_to_matrix(q);
    let s = Matrix3::from_diagonal(&Vector3::from(log_scale.map(f64::exp)));
    let m = r * s;
    let cov = m * m.transpose();
    // exact symmetry
    Ok((cov + cov.transpose()) * 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Activated {
    pub opacity: f64,
    pub scale: [f64; 3],
}

pub fn activate(g: &Gaussian3D) -> Activated {
    Activated {
        opacity: g.opacity(),
        scale: g.scale(),
    }
}

/// Screen-space footprint of a projected Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat2D {
    pub mean2d: [f64; 2],
    pub cov2d: Matrix2<f64>,
    pub depth: f64,
}

/// EWA projection of a 3D mean and covariance. `None` when the mean is at
/// or behind the near plane.
pub fn project_mean_cov(
    position: &Vector3<f64>,
    cov3d: &Matrix3<f64>,
    pose: &PoseSE3,
    k: &CameraIntrinsics,
    dilation: f64,
) -> Option<Splat2D> {
    let pc = pose.transform_point(position);
    let (x, y, z) = (pc.x, pc.y, pc.z);
    if !(z > NEAR_PLANE) {
        return None;
    }
    let mean2d = [k.fx * x / z + k.cx, k.fy * y / z + k.cy];
    let jw = projection_jacobian(&pc, k) * pose.rotation;
    let mut cov2d = jw * cov3d * jw.transpose();
    cov2d[(0, 1)] = 0.5 * (cov2d[(0, 1)] + cov2d[(1, 0)]);
    cov2d[(1, 0)] = cov2d[(0, 1)];
    cov2d[(0, 0)] += dilation;
    cov2d[(1, 1)] += dilation;
    Some(Splat2D {
        mean2d,
        cov2d,
        depth: z,
    })
}

/// Jacobian of the perspective projection at a camera-space point.
pub fn projection_jacobian(pc: &Vector3<f64>, k: &CameraIntrinsics) -> nalgebra::Matrix2x3<f64> {
    let (x, y, z) = (pc.x, pc.y, pc.z);
    let iz = 1.0 / z;
    nalgebra::Matrix2x3::new(
        k.fx * iz,
        0.0,
        -k.fx * x * iz * iz,
        0.0,
        k.fy * iz,
        -k.fy * y * iz * iz,
    )
}

pub fn project_gaussian_dilated(
    g: &Gaussian3D,
    pose: &PoseSE3,
    k: &CameraIntrinsics,
    dilation: f64,
) -> Result<Option<Splat2D>> {
    let p = SplatParams::from(g);
    let cov = covariance_from_params(p.rotation, p.log_scale)?;
    Ok(project_mean_cov(&Vector3::from(p.position), &cov, pose, k, dilation))
}

/// Project with the default anti-alias dilation.
pub fn project_gaussian(g: &Gaussian3D, pose: &PoseSE3, k: &CameraIntrinsics) -> Result<Option<Splat2D>> {
    project_gaussian_dilated(g, pose, k, DEFAULT_DILATION)
}
