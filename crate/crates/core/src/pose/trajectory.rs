//! Absolute and relative trajectory error.
//!
//! Both metrics work on camera-to-world poses (the inverse of the stored
//! extrinsics), so translations are camera centers in world units.

use nalgebra::{Matrix3, Vector3};

use super::colmap::PoseSequence;
use crate::camera::PoseSE3;
use crate::error::{Error, Result};

/// Association window when pairing poses by timestamp.
pub const ASSOCIATION_TOLERANCE_NS: u64 = 20_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AteResult {
    pub rmse: f64,
    pub mean: f64,
    pub median: f64,
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RpeResult {
    pub trans_rmse: f64,
    /// Degrees.
    pub rot_rmse: f64,
    /// Per-pair (translation error, rotation error in degrees).
    pub residuals: Vec<(f64, f64)>,
}

/// Pairs `(est, ref)` matched by nearest timestamp within `tolerance_ns`;
/// each reference pose is used at most once.
pub fn associate(est: &PoseSequence, reference: &PoseSequence, tolerance_ns: u64) -> Vec<(PoseSE3, PoseSE3)> {
    let mut used = vec![false; reference.entries.len()];
    let mut out = Vec::new();
    for e in &est.entries {
        let ts = e.pose.timestamp_ns;
        let i = reference.entries.partition_point(|r| r.pose.timestamp_ns < ts);
        let best = [i.checked_sub(1), Some(i)]
            .into_iter()
            .flatten()
            .filter(|&j| j < reference.entries.len() && !used[j])
            .map(|j| (reference.entries[j].pose.timestamp_ns.abs_diff(ts), j))
            .filter(|(d, _)| *d <= tolerance_ns)
            .min();
        if let Some((_, j)) = best {
            used[j] = true;
            out.push((e.pose, reference.entries[j].pose));
        }
    }
    out
}

/// Rigid `(R, t)` minimizing `Σ |b_i - (R a_i + t)|²` (no scale).
pub fn align_rigid(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> (Matrix3<f64>, Vector3<f64>) {
    let n = a.len() as f64;
    let ca = a.iter().sum::<Vector3<f64>>() / n;
    let cb = b.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for (p, q) in a.iter().zip(b) {
        cov += (q - cb) * (p - ca).transpose();
    }
    let svd = cov.svd(true, true);
    let u = svd.u.expect("requested");
    let vt = svd.v_t.expect("requested");
    let mut s = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let r = u * s * vt;
    (r, cb - r * ca)
}

fn centers(poses: &[PoseSE3]) -> Vec<Vector3<f64>> {
    poses.iter().map(|p| p.camera_center()).collect()
}

pub fn ate(est: &PoseSequence, reference: &PoseSequence) -> Result<AteResult> {
    let pairs = associate(est, reference, ASSOCIATION_TOLERANCE_NS);
    if pairs.len() < 3 {
        return Err(Error::InsufficientOverlap(pairs.len()));
    }
    let (e, r): (Vec<PoseSE3>, Vec<PoseSE3>) = pairs.into_iter().unzip();
    let (a, b) = (centers(&e), centers(&r));
    let (rot, t) = align_rigid(&a, &b);
    let mut errs: Vec<f64> = a.iter().zip(&b).map(|(p, q)| (rot * p + t - q).norm()).collect();
    let n = errs.len() as f64;
    let rmse = (errs.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
    let mean = errs.iter().sum::<f64>() / n;
    errs.sort_by(f64::total_cmp);
    let m = errs.len();
    let median = if m % 2 == 1 {
        errs[m / 2]
    } else {
        0.5 * (errs[m / 2 - 1] + errs[m / 2])
    };
    Ok(AteResult {
        rmse,
        mean,
        median,
        pairs: m,
    })
}

pub fn rpe(est: &PoseSequence, reference: &PoseSequence, delta: usize) -> Result<RpeResult> {
    if delta == 0 {
        return Err(Error::InvalidParameter("rpe frame gap must be at least 1".into()));
    }
    let pairs = associate(est, reference, ASSOCIATION_TOLERANCE_NS);
    if pairs.len() < 3 {
        return Err(Error::InsufficientOverlap(pairs.len()));
    }
    if pairs.len() <= delta {
        return Err(Error::InsufficientOverlap(pairs.len()));
    }
    let residuals: Vec<(f64, f64)> = (0..pairs.len() - delta)
        .map(|i| {
            let (e0, r0) = (pairs[i].0.inverse(), pairs[i].1.inverse());
            let (e1, r1) = (pairs[i + delta].0.inverse(), pairs[i + delta].1.inverse());
            let rel_ref = r0.inverse().compose(&r1);
            let rel_est = e0.inverse().compose(&e1);
            let err = rel_ref.inverse().compose(&rel_est);
            (err.translation.norm(), err.rotation_angle().to_degrees())
        })
        .collect();
    let n = residuals.len() as f64;
    let trans_rmse = (residuals.iter().map(|r| r.0 * r.0).sum::<f64>() / n).sqrt();
    let rot_rmse = (residuals.iter().map(|r| r.1 * r.1).sum::<f64>() / n).sqrt();
    Ok(RpeResult {
        trans_rmse,
        rot_rmse,
        residuals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn random_pose(rng: &mut impl Rng, ts: u64) -> PoseSE3 {
        let q: [f64; 4] = [0; 4].map(|_| rng.gen_range(-1.0..1.0));
        let t = Vector3::new(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0));
        PoseSE3::from_quaternion(q, t, ts).unwrap()
    }

    fn random_seq(rng: &mut impl Rng, n: usize) -> PoseSequence {
        PoseSequence::from_poses((0..n).map(|i| random_pose(rng, i as u64 * 33_000_000)).collect()).unwrap()
    }

    /// Apply a world-frame rigid transform `g` to every pose.
    fn transform_world(seq: &PoseSequence, g: &PoseSE3) -> PoseSequence {
        // world-to-camera T maps to T g^-1
        let gi = g.inverse();
        PoseSequence::from_poses(seq.poses().map(|p| p.compose(&gi).with_timestamp(p.timestamp_ns)).collect()).unwrap()
    }

    #[test]
    fn ate_zero_on_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_seq(&mut rng, 30);
        let r = ate(&s, &s).unwrap();
        assert!(r.rmse < 1e-12 && r.median < 1e-12);
        assert_eq!(r.pairs, 30);
    }

    #[test]
    fn ate_invariant_under_rigid_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let s = random_seq(&mut rng, 40);
            let g = random_pose(&mut rng, 0);
            let moved = transform_world(&s, &g);
            assert!(ate(&moved, &s).unwrap().rmse <= 1e-9);
            assert!(ate(&s, &moved).unwrap().rmse <= 1e-9);
        }
    }

    #[test]
    fn too_few_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_seq(&mut rng, 2);
        assert!(matches!(ate(&a, &a), Err(Error::InsufficientOverlap(2))));
        // shifted beyond the association window
        let b = PoseSequence::from_poses(
            random_seq(&mut rng, 5)
                .poses()
                .map(|p| p.with_timestamp(p.timestamp_ns + 1_000_000_000))
                .collect(),
        )
        .unwrap();
        let c = random_seq(&mut rng, 5);
        assert!(matches!(ate(&b, &c), Err(Error::InsufficientOverlap(0))));
    }

    #[test]
    fn association_window_edge() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = PoseSequence::from_poses((0..5).map(|i| random_pose(&mut rng, i * 100_000_000)).collect()).unwrap();
        let shift = |d: u64| {
            PoseSequence::from_poses(a.poses().map(|p| p.with_timestamp(p.timestamp_ns + d)).collect()).unwrap()
        };
        assert_eq!(associate(&shift(20_000_000), &a, ASSOCIATION_TOLERANCE_NS).len(), 5);
        assert_eq!(associate(&shift(20_000_001), &a, ASSOCIATION_TOLERANCE_NS).len(), 0);
    }

    #[test]
    fn rpe_zero_and_rigid_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = random_seq(&mut rng, 50);
        let r = rpe(&s, &s, 1).unwrap();
        assert_eq!(r.trans_rmse, 0.0);
        assert!(r.rot_rmse < 1e-6);
        let g = random_pose(&mut rng, 0);
        let moved = transform_world(&s, &g);
        let r = rpe(&moved, &s, 3).unwrap();
        assert!(r.trans_rmse < 1e-9 && r.rot_rmse < 1e-6, "{r:?}");
    }

    #[test]
    fn rpe_gap_validation() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = random_seq(&mut rng, 5);
        assert!(matches!(rpe(&s, &s, 0), Err(Error::InvalidParameter(_))));
        assert!(matches!(rpe(&s, &s, 5), Err(Error::InsufficientOverlap(5))));
    }

    #[test]
    fn ate_noise_recovery_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = random_seq(&mut rng, 1000);
        let sigma = 0.05;
        let noise = Normal::new(0.0, sigma).unwrap();
        let noisy = PoseSequence::from_poses(
            s.poses()
                .map(|p| {
                    let c = p.camera_center() + Vector3::from_fn(|_, _| noise.sample(&mut rng));
                    PoseSE3 {
                        rotation: p.rotation,
                        translation: -(p.rotation * c),
                        timestamp_ns: p.timestamp_ns,
                    }
                })
                .collect(),
        )
        .unwrap();
        let r = ate(&noisy, &s).unwrap();
        let expect = sigma * 3f64.sqrt();
        assert!((r.rmse - expect).abs() < 0.1 * expect, "{} vs {expect}", r.rmse);
    }
}
