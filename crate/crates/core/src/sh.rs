//! Real spherical harmonics through degree 3.
//!
//! Basis order is `l = 0..=3`, `m = -l..=l`, Condon-Shortley phase included,
//! matching the constants used by the common 3DGS PLY layout.

use crate::error::{Error, Result};
use crate::splat::{sh_coeff_count, MAX_SH_DEGREE};

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const SH_C1: f64 = 0.488_602_511_902_919_9;
pub const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
pub const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Offset added to the DC band so a zero coefficient renders mid-gray.
pub const DC_OFFSET: f64 = 0.5;

pub fn rgb_to_dc(v: f64) -> f64 {
    (v - DC_OFFSET) / SH_C0
}

pub fn dc_to_rgb(c: f64) -> f64 {
    c * SH_C0 + DC_OFFSET
}

/// Basis values at `dir` (assumed unit length). Entries past
/// `(degree + 1)²` are zero.
pub fn basis(degree: u8, dir: [f64; 3]) -> [f64; 16] {
    let mut out = [0.0; 16];
    let [x, y, z] = dir;
    out[0] = SH_C0;
    if degree == 0 {
        return out;
    }
    out[1] = -SH_C1 * y;
    out[2] = SH_C1 * z;
    out[3] = -SH_C1 * x;
    if degree == 1 {
        return out;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let (xy, yz, xz) = (x * y, y * z, x * z);
    out[4] = SH_C2[0] * xy;
    out[5] = SH_C2[1] * yz;
    out[6] = SH_C2[2] * (2.0 * zz - xx - yy);
    out[7] = SH_C2[3] * xz;
    out[8] = SH_C2[4] * (xx - yy);
    if degree == 2 {
        return out;
    }
    out[9] = SH_C3[0] * y * (3.0 * xx - yy);
    out[10] = SH_C3[1] * xy * z;
    out[11] = SH_C3[2] * y * (4.0 * zz - xx - yy);
    out[12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
    out[13] = SH_C3[4] * x * (4.0 * zz - xx - yy);
    out[14] = SH_C3[5] * z * (xx - yy);
    out[15] = SH_C3[6] * x * (xx - 3.0 * yy);
    out
}

/// Partial derivatives of each basis polynomial with respect to the
/// direction components `(x, y, z)`, treated as free variables.
pub fn basis_grad(degree: u8, dir: [f64; 3]) -> [[f64; 3]; 16] {
    let mut g = [[0.0; 3]; 16];
    if degree == 0 {
        return g;
    }
    let [x, y, z] = dir;
    g[1] = [0.0, -SH_C1, 0.0];
    g[2] = [0.0, 0.0, SH_C1];
    g[3] = [-SH_C1, 0.0, 0.0];
    if degree == 1 {
        return g;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    g[4] = [SH_C2[0] * y, SH_C2[0] * x, 0.0];
    g[5] = [0.0, SH_C2[1] * z, SH_C2[1] * y];
    g[6] = [-2.0 * SH_C2[2] * x, -2.0 * SH_C2[2] * y, 4.0 * SH_C2[2] * z];
    g[7] = [SH_C2[3] * z, 0.0, SH_C2[3] * x];
    g[8] = [2.0 * SH_C2[4] * x, -2.0 * SH_C2[4] * y, 0.0];
    if degree == 2 {
        return g;
    }
    g[9] = [
        SH_C3[0] * 6.0 * x * y,
        SH_C3[0] * (3.0 * xx - 3.0 * yy),
        0.0,
    ];
    g[10] = [SH_C3[1] * y * z, SH_C3[1] * x * z, SH_C3[1] * x * y];
    g[11] = [
        SH_C3[2] * (-2.0 * x * y),
        SH_C3[2] * (4.0 * zz - xx - 3.0 * yy),
        SH_C3[2] * 8.0 * y * z,
    ];
    g[12] = [
        SH_C3[3] * (-6.0 * x * z),
        SH_C3[3] * (-6.0 * y * z),
        SH_C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy),
    ];
    g[13] = [
        SH_C3[4] * (4.0 * zz - 3.0 * xx - yy),
        SH_C3[4] * (-2.0 * x * y),
        SH_C3[4] * 8.0 * x * z,
    ];
    g[14] = [
        SH_C3[5] * 2.0 * x * z,
        SH_C3[5] * (-2.0 * y * z),
        SH_C3[5] * (xx - yy),
    ];
    g[15] = [
        SH_C3[6] * (3.0 * xx - 3.0 * yy),
        SH_C3[6] * (-6.0 * x * y),
        0.0,
    ];
    g
}

/// Degree implied by a coefficient slice of length `3 (d + 1)²`.
pub fn stored_degree(len: usize) -> Result<u8> {
    (0..=MAX_SH_DEGREE)
        .find(|&d| 3 * sh_coeff_count(d) == len)
        .ok_or_else(|| Error::InvalidParameter(format!("{len} is not a valid sh coefficient count")))
}

/// View-dependent color `0.5 + Σ c·Y(dir)`, clamped below at zero.
///
/// `sh` uses the coefficient-major layout `[k * 3 + channel]`.
pub fn eval_sh<T: Copy + Into<f64>>(sh: &[T], view_dir: [f64; 3], degree: u8) -> Result<[f64; 3]> {
    let stored = stored_degree(sh.len())?;
    if degree > stored {
        return Err(Error::InvalidParameter(format!(
            "requested sh degree {degree} above stored degree {stored}"
        )));
    }
    let y = basis(degree, view_dir);
    let mut rgb = [DC_OFFSET; 3];
    for (k, yk) in y.iter().enumerate().take(sh_coeff_count(degree)) {
        for (c, v) in rgb.iter_mut().enumerate() {
            *v += sh[k * 3 + c].into() * yk;
        }
    }
    Ok(rgb.map(|v| v.max(0.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Real SH from associated Legendre polynomials in spherical
    /// coordinates; independent of the polynomial tables above.
    fn reference_basis(l: i32, m: i32, dir: [f64; 3]) -> f64 {
        fn factorial(n: i32) -> f64 {
            (1..=n).map(|v| v as f64).product()
        }
        // P_l^m(x) with Condon-Shortley phase, m >= 0
        fn legendre(l: i32, m: i32, x: f64) -> f64 {
            let mut pmm = 1.0;
            if m > 0 {
                let somx2 = ((1.0 - x) * (1.0 + x)).sqrt();
                let mut fact = 1.0;
                for _ in 0..m {
                    pmm *= -fact * somx2;
                    fact += 2.0;
                }
            }
            if l == m {
                return pmm;
            }
            let mut pmmp1 = x * (2 * m + 1) as f64 * pmm;
            if l == m + 1 {
                return pmmp1;
            }
            let mut pll = 0.0;
            for ll in (m + 2)..=l {
                pll = ((2 * ll - 1) as f64 * x * pmmp1 - (ll + m - 1) as f64 * pmm) / (ll - m) as f64;
                pmm = pmmp1;
                pmmp1 = pll;
            }
            pll
        }
        let theta = dir[2].clamp(-1.0, 1.0).acos();
        let phi = dir[1].atan2(dir[0]);
        let am = m.abs();
        let k = (((2 * l + 1) as f64 / (4.0 * std::f64::consts::PI)) * factorial(l - am) / factorial(l + am)).sqrt();
        let p = legendre(l, am, theta.cos());
        match m.cmp(&0) {
            std::cmp::Ordering::Equal => k * p,
            std::cmp::Ordering::Greater => std::f64::consts::SQRT_2 * k * (am as f64 * phi).cos() * p,
            std::cmp::Ordering::Less => std::f64::consts::SQRT_2 * k * (am as f64 * phi).sin() * p,
        }
    }

    fn random_dir(rng: &mut impl Rng) -> [f64; 3] {
        loop {
            let v = [0; 3].map(|_| rng.gen_range(-1.0..1.0));
            let n: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if n > 0.2 && n <= 1.0 {
                return v.map(|a| a / n);
            }
        }
    }

    #[test]
    fn dc_zero_is_mid_gray() {
        let sh = [0.0f64; 3];
        for dir in [[1.0, 0.0, 0.0], [0.0, 0.0, -1.0]] {
            assert_eq!(eval_sh(&sh, dir, 0).unwrap(), [0.5, 0.5, 0.5]);
        }
    }

    #[test]
    fn dc_unit_red() {
        let sh = [1.0 / 0.28209479177, 0.0, 0.0];
        let rgb = eval_sh(&sh, [0.0, 1.0, 0.0], 0).unwrap();
        assert!((rgb[0] - 1.5).abs() < 1e-10);
        assert_eq!(rgb[1], 0.5);
    }

    #[test]
    fn degree_above_stored_rejected() {
        let sh = [0.0f64; 12];
        assert!(eval_sh(&sh, [0.0, 0.0, 1.0], 1).is_ok());
        assert!(matches!(eval_sh(&sh, [0.0, 0.0, 1.0], 2), Err(Error::InvalidParameter(_))));
        assert!(eval_sh(&[0.0f64; 5], [0.0, 0.0, 1.0], 0).is_err());
    }

    #[test]
    fn negative_colors_clamp_to_zero() {
        let sh = [-10.0f64, 0.0, 0.0];
        assert_eq!(eval_sh(&sh, [0.0, 0.0, 1.0], 0).unwrap()[0], 0.0);
    }

    #[test]
    fn basis_matches_legendre_construction() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let d = random_dir(&mut rng);
            let table = basis(3, d);
            let mut k = 0;
            for l in 0..=3 {
                for m in -l..=l {
                    let r = reference_basis(l, m, d);
                    assert!((table[k] - r).abs() < 1e-12, "l={l} m={m}: {} vs {r}", table[k]);
                    k += 1;
                }
            }
        }
    }

    #[test]
    fn antipodal_parity_degree_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let d = random_dir(&mut rng);
            let neg = d.map(|v| -v);
            let a = basis(2, d);
            let b = basis(2, neg);
            for l in 0..=2usize {
                for k in l * l..(l + 1) * (l + 1) {
                    let sign = if l % 2 == 0 { 1.0 } else { -1.0 };
                    assert!((a[k] - sign * b[k]).abs() < 1e-14);
                }
            }
            // color from random coefficients: even part shared, odd part flips
            let sh: Vec<f64> = (0..27).map(|_| rng.gen_range(-0.3..0.3)).collect();
            let even: Vec<f64> = sh.iter().enumerate().map(|(i, v)| if (1..4).contains(&(i / 3)) { 0.0 } else { *v }).collect();
            let e1 = eval_sh(&even, d, 2).unwrap();
            let e2 = eval_sh(&even, neg, 2).unwrap();
            for c in 0..3 {
                assert!((e1[c] - e2[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn degree_zero_is_direction_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sh = [0.3f64, -0.2, 0.9];
        let base = eval_sh(&sh, [0.0, 0.0, 1.0], 0).unwrap();
        for _ in 0..20 {
            assert_eq!(eval_sh(&sh, random_dir(&mut rng), 0).unwrap(), base);
        }
    }

    #[test]
    fn basis_gradient_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = 1e-6;
        for _ in 0..30 {
            let d = random_dir(&mut rng);
            let g = basis_grad(3, d);
            for axis in 0..3 {
                let mut p = d;
                let mut m = d;
                p[axis] += h;
                m[axis] -= h;
                let bp = basis(3, p);
                let bm = basis(3, m);
                for k in 0..16 {
                    let num = (bp[k] - bm[k]) / (2.0 * h);
                    assert!((num - g[k][axis]).abs() < 1e-7, "k={k} axis={axis}");
                }
            }
        }
    }

    #[test]
    fn dc_conversion_inverts() {
        for v in [0.0, 0.25, 0.5, 1.0] {
            assert!((dc_to_rgb(rgb_to_dc(v)) - v).abs() < 1e-15);
        }
        assert_eq!(rgb_to_dc(0.5), 0.0);
    }
}
