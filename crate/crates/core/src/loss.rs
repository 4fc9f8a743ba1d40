//! Photometric training loss: `(1 - λ) L1 + λ (1 - SSIM)`.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics::ssim_with_grad;

pub const DEFAULT_SSIM_WEIGHT: f64 = 0.2;

#[derive(Debug, Clone)]
pub struct Loss {
    pub value: f64,
    pub l1: f64,
    pub ssim: f64,
    /// `∂loss/∂rendered`, same shape as the inputs.
    pub grad: Image,
}

pub fn photometric_loss(rendered: &Image, target: &Image) -> Result<Loss> {
    photometric_loss_weighted(rendered, target, DEFAULT_SSIM_WEIGHT)
}

pub fn photometric_loss_weighted(rendered: &Image, target: &Image, lambda: f64) -> Result<Loss> {
    if !rendered.same_shape(target) {
        return Err(Error::InvalidParameter(format!(
            "rendered {}x{} vs target {}x{}",
            rendered.width(),
            rendered.height(),
            target.width(),
            target.height()
        )));
    }
    let n = rendered.data().len() as f64;
    let mut grad = Image::new(rendered.width(), rendered.height());
    let mut l1 = 0.0;
    for ((g, r), t) in grad.data_mut().iter_mut().zip(rendered.data()).zip(target.data()) {
        let d = r - t;
        l1 += d.abs();
        // sign(0) = 0
        *g = (1.0 - lambda) * if d > 0.0 { 1.0 } else if d < 0.0 { -1.0 } else { 0.0 } / n;
    }
    l1 /= n;
    let (ssim, ssim_value) = if lambda != 0.0 {
        let (s, sg) = ssim_with_grad(rendered, target)?;
        for (g, d) in grad.data_mut().iter_mut().zip(sg.data()) {
            *g -= lambda * d;
        }
        (s, lambda * (1.0 - s))
    } else {
        (f64::NAN, 0.0)
    };
    Ok(Loss {
        value: (1.0 - lambda) * l1 + ssim_value,
        l1,
        ssim,
        grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_images_have_zero_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = Image::from_fn(16, 16, |_, _| [rng.gen(), rng.gen(), rng.gen()]);
        let l = photometric_loss(&a, &a).unwrap();
        assert_eq!(l.value, 0.0);
        assert!(l.grad.data().iter().all(|g| g.abs() < 1e-15), "{:?}", l.grad.data().iter().cloned().fold(0.0f64, |m, v| m.max(v.abs())));
    }

    #[test]
    fn l1_of_constant_offset() {
        let a = Image::filled(12, 12, [0.3; 3]);
        let b = Image::filled(12, 12, [0.4; 3]);
        let l = photometric_loss_weighted(&a, &b, 0.0).unwrap();
        assert!((l.value - 0.1).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch() {
        assert!(matches!(
            photometric_loss(&Image::new(12, 12), &Image::new(12, 13)),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn gradient_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = Image::from_fn(15, 13, |_, _| [rng.gen(), rng.gen(), rng.gen()]);
        let b = Image::from_fn(15, 13, |_, _| [rng.gen(), rng.gen(), rng.gen()]);
        let l = photometric_loss(&a, &b).unwrap();
        let h = 1e-7;
        for _ in 0..50 {
            let i = rng.gen_range(0..a.data().len());
            let mut ap = a.clone();
            ap.data_mut()[i] += h;
            let mut am = a.clone();
            am.data_mut()[i] -= h;
            let num = (photometric_loss(&ap, &b).unwrap().value - photometric_loss(&am, &b).unwrap().value) / (2.0 * h);
            let an = l.grad.data()[i];
            assert!((num - an).abs() <= 1e-4 * an.abs(), "{num} vs {an}");
        }
    }
}
