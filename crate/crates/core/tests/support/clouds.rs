//! Random clouds for persistence tests, including awkward bit patterns
//! (negative zero, subnormals, extreme magnitudes) and non-sequential IDs.

#![allow(dead_code)]

use std::collections::HashSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use splatstream_core::splat::SplatCloud;
use splatstream_core::synthetic::{random_cloud, GaussianRanges};

fn awkward(rng: &mut impl Rng, v: f32) -> f32 {
    match rng.gen_range(0..12) {
        0 => -0.0,
        1 => f32::MIN_POSITIVE / 8.0,
        2 => -f32::MAX / 2.0,
        3 => f32::from_bits(rng.gen_range(1..0x0080_0000)),
        _ => v,
    }
}

pub fn random_store_cloud(seed: u64) -> SplatCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = match rng.gen_range(0..10) {
        0 => 0,
        1 => 1,
        _ => rng.gen_range(2..120),
    };
    let degree = rng.gen_range(0..=3);
    let mut cloud = random_cloud(&mut rng, n, degree, &GaussianRanges::default());
    for g in cloud.gaussians_mut() {
        if rng.gen_bool(0.3) {
            for v in g.position.iter_mut().chain(g.sh.iter_mut()) {
                *v = awkward(&mut rng, *v);
            }
            g.opacity_logit = awkward(&mut rng, g.opacity_logit);
            // rotations must stay non-degenerate, scales finite
            g.rotation[1] = awkward(&mut rng, g.rotation[1]);
            g.log_scale[0] = awkward(&mut rng, g.log_scale[0]).clamp(-60.0, 60.0);
        }
    }
    if n > 3 && rng.gen_bool(0.5) {
        let drop: HashSet<u64> = cloud.gaussians().iter().filter(|_| rng.gen_bool(0.3)).map(|g| g.id).collect();
        cloud.remove_ids(&drop);
    }
    if rng.gen_bool(0.7) {
        cloud.build_tiling(rng.gen_range(0.05f32..2.0));
    }
    cloud
}

pub fn bit_identical(a: &SplatCloud, b: &SplatCloud) -> bool {
    a.sh_degree() == b.sh_degree()
        && a.len() == b.len()
        && a.ids() == b.ids()
        && a.gaussians().iter().zip(b.gaussians()).all(|(x, y)| x.bit_eq(y))
}
