#[path = "support/mutations.rs"]
mod mutations;

use mutations::{check_sequence, mutate, random_box, roi_oracle};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use splatstream_delivery::{diff, snapshot, ClientModel, ModelState, ModelUpdate, Roi};

#[test]
fn delta_chain_matches_snapshot_over_random_sequences() {
    let mut deltas = 0;
    for seed in 0..200 {
        let s = check_sequence(seed).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
        deltas += s.deltas_applied;
    }
    // the runs must actually exercise the delta path
    assert!(deltas > 1000, "{deltas}");
}

#[test]
fn hundred_interleaved_deltas_equal_final_snapshot() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut next = 0;
    let mut state = ModelState {
        revision: 1,
        sh_degree: 2,
        ..Default::default()
    };
    state = mutate(&mut rng, &state, &mut next);
    let mut client = ClientModel::new();
    client.apply(&snapshot(&state, 1.0, None, 0)).unwrap();
    for _ in 0..100 {
        let next_state = mutate(&mut rng, &state, &mut next);
        let d = diff(&state, &next_state, 1.0, None, 0);
        client.apply(&ModelUpdate::decode(&d.encode()).unwrap()).unwrap();
        state = next_state;
    }
    let mut fresh = ClientModel::new();
    fresh.apply(&snapshot(&state, 1.0, None, 0)).unwrap();
    assert!(client.state().bit_eq(fresh.state()));
    assert_eq!(client.revision(), state.revision);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn roi_snapshot_is_set_intersection(seed in any::<u64>(), cell_size in 0.1f32..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut next = 0;
        let base = ModelState { revision: 1, sh_degree: 0, ..Default::default() };
        let mut state = base;
        for _ in 0..5 {
            state = mutate(&mut rng, &state, &mut next);
        }
        let b = random_box(&mut rng);
        let roi = Roi::from_box(&b, cell_size);
        let s = snapshot(&state, cell_size, Some(&roi), 0);
        let got: std::collections::BTreeSet<u64> = s.added.iter().map(|g| g.id).collect();
        prop_assert_eq!(got, roi_oracle(&state, &b, cell_size));
    }

    #[test]
    fn delta_then_apply_reaches_target(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut next = 0;
        let a = mutate(&mut rng, &ModelState { revision: 1, sh_degree: 1, ..Default::default() }, &mut next);
        let b = mutate(&mut rng, &a, &mut next);
        let mut c = ClientModel::new();
        c.apply(&snapshot(&a, 1.0, None, 0)).unwrap();
        let d = diff(&a, &b, 1.0, None, 0);
        // ID sets are pairwise disjoint
        prop_assert!(d.validate().is_ok());
        c.apply(&d).unwrap();
        prop_assert!(c.state().bit_eq(&b));
    }
}
