//! Randomized publish/ack/resubscribe runs through the in-memory publisher,
//! with every update passed through the wire codec. Each client's final
//! state is compared against a from-scratch snapshot of the server model and
//! against a set-intersection oracle for its ROI.

#![allow(dead_code)]

use std::collections::{BTreeSet, VecDeque};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use splatstream_core::splat::{cell_coords, sh_coeff_count};
use splatstream_core::Gaussian3D;
use splatstream_delivery::{
    snapshot, ClientModel, Mode, ModelState, ModelUpdate, Outgoing, Publisher, Roi, RoiBox, UpdateKind,
};

fn rand_f32(rng: &mut impl Rng) -> f32 {
    match rng.gen_range(0..10) {
        0 => 0.0,
        1 => -0.0,
        2 => f32::from_bits(rng.gen_range(1..0x0080_0000)),
        _ => rng.gen_range(-3.0..3.0),
    }
}

fn gaussian(rng: &mut impl Rng, id: u64, sh_degree: u8) -> Gaussian3D {
    Gaussian3D {
        id,
        position: [0; 3].map(|_| rng.gen_range(-4.0..4.0)),
        rotation: [0; 4].map(|_| rand_f32(rng)),
        log_scale: [0; 3].map(|_| rand_f32(rng)),
        sh: (0..3 * sh_coeff_count(sh_degree)).map(|_| rand_f32(rng)).collect(),
        opacity_logit: rand_f32(rng),
    }
}

fn tweak(rng: &mut impl Rng, g: &mut Gaussian3D) {
    let f: &mut f32 = match rng.gen_range(0..5) {
        0 => &mut g.position[rng.gen_range(0..3)],
        1 => &mut g.rotation[rng.gen_range(0..4)],
        2 => &mut g.log_scale[rng.gen_range(0..3)],
        3 => &mut g.opacity_logit,
        _ => {
            let n = g.sh.len();
            &mut g.sh[rng.gen_range(0..n)]
        }
    };
    *f = match rng.gen_range(0..3) {
        // smallest possible change
        0 => f32::from_bits(f.to_bits() ^ 1),
        1 => -*f,
        _ => rand_f32(rng),
    };
}

pub fn mutate(rng: &mut impl Rng, s: &ModelState, next_id: &mut u64) -> ModelState {
    let mut t = s.clone();
    t.revision += rng.gen_range(1..=3);
    let ids: Vec<u64> = t.gaussians.keys().copied().collect();
    for id in ids {
        match rng.gen_range(0..20) {
            0 | 1 => {
                t.gaussians.remove(&id);
            }
            2..=4 => tweak(rng, t.gaussians.get_mut(&id).unwrap()),
            _ => {}
        }
    }
    for _ in 0..rng.gen_range(0..6) {
        t.gaussians.insert(*next_id, gaussian(rng, *next_id, t.sh_degree));
        *next_id += 1;
    }
    t
}

pub fn random_box(rng: &mut impl Rng) -> RoiBox {
    let lo: [f32; 3] = [0; 3].map(|_| rng.gen_range(-4.0..3.0));
    let hi = lo.map(|v| v + rng.gen_range(0.05..4.0));
    RoiBox::new(lo, hi).unwrap()
}

/// IDs whose grid cell lies inside the box's covering cells, computed by
/// comparing integer cell coordinates directly.
pub fn roi_oracle(s: &ModelState, b: &RoiBox, cell_size: f32) -> BTreeSet<u64> {
    let lo = cell_coords(b.min, cell_size);
    let hi = cell_coords(b.max, cell_size);
    s.gaussians
        .values()
        .filter(|g| {
            let c = cell_coords(g.position, cell_size);
            (0..3).all(|k| lo[k] <= c[k] && c[k] <= hi[k])
        })
        .map(|g| g.id)
        .collect()
}

struct SimClient {
    mode: Mode,
    roi: Option<RoiBox>,
    model: ClientModel,
    // messages tagged with the subscription epoch they were sent in
    inbox: VecDeque<(u32, Vec<u8>)>,
    acks: VecDeque<u64>,
    epoch: u32,
    last_to: Option<(u32, u64)>,
}

fn deliver(clients: &mut [SimClient], out: Vec<Outgoing>) {
    for o in out {
        let c = &mut clients[o.client as usize];
        c.inbox.push_back((c.epoch, o.update.encode()));
    }
}

/// Receive one message; returns an error string on any protocol violation.
fn receive(c: &mut SimClient, idx: usize) -> Result<(), String> {
    let Some((epoch, bytes)) = c.inbox.pop_front() else {
        return Ok(());
    };
    let u = ModelUpdate::decode(&bytes).map_err(|e| format!("client {idx}: decode: {e}"))?;
    match c.last_to {
        Some((e, prev)) if e == epoch && u.revision_to <= prev => {
            return Err(format!("client {idx}: revision_to {} after {prev}", u.revision_to));
        }
        None | Some(_) if u.kind != UpdateKind::Snapshot && c.last_to.map_or(true, |(e, _)| e != epoch) => {
            return Err(format!("client {idx}: epoch {epoch} opened with a delta"));
        }
        _ => {}
    }
    if c.mode == Mode::Replace && u.kind == UpdateKind::Delta {
        return Err(format!("client {idx}: replace client got a delta"));
    }
    c.last_to = Some((epoch, u.revision_to));
    c.model.apply(&u).map_err(|e| format!("client {idx}: apply: {e}"))?;
    c.acks.push_back(u.revision_to);
    Ok(())
}

#[derive(Debug, Default)]
pub struct SequenceStats {
    pub publishes: usize,
    pub deltas_applied: usize,
}

/// One randomized sequence. `Err` names the violated property.
pub fn check_sequence(seed: u64) -> Result<SequenceStats, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sh_degree = rng.gen_range(0..=3u8);
    let cell_size = rng.gen_range(0.25f32..2.0);
    let mut p = Publisher::new(cell_size).unwrap();
    let mut next_id = 0;
    let mut state = ModelState {
        revision: 1,
        sh_degree,
        gaussians: Default::default(),
    };
    for _ in 0..rng.gen_range(0..40) {
        state.gaussians.insert(next_id, gaussian(&mut rng, next_id, sh_degree));
        next_id += 1;
    }
    let mut stats = SequenceStats::default();
    p.publish_state(state.clone(), 0).unwrap();

    let mut clients: Vec<SimClient> = (0..4)
        .map(|i| SimClient {
            mode: if i % 2 == 0 { Mode::Merge } else { Mode::Replace },
            roi: (i >= 2).then(|| random_box(&mut rng)),
            model: ClientModel::new(),
            inbox: VecDeque::new(),
            acks: VecDeque::new(),
            epoch: 0,
            last_to: None,
        })
        .collect();
    let subs: Vec<(Mode, Option<RoiBox>)> = clients.iter().map(|c| (c.mode, c.roi)).collect();
    for (i, (mode, roi)) in subs.into_iter().enumerate() {
        let out = p.subscribe(i as u64, mode, roi.map(|b| Roi::from_box(&b, cell_size)));
        deliver(&mut clients, out);
    }

    let steps = rng.gen_range(20..60);
    for _ in 0..steps {
        if rng.gen_bool(0.5) {
            state = mutate(&mut rng, &state, &mut next_id);
            let out = p.publish_state(state.clone(), 0).unwrap();
            stats.publishes += 1;
            deliver(&mut clients, out);
        }
        for i in 0..clients.len() {
            for _ in 0..rng.gen_range(0..3) {
                let before = clients[i].model.revision();
                let had = !clients[i].inbox.is_empty();
                receive(&mut clients[i], i)?;
                if had && clients[i].model.revision() != before {
                    stats.deltas_applied += 1;
                }
            }
            if rng.gen_bool(0.6) {
                if let Some(rev) = clients[i].acks.pop_front() {
                    let out = p.ack(i as u64, rev).map_err(|e| e.to_string())?;
                    deliver(&mut clients, out);
                }
            }
            match rng.gen_range(0..100) {
                0 | 1 => {
                    let roi = clients[i].roi.map(|_| random_box(&mut rng));
                    clients[i].roi = roi;
                    clients[i].epoch += 1;
                    let out = p.subscribe(i as u64, clients[i].mode, roi.map(|b| Roi::from_box(&b, cell_size)));
                    deliver(&mut clients, out);
                }
                2 => {
                    clients[i].epoch += 1;
                    let out = p.ack(i as u64, u64::MAX - 7).map_err(|e| e.to_string())?;
                    deliver(&mut clients, out);
                }
                _ => {}
            }
        }
    }

    // quiesce: deliver and ack everything
    loop {
        let mut progressed = false;
        for i in 0..clients.len() {
            while !clients[i].inbox.is_empty() {
                receive(&mut clients[i], i)?;
                progressed = true;
            }
            while let Some(rev) = clients[i].acks.pop_front() {
                let out = p.ack(i as u64, rev).map_err(|e| e.to_string())?;
                deliver(&mut clients, out);
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }

    for (i, c) in clients.iter().enumerate() {
        let roi = c.roi.map(|b| Roi::from_box(&b, cell_size));
        let mut fresh = ClientModel::new();
        fresh.apply(&snapshot(&state, cell_size, roi.as_ref(), 0)).unwrap();
        if !c.model.state().bit_eq(fresh.state()) {
            return Err(format!(
                "client {i} ({:?}, roi {}) differs from snapshot path: {} vs {} gaussians",
                c.mode,
                c.roi.is_some(),
                c.model.len(),
                fresh.len()
            ));
        }
        let expect: BTreeSet<u64> = match &c.roi {
            Some(b) => roi_oracle(&state, b, cell_size),
            None => state.gaussians.keys().copied().collect(),
        };
        let got: BTreeSet<u64> = c.model.gaussians().keys().copied().collect();
        if got != expect {
            return Err(format!("client {i}: ROI id set differs from oracle"));
        }
    }
    Ok(stats)
}
