use std::sync::Arc;

use nalgebra::{Rotation3, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splatstream_core::Image;
use splatstream_stream::align::{align_gps, integrate_gyro, AlignedImu, GpsSource, ImuSource};
use splatstream_stream::wire::encode_sample;
use splatstream_stream::{
    decimate, ingest_stream, Decimation, FramePayload, GpsFix, ImuReading, Payload, SyncedRecord, Timed, TimedSample,
};

fn random_sample(rng: &mut ChaCha8Rng, ts: u64, seq: &mut u32) -> TimedSample {
    let payload = match rng.gen_range(0..4) {
        0 => {
            *seq += 1;
            let bytes: Vec<u8> = (0..rng.gen_range(0..64)).map(|_| rng.gen()).collect();
            let mut png = b"\x89PNG\r\n\x1a\n".to_vec();
            png.extend(bytes);
            Payload::Frame(FramePayload {
                seq: *seq,
                png: Arc::new(png),
            })
        }
        1 => Payload::Gps(GpsFix::from_array([rng.gen(), rng.gen(), rng.gen()])),
        2 => Payload::Imu(ImuReading {
            gyro: [rng.gen(), rng.gen(), rng.gen()],
            accel: [rng.gen(), rng.gen(), rng.gen()],
        }),
        _ => Payload::Control(format!("note={}", rng.gen::<u32>())),
    };
    TimedSample::new(ts, payload)
}

#[test]
fn fuzzed_stream_bookkeeping() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut bytes = Vec::new();
        let mut seq = 0;
        let mut corrupted = 0;
        for i in 0..1000u64 {
            let mut msg = encode_sample(&random_sample(&mut rng, i * 1_000_000, &mut seq));
            if rng.gen_bool(0.15) {
                let at = rng.gen_range(0..msg.len());
                msg[at] ^= rng.gen_range(1..=255u8);
                corrupted += 1;
            }
            bytes.extend(msg);
        }
        let mut s = ingest_stream(&bytes[..]);
        let yielded = s.by_ref().filter(|e| e.is_ok()).count() as u64;
        let stats = s.stats();
        assert_eq!(yielded, stats.yielded);
        assert_eq!(stats.yielded + stats.skipped, 1000, "seed {seed}: {stats:?}");
        assert_eq!(stats.skipped, corrupted, "seed {seed}: {stats:?}");
    }
}

const STEP: f64 = 1.0 / 1048576.0;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    /// Affine signals with dyadic slopes are reproduced bit-exactly
    /// whenever bracketing fixes exist.
    #[test]
    fn gps_affine_exact(
        t0 in 0u64..1_000_000_000_000,
        spacing in 1u64..40_000_000,
        count in 2usize..20,
        frac in 0.0f64..1.0,
        slopes in prop::array::uniform3(-64i32..64),
        bases in prop::array::uniform3(-1_000_000i64..1_000_000),
    ) {
        let value = |t: u64, k: usize| bases[k] as f64 * STEP + (t - t0) as f64 * slopes[k] as f64 * STEP;
        let fixes: Vec<_> = (0..count as u64)
            .map(|i| {
                let t = t0 + i * spacing;
                Timed::new(t, GpsFix::from_array([value(t, 0), value(t, 1), value(t, 2)]))
            })
            .collect();
        let span = spacing * (count as u64 - 1);
        let ts = t0 + (frac * span as f64) as u64;
        let g = align_gps(ts, &fixes, spacing).unwrap();
        prop_assert_ne!(g.source, GpsSource::Nearest);
        prop_assert!(g.residual_ns <= spacing);
        prop_assert_eq!(g.fix.to_array(), [value(ts, 0), value(ts, 1), value(ts, 2)]);
    }

    #[test]
    fn constant_rotation_closed_form(
        axis in prop::array::uniform3(-1.0f64..1.0),
        rate in 0.0f64..3.0,
        dt_ms in 1u64..20,
        span_ms in 10u64..1000,
    ) {
        let a = Vector3::from(axis);
        prop_assume!(a.norm() > 0.1);
        let w = a.normalize() * rate;
        let imu: Vec<_> = (0..=span_ms / dt_ms + 1)
            .map(|i| Timed::new(i * dt_ms * 1_000_000, ImuReading { gyro: w.into(), accel: [0.0; 3] }))
            .collect();
        let (r, exact) = integrate_gyro(0, span_ms * 1_000_000, &imu, 50_000_000).unwrap();
        prop_assert!(exact);
        let expected = Rotation3::new(w * (span_ms as f64 * 1e-3));
        prop_assert!((r.matrix() - expected.matrix()).abs().max() <= 1e-9);
    }
}

/// Horizontal sinusoid panned by a known shift per frame.
fn pan_frame(offset: f64) -> Image {
    Image::from_fn(48, 32, |x, y| {
        let u = (x as f64 + offset) * 0.35;
        let v = 0.5 + 0.4 * (u.sin() * (y as f64 * 0.2).cos());
        [v, 1.0 - v, 0.5]
    })
}

fn scalar_mean_abs_diff(a: &Image, b: &Image) -> f64 {
    let mut sum = 0.0;
    for y in 0..a.height() {
        for x in 0..a.width() {
            let (p, q) = (a.pixel(x, y), b.pixel(x, y));
            for c in 0..3 {
                sum += (p[c] - q[c]).abs();
            }
        }
    }
    sum / (a.width() * a.height() * 3) as f64
}

#[test]
fn adaptive_matches_scalar_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut offset = 0.0;
    let mut records = Vec::new();
    let mut yaws = Vec::new();
    for i in 0..60u32 {
        // bursts of fast motion between slow drifts
        let shift = if (i / 10) % 2 == 0 { rng.gen_range(0.0..0.3) } else { rng.gen_range(1.0..3.0) };
        offset += shift;
        let yaw = rng.gen_range(0.0..0.02);
        yaws.push(yaw);
        let img = pan_frame(offset);
        records.push(SyncedRecord {
            frame: FramePayload {
                seq: i,
                png: Arc::new(img.encode_png16().unwrap()),
            },
            frame_ts: i as u64 * 33_000_000,
            gps: None,
            imu: Some(AlignedImu {
                delta: Rotation3::from_axis_angle(&Vector3::z_axis(), yaw),
                source: ImuSource::Integrated,
                residual_ns: 0,
            }),
        });
    }
    let (pt, rt) = (0.05, 0.05);
    let kept: Vec<u32> = decimate(
        records.clone(),
        Decimation::Adaptive {
            pixel_threshold: pt,
            rotation_threshold: rt,
        },
    )
    .unwrap()
    .iter()
    .map(|r| r.frame.seq)
    .collect();

    let frames: Vec<Image> = records.iter().map(|r| Image::decode_png(&r.frame.png).unwrap()).collect();
    let mut oracle = vec![0u32];
    let mut last = 0usize;
    let mut yaw_sum = 0.0;
    for i in 1..frames.len() {
        yaw_sum += yaws[i];
        if scalar_mean_abs_diff(&frames[last], &frames[i]) > pt || yaw_sum > rt {
            oracle.push(i as u32);
            last = i;
            yaw_sum = 0.0;
        }
    }
    assert!(oracle.len() > 5 && oracle.len() < 55, "{oracle:?}");
    assert_eq!(kept, oracle);
}
