//! Frame-centric alignment of GPS and IMU telemetry.

use std::collections::VecDeque;

use nalgebra::{Rotation3, Vector3};

use crate::config::IngestConfig;
use crate::error::{Error, Result};
use crate::sample::{FramePayload, GpsFix, ImuReading, Modality};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Timed<T> {
    pub timestamp_ns: u64,
    pub value: T,
}

impl<T> Timed<T> {
    pub fn new(timestamp_ns: u64, value: T) -> Self {
        Self { timestamp_ns, value }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GpsSource {
    /// A fix carries exactly the frame timestamp.
    Exact,
    /// Linear interpolation between bracketing fixes.
    Interpolated,
    /// Nearest fix within the window, no bracket available.
    Nearest,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignedGps {
    pub fix: GpsFix,
    pub source: GpsSource,
    pub residual_ns: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImuSource {
    /// First frame of a sequence: no interval to integrate over.
    FirstFrame,
    /// Both interval endpoints bracketed by real samples.
    Integrated,
    /// At least one endpoint held at its nearest sample.
    Held,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignedImu {
    pub delta: Rotation3<f64>,
    pub source: ImuSource,
    pub residual_ns: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyncedRecord {
    pub frame: FramePayload,
    pub frame_ts: u64,
    pub gps: Option<AlignedGps>,
    pub imu: Option<AlignedImu>,
}

impl SyncedRecord {
    pub fn residuals(&self) -> impl Iterator<Item = (Modality, u64)> + '_ {
        self.gps
            .map(|g| (Modality::Gps, g.residual_ns))
            .into_iter()
            .chain(self.imu.map(|i| (Modality::Imu, i.residual_ns)))
    }

    pub fn rotation_angle(&self) -> f64 {
        self.imu.map_or(0.0, |i| i.delta.angle())
    }
}

fn dist(a: u64, b: u64) -> u64 {
    a.abs_diff(b)
}

/// Index of the last sample at or before `ts` and the first at or after it.
fn bracket<T>(samples: &[Timed<T>], ts: u64) -> (Option<usize>, Option<usize>) {
    let after = samples.partition_point(|s| s.timestamp_ns < ts);
    let at_or_before = samples.partition_point(|s| s.timestamp_ns <= ts);
    let before = at_or_before.checked_sub(1);
    let after = (after < samples.len()).then_some(after);
    (before, after)
}

fn nearest_distance<T>(samples: &[Timed<T>], ts: u64) -> Option<u64> {
    let (b, a) = bracket(samples, ts);
    let db = b.map(|i| dist(samples[i].timestamp_ns, ts));
    let da = a.map(|i| dist(samples[i].timestamp_ns, ts));
    match (db, da) {
        (Some(x), Some(y)) => Some(x.min(y)),
        (x, y) => x.or(y),
    }
}

fn gap_error<T>(modality: Modality, samples: &[Timed<T>], ts: u64, window_ns: u64) -> Error {
    Error::AlignmentGap {
        modality,
        gap_ns: nearest_distance(samples, ts).unwrap_or(u64::MAX),
        window_ns,
    }
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// `va + (vb - va) * num / den` carried in double-double and rounded once,
/// so an affine signal sampled at a representable value comes out exact.
fn lerp(va: f64, vb: f64, num: u64, den: u64) -> f64 {
    let (n, d) = (num as f64, den as f64);
    let (dh, dl) = two_sum(vb, -va);
    let ph = dh * n;
    let pl = dh.mul_add(n, -ph) + dl * n;
    let qh = ph / d;
    let rem = (-qh).mul_add(d, ph);
    let ql = (rem + pl) / d;
    let (s, e) = two_sum(va, qh);
    s + (e + ql)
}

pub fn align_gps(ts: u64, fixes: &[Timed<GpsFix>], window_ns: u64) -> Result<AlignedGps> {
    let (b, a) = bracket(fixes, ts);
    if let Some(i) = b.filter(|&i| fixes[i].timestamp_ns == ts) {
        return Ok(AlignedGps {
            fix: fixes[i].value,
            source: GpsSource::Exact,
            residual_ns: 0,
        });
    }
    let within = |i: usize| dist(fixes[i].timestamp_ns, ts) <= window_ns;
    match (b.filter(|&i| within(i)), a.filter(|&i| within(i))) {
        (Some(i), Some(j)) => {
            let (ta, tb) = (fixes[i].timestamp_ns, fixes[j].timestamp_ns);
            let (fa, fb) = (fixes[i].value.to_array(), fixes[j].value.to_array());
            let fix = std::array::from_fn(|k| lerp(fa[k], fb[k], ts - ta, tb - ta));
            Ok(AlignedGps {
                fix: GpsFix::from_array(fix),
                source: GpsSource::Interpolated,
                residual_ns: (ts - ta).min(tb - ts),
            })
        }
        (Some(i), None) | (None, Some(i)) => Ok(AlignedGps {
            fix: fixes[i].value,
            source: GpsSource::Nearest,
            residual_ns: dist(fixes[i].timestamp_ns, ts),
        }),
        (None, None) => Err(gap_error(Modality::Gps, fixes, ts, window_ns)),
    }
}

/// Angular velocity at `ts`: interpolated when bracketed within the
/// window, otherwise held from the nearest sample within the window.
fn gyro_at(ts: u64, samples: &[Timed<ImuReading>], window_ns: u64) -> Option<(Vector3<f64>, bool)> {
    let (b, a) = bracket(samples, ts);
    let within = |i: usize| dist(samples[i].timestamp_ns, ts) <= window_ns;
    let g = |i: usize| Vector3::from(samples[i].value.gyro);
    match (b.filter(|&i| within(i)), a.filter(|&i| within(i))) {
        (Some(i), Some(j)) if i == j => Some((g(i), true)),
        (Some(i), Some(j)) => {
            let (ta, tb) = (samples[i].timestamp_ns, samples[j].timestamp_ns);
            let (ga, gb) = (g(i), g(j));
            Some((Vector3::from_fn(|k, _| lerp(ga[k], gb[k], ts - ta, tb - ta)), true))
        }
        (Some(i), None) | (None, Some(i)) => Some((g(i), false)),
        (None, None) => None,
    }
}

/// Trapezoidal integration of angular velocity over `[t0, t1]`, composed
/// segment by segment into a body-frame rotation.
pub fn integrate_gyro(t0: u64, t1: u64, samples: &[Timed<ImuReading>], window_ns: u64) -> Result<(Rotation3<f64>, bool)> {
    let (w0, exact0) = gyro_at(t0, samples, window_ns).ok_or_else(|| gap_error(Modality::Imu, samples, t0, window_ns))?;
    let (w1, exact1) = gyro_at(t1, samples, window_ns).ok_or_else(|| gap_error(Modality::Imu, samples, t1, window_ns))?;
    let mut knots = vec![(t0, w0)];
    knots.extend(
        samples
            .iter()
            .filter(|s| s.timestamp_ns > t0 && s.timestamp_ns < t1)
            .map(|s| (s.timestamp_ns, Vector3::from(s.value.gyro))),
    );
    knots.push((t1, w1));
    let mut r = Rotation3::identity();
    for w in knots.windows(2) {
        let dt = (w[1].0 - w[0].0) as f64 * 1e-9;
        let theta = (w[0].1 + w[1].1) * (0.5 * dt);
        r *= Rotation3::new(theta);
    }
    Ok((r, exact0 && exact1))
}

/// Align telemetry to one frame. `prev_frame_ts` bounds the IMU
/// integration interval; `None` marks the first frame.
pub fn align(
    frame: &FramePayload,
    frame_ts: u64,
    prev_frame_ts: Option<u64>,
    gps: &[Timed<GpsFix>],
    imu: &[Timed<ImuReading>],
    config: &IngestConfig,
) -> Result<SyncedRecord> {
    let w = config.window_ns;
    let gps = match align_gps(frame_ts, gps, w) {
        Ok(g) => Some(g),
        Err(e) if config.require_gps => return Err(e),
        Err(_) => None,
    };
    let imu = match nearest_distance(imu, frame_ts).filter(|&d| d <= w) {
        None if config.require_imu => return Err(gap_error(Modality::Imu, imu, frame_ts, w)),
        None => None,
        Some(residual_ns) => match prev_frame_ts {
            None => Some(AlignedImu {
                delta: Rotation3::identity(),
                source: ImuSource::FirstFrame,
                residual_ns,
            }),
            Some(t0) => match integrate_gyro(t0.min(frame_ts), frame_ts, imu, w) {
                Ok((delta, exact)) => Some(AlignedImu {
                    delta,
                    source: if exact { ImuSource::Integrated } else { ImuSource::Held },
                    residual_ns,
                }),
                Err(e) if config.require_imu => return Err(e),
                Err(_) => None,
            },
        },
    };
    let rec = SyncedRecord {
        frame: frame.clone(),
        frame_ts,
        gps,
        imu,
    };
    debug_assert!(rec.residuals().all(|(_, r)| r <= w));
    Ok(rec)
}

/// Stateful aligner over time-sorted telemetry buffers. Telemetry that can
/// no longer influence a future frame is released after each frame.
#[derive(Debug, Default)]
pub struct Aligner {
    pub gps: VecDeque<Timed<GpsFix>>,
    pub imu: VecDeque<Timed<ImuReading>>,
    prev_frame_ts: Option<u64>,
}

impl Aligner {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_gps(&mut self, s: Timed<GpsFix>) {
        self.gps.push_back(s);
    }

    pub fn push_imu(&mut self, s: Timed<ImuReading>) {
        self.imu.push_back(s);
    }

    pub fn align(&mut self, frame: &FramePayload, frame_ts: u64, config: &IngestConfig) -> Result<SyncedRecord> {
        let rec = align(
            frame,
            frame_ts,
            self.prev_frame_ts,
            self.gps.make_contiguous(),
            self.imu.make_contiguous(),
            config,
        );
        let keep_from = frame_ts.saturating_sub(config.window_ns);
        // the newest sample before the cut still brackets later frames
        while self.gps.len() > 1 && self.gps[1].timestamp_ns <= keep_from {
            self.gps.pop_front();
        }
        while self.imu.len() > 1 && self.imu[1].timestamp_ns <= keep_from {
            self.imu.pop_front();
        }
        self.prev_frame_ts = Some(frame_ts);
        rec
    }
}
