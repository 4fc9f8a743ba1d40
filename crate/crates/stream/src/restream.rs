//! Capture manifests and paced replay over the wire format.

use std::fs;
use std::io::Write;
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splatstream_core::Image;

use crate::error::{Error, Result};
use crate::sample::{parse_control, FramePayload, GpsFix, ImuReading, Modality, Payload, TimedSample};
use crate::wire::{encode_sample, Decoded, MessageReader};

pub const MANIFEST_NAME: &str = "manifest.txt";

/// A prerecorded capture: time-ordered samples with frames loaded as PNG
/// bytes. Frame sequence numbers follow manifest order.
#[derive(Debug, Clone, Default)]
pub struct Capture {
    pub samples: Vec<TimedSample>,
}

fn parse_floats<const N: usize>(fields: &[&str]) -> Option<[f64; N]> {
    if fields.len() != N {
        return None;
    }
    let mut out = [0.0; N];
    for (o, f) in out.iter_mut().zip(fields) {
        *o = f.parse().ok()?;
    }
    Some(out)
}

impl Capture {
    /// Read `<dir>/manifest.txt`: one `<timestamp_ns> <modality> <rest>`
    /// record per line, `#` comments. Frames reference PNG files relative
    /// to `dir`; gps carries `lat lon alt`, imu `wx wy wz ax ay az`.
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_NAME);
        let text = fs::read_to_string(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.clone()),
            _ => e.into(),
        })?;
        let err = |line: usize, message: String| Error::Manifest {
            path: path.clone(),
            line,
            message,
        };
        let mut samples = Vec::new();
        let mut seq = 0u32;
        let mut last_ts: [Option<u64>; 4] = [None; 4];
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() < 3 {
                return Err(err(line_no, "expected `<timestamp_ns> <modality> <data>`".into()));
            }
            let ts: u64 = fields[0].parse().map_err(|_| err(line_no, format!("bad timestamp `{}`", fields[0])))?;
            let modality = Modality::parse(fields[1]).ok_or_else(|| err(line_no, format!("unknown modality `{}`", fields[1])))?;
            let rest = &fields[2..];
            let payload = match modality {
                Modality::Frame => {
                    if rest.len() != 1 {
                        return Err(err(line_no, "frame record takes one path".into()));
                    }
                    let file = dir.join(rest[0]);
                    let png = fs::read(&file).map_err(|_| Error::MissingFile(file.clone()))?;
                    let p = Payload::Frame(FramePayload {
                        seq,
                        png: Arc::new(png),
                    });
                    seq += 1;
                    p
                }
                Modality::Gps => Payload::Gps(GpsFix::from_array(
                    parse_floats::<3>(rest).ok_or_else(|| err(line_no, "gps record takes 3 numbers".into()))?,
                )),
                Modality::Imu => {
                    let v = parse_floats::<6>(rest).ok_or_else(|| err(line_no, "imu record takes 6 numbers".into()))?;
                    Payload::Imu(ImuReading {
                        gyro: [v[0], v[1], v[2]],
                        accel: [v[3], v[4], v[5]],
                    })
                }
                Modality::Control => Payload::Control(rest.join(" ")),
            };
            let slot = &mut last_ts[modality.code() as usize];
            if slot.is_some_and(|t| ts < t) {
                return Err(err(line_no, format!("{modality} timestamp goes backwards")));
            }
            *slot = Some(ts);
            samples.push(TimedSample::new(ts, payload));
        }
        Ok(Self { samples })
    }

    /// Write a capture directory with one PNG per frame.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut manifest = String::new();
        for s in &self.samples {
            let rest = match &s.payload {
                Payload::Frame(f) => {
                    let name = format!("frame_{:06}.png", f.seq);
                    fs::write(dir.join(&name), &*f.png)?;
                    name
                }
                Payload::Gps(g) => format!("{:?} {:?} {:?}", g.lat, g.lon, g.alt),
                Payload::Imu(r) => r.gyro.iter().chain(&r.accel).map(|v| format!("{v:?}")).collect::<Vec<_>>().join(" "),
                Payload::Control(t) => t.clone(),
            };
            manifest.push_str(&format!("{} {} {}\n", s.timestamp_ns, s.modality(), rest));
        }
        let tmp = dir.join(format!("{MANIFEST_NAME}.tmp"));
        fs::write(&tmp, manifest)?;
        fs::rename(tmp, dir.join(MANIFEST_NAME))?;
        Ok(())
    }

    pub fn frame_count(&self) -> usize {
        self.samples.iter().filter(|s| s.modality() == Modality::Frame).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RestreamOptions {
    pub rate: f64,
    /// Uniform send-time jitter, ± this many milliseconds.
    pub jitter_ms: f64,
    pub seed: u64,
    /// How long to wait for outstanding acks after the last send.
    pub ack_timeout: Duration,
}

impl Default for RestreamOptions {
    fn default() -> Self {
        Self {
            rate: 1.0,
            jitter_ms: 0.0,
            seed: 0,
            ack_timeout: Duration::from_secs(2),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LatencySummary {
    pub count: usize,
    pub min_ms: f64,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
}

impl LatencySummary {
    pub fn from_ms(mut v: Vec<f64>) -> Self {
        if v.is_empty() {
            return Self::default();
        }
        v.sort_by(f64::total_cmp);
        let pct = |p: f64| v[((v.len() - 1) as f64 * p).round() as usize];
        Self {
            count: v.len(),
            min_ms: v[0],
            mean_ms: v.iter().sum::<f64>() / v.len() as f64,
            p50_ms: pct(0.5),
            p95_ms: pct(0.95),
            max_ms: v[v.len() - 1],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TransmissionReport {
    pub sent: u64,
    pub acked: u64,
    pub duration: Duration,
    pub latency: LatencySummary,
    pub resolution_halvings: u32,
}

/// Send offsets from the first sample: timestamps scaled by `1 / rate`,
/// jittered, then made non-decreasing within each modality.
pub fn schedule(samples: &[TimedSample], opts: &RestreamOptions) -> Vec<Duration> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let t0 = samples.iter().map(|s| s.timestamp_ns).min().unwrap_or(0);
    let mut last: [f64; 4] = [0.0; 4];
    samples
        .iter()
        .map(|s| {
            let base = (s.timestamp_ns - t0) as f64 / opts.rate;
            let j = if opts.jitter_ms > 0.0 {
                rng.gen_range(-opts.jitter_ms..=opts.jitter_ms) * 1e6
            } else {
                0.0
            };
            let slot = &mut last[s.modality().code() as usize];
            let t = (base + j).max(0.0).max(*slot);
            *slot = t;
            Duration::from_nanos(t as u64)
        })
        .collect()
}

fn shrink_frame(f: &FramePayload, halvings: u32) -> Result<FramePayload> {
    if halvings == 0 {
        return Ok(f.clone());
    }
    let mut img = Image::decode_png(&f.png)?;
    for _ in 0..halvings {
        if img.width() < 2 || img.height() < 2 {
            break;
        }
        img = img.downsample2();
    }
    Ok(FramePayload {
        seq: f.seq,
        png: Arc::new(img.encode_png()?),
    })
}

/// Replay `capture` to `addr`. Each receiver ack `ack=<n>` confirms the
/// first `n` messages; latency is send-to-ack wall time.
pub fn restream(capture: &Capture, addr: impl ToSocketAddrs, opts: &RestreamOptions) -> Result<TransmissionReport> {
    if !(opts.rate > 0.0 && opts.rate.is_finite()) {
        return Err(Error::InvalidParameter("rate multiplier must be positive".into()));
    }
    if !(opts.jitter_ms >= 0.0) {
        return Err(Error::InvalidParameter("jitter must be non-negative".into()));
    }
    let offsets = schedule(&capture.samples, opts);
    let mut order: Vec<usize> = (0..offsets.len()).collect();
    order.sort_by_key(|&i| (offsets[i], i));

    let mut stream = TcpStream::connect(addr)?;
    let _ = stream.set_nodelay(true);
    let reader = stream.try_clone()?;
    let halvings = Arc::new(AtomicU32::new(0));
    let sent_at: Arc<Mutex<Vec<Instant>>> = Arc::new(Mutex::new(Vec::with_capacity(order.len())));
    let acks = {
        let halvings = halvings.clone();
        let sent_at = sent_at.clone();
        std::thread::spawn(move || {
            let mut lat = Vec::new();
            let mut acked = 0u64;
            let mut r = MessageReader::new(reader);
            while let Ok(Some(d)) = r.read() {
                let Decoded::Message(m) = d else { continue };
                let Some((_, Payload::Control(text))) = crate::wire::decode_payload(&m) else { continue };
                let now = Instant::now();
                for (k, v) in parse_control(&text) {
                    match (k, v) {
                        ("ack", n) => {
                            let Ok(n) = n.parse::<u64>() else { continue };
                            let sent = sent_at.lock().unwrap();
                            while acked < n && (acked as usize) < sent.len() {
                                lat.push((now - sent[acked as usize]).as_secs_f64() * 1e3);
                                acked += 1;
                            }
                        }
                        ("resolution", "half") => {
                            halvings.fetch_add(1, Ordering::SeqCst);
                        }
                        _ => {}
                    }
                }
            }
            (acked, lat)
        })
    };

    let start = Instant::now();
    let mut buf = Vec::new();
    for &i in &order {
        let due = start + offsets[i];
        let now = Instant::now();
        if due > now {
            std::thread::sleep(due - now);
        }
        let s = &capture.samples[i];
        let s = match &s.payload {
            Payload::Frame(f) => {
                let h = halvings.load(Ordering::SeqCst);
                TimedSample::new(s.timestamp_ns, Payload::Frame(shrink_frame(f, h)?))
            }
            _ => s.clone(),
        };
        buf.clear();
        buf.extend(encode_sample(&s));
        sent_at.lock().unwrap().push(Instant::now());
        stream.write_all(&buf)?;
    }
    let duration = start.elapsed();
    let sent = order.len() as u64;
    stream.shutdown(Shutdown::Write)?;
    // the receiver closes after its last ack; bound the wait regardless
    let deadline = Instant::now() + opts.ack_timeout;
    while !acks.is_finished() && Instant::now() < deadline {
        std::thread::sleep(Duration::from_millis(2));
    }
    let _ = stream.shutdown(Shutdown::Both);
    let (acked, lat) = acks.join().expect("ack reader panicked");
    Ok(TransmissionReport {
        sent,
        acked,
        duration,
        latency: LatencySummary::from_ms(lat),
        resolution_halvings: halvings.load(Ordering::SeqCst),
    })
}

pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join(MANIFEST_NAME)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let png = Image::filled(3, 2, [0.2, 0.4, 0.6]).encode_png().unwrap();
        let cap = Capture {
            samples: vec![
                TimedSample::new(
                    0,
                    Payload::Frame(FramePayload {
                        seq: 0,
                        png: Arc::new(png),
                    }),
                ),
                TimedSample::new(
                    5,
                    Payload::Gps(GpsFix {
                        lat: 47.123456789,
                        lon: -1.0 / 3.0,
                        alt: 12.5,
                    }),
                ),
                TimedSample::new(
                    6,
                    Payload::Imu(ImuReading {
                        gyro: [0.1, 0.2, 0.3],
                        accel: [1e-7, 0.0, 9.81],
                    }),
                ),
            ],
        };
        cap.save(dir.path()).unwrap();
        let back = Capture::load(dir.path()).unwrap();
        assert_eq!(back.samples, cap.samples);
    }

    #[test]
    fn missing_inputs_fail_before_sending() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(Capture::load(dir.path()), Err(Error::MissingFile(_))));
        fs::write(dir.path().join(MANIFEST_NAME), "0 frame nope.png\n").unwrap();
        assert!(matches!(Capture::load(dir.path()), Err(Error::MissingFile(_))));
    }

    #[test]
    fn manifest_errors_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(MANIFEST_NAME), "# header\n0 gps 1 2 3\n1 gps 1 2\n").unwrap();
        match Capture::load(dir.path()) {
            Err(Error::Manifest { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        fs::write(dir.path().join(MANIFEST_NAME), "10 gps 1 2 3\n5 gps 1 2 3\n").unwrap();
        assert!(matches!(Capture::load(dir.path()), Err(Error::Manifest { line: 2, .. })));
    }

    #[test]
    fn schedule_scales_and_never_reorders() {
        let samples: Vec<_> = (0..200)
            .map(|i| {
                let p = if i % 2 == 0 {
                    Payload::Gps(GpsFix::from_array([0.0; 3]))
                } else {
                    Payload::Control(String::new())
                };
                TimedSample::new(i * 5_000_000, p)
            })
            .collect();
        let plain = schedule(&samples, &RestreamOptions { rate: 2.0, ..Default::default() });
        assert_eq!(plain[10], Duration::from_nanos(25_000_000));
        let jittered = schedule(
            &samples,
            &RestreamOptions {
                jitter_ms: 20.0,
                ..Default::default()
            },
        );
        for m in [0, 1] {
            let t: Vec<_> = jittered.iter().skip(m).step_by(2).collect();
            assert!(t.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn latency_summary() {
        let s = LatencySummary::from_ms(vec![3.0, 1.0, 2.0]);
        assert_eq!((s.min_ms, s.p50_ms, s.max_ms, s.mean_ms), (1.0, 2.0, 3.0, 2.0));
    }
}
