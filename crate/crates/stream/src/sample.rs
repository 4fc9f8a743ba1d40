use std::fmt;
use std::sync::Arc;

use splatstream_core::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modality {
    Frame,
    Gps,
    Imu,
    Control,
}

impl Modality {
    pub fn code(self) -> u8 {
        match self {
            Modality::Frame => 0,
            Modality::Gps => 1,
            Modality::Imu => 2,
            Modality::Control => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Modality::Frame,
            1 => Modality::Gps,
            2 => Modality::Imu,
            3 => Modality::Control,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Frame => "frame",
            Modality::Gps => "gps",
            Modality::Imu => "imu",
            Modality::Control => "control",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Modality::Frame, Modality::Gps, Modality::Imu, Modality::Control]
            .into_iter()
            .find(|m| m.name() == s)
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpsFix {
    pub lat: f64,
    pub lon: f64,
    pub alt: f64,
}

impl GpsFix {
    pub fn to_array(self) -> [f64; 3] {
        [self.lat, self.lon, self.alt]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self {
            lat: a[0],
            lon: a[1],
            alt: a[2],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuReading {
    /// rad/s
    pub gyro: [f64; 3],
    /// m/s²
    pub accel: [f64; 3],
}

/// Encoded frame: sequence number and PNG bytes. Pixels are decoded on
/// demand so queues hold compressed data.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePayload {
    pub seq: u32,
    pub png: Arc<Vec<u8>>,
}

impl FramePayload {
    pub fn decode(&self) -> splatstream_core::Result<Image> {
        Image::decode_png(&self.png)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Frame(FramePayload),
    Gps(GpsFix),
    Imu(ImuReading),
    Control(String),
}

fn be_f64s<const N: usize>(bytes: &[u8]) -> Option<[f64; N]> {
    if bytes.len() != 8 * N {
        return None;
    }
    Some(std::array::from_fn(|i| f64::from_be_bytes(bytes[8 * i..8 * i + 8].try_into().unwrap())))
}

impl Payload {
    pub fn modality(&self) -> Modality {
        match self {
            Payload::Frame(_) => Modality::Frame,
            Payload::Gps(_) => Modality::Gps,
            Payload::Imu(_) => Modality::Imu,
            Payload::Control(_) => Modality::Control,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        match self {
            Payload::Frame(f) => {
                let mut out = Vec::with_capacity(4 + f.png.len());
                out.extend_from_slice(&f.seq.to_be_bytes());
                out.extend_from_slice(&f.png);
                out
            }
            Payload::Gps(g) => g.to_array().iter().flat_map(|v| v.to_be_bytes()).collect(),
            Payload::Imu(r) => r.gyro.iter().chain(&r.accel).flat_map(|v| v.to_be_bytes()).collect(),
            Payload::Control(t) => t.as_bytes().to_vec(),
        }
    }

    /// Parse a payload for `modality`; `None` when malformed. Frame PNG
    /// bytes are checked for the PNG signature only.
    pub fn decode(modality: Modality, bytes: &[u8]) -> Option<Self> {
        Some(match modality {
            Modality::Frame => {
                const PNG_SIG: &[u8] = b"\x89PNG\r\n\x1a\n";
                if bytes.len() < 4 + PNG_SIG.len() || &bytes[4..4 + PNG_SIG.len()] != PNG_SIG {
                    return None;
                }
                Payload::Frame(FramePayload {
                    seq: u32::from_be_bytes(bytes[..4].try_into().unwrap()),
                    png: Arc::new(bytes[4..].to_vec()),
                })
            }
            Modality::Gps => Payload::Gps(GpsFix::from_array(be_f64s::<3>(bytes)?)),
            Modality::Imu => {
                let v = be_f64s::<6>(bytes)?;
                Payload::Imu(ImuReading {
                    gyro: [v[0], v[1], v[2]],
                    accel: [v[3], v[4], v[5]],
                })
            }
            Modality::Control => Payload::Control(String::from_utf8(bytes.to_vec()).ok()?),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimedSample {
    pub timestamp_ns: u64,
    pub payload: Payload,
}

impl TimedSample {
    pub fn new(timestamp_ns: u64, payload: Payload) -> Self {
        Self { timestamp_ns, payload }
    }

    pub fn modality(&self) -> Modality {
        self.payload.modality()
    }
}

/// Parse `key=value` pairs separated by whitespace.
pub fn parse_control(text: &str) -> Vec<(&str, &str)> {
    text.split_whitespace().filter_map(|kv| kv.split_once('=')).collect()
}
