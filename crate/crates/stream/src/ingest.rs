//! Receiving side: message decoding with skip bookkeeping, per-modality
//! queues and the TCP listener.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Instant;

use crate::align::Timed;
use crate::config::IngestConfig;
use crate::error::{Error, Result};
use crate::queue::{BoundedQueue, OccupancyMonitor, Overflow};
use crate::sample::{FramePayload, GpsFix, ImuReading, Modality, Payload, TimedSample};
use crate::wire::{decode_payload, Decoded, Message, MessageReader, SkipReason};

pub const BIND_ENV: &str = "SPST_BIND";
pub const DEFAULT_BIND: &str = "127.0.0.1:7400";

/// Listen address: explicit flag, then `SPST_BIND`, then the default.
pub fn resolve_bind(flag: Option<&str>) -> String {
    flag.map(str::to_owned)
        .or_else(|| std::env::var(BIND_ENV).ok().filter(|s| !s.is_empty()))
        .unwrap_or_else(|| DEFAULT_BIND.to_owned())
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestStats {
    pub yielded: u64,
    pub skipped: u64,
    pub skip_reasons: BTreeMap<String, u64>,
}

impl IngestStats {
    fn skip(&mut self, reason: SkipReason) {
        self.skipped += 1;
        *self.skip_reasons.entry(format!("{reason:?}")).or_default() += 1;
    }

    pub fn total(&self) -> u64 {
        self.yielded + self.skipped
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum IngestEvent {
    Sample(TimedSample),
    Control(String),
}

/// Decodes a byte stream into samples in arrival order. Malformed messages
/// (framing, checksum, payload shape, per-modality time or sequence
/// regressions) are counted and skipped. A read error ends the stream with
/// [`Error::StreamEnded`] carrying the counts so far.
pub struct IngestStream<R> {
    reader: MessageReader<R>,
    stats: IngestStats,
    last_ts: BTreeMap<Modality, u64>,
    last_seq: Option<u32>,
    ended: bool,
}

impl<R: Read> IngestStream<R> {
    pub fn new(source: R) -> Self {
        Self {
            reader: MessageReader::new(source),
            stats: IngestStats::default(),
            last_ts: BTreeMap::new(),
            last_seq: None,
            ended: false,
        }
    }

    pub fn stats(&self) -> &IngestStats {
        &self.stats
    }

    fn accept(&mut self, msg: Message) -> std::result::Result<IngestEvent, SkipReason> {
        let (modality, payload) = match decode_payload(&msg) {
            Some(x) => x,
            None if Modality::from_code(msg.modality).is_none() => return Err(SkipReason::UnknownModality),
            None => return Err(SkipReason::BadPayload),
        };
        if let Payload::Control(text) = payload {
            return Ok(IngestEvent::Control(text));
        }
        if self.last_ts.get(&modality).is_some_and(|&t| msg.timestamp_ns < t) {
            return Err(SkipReason::OutOfOrder);
        }
        if let Payload::Frame(f) = &payload {
            if self.last_seq.is_some_and(|s| f.seq <= s) {
                return Err(SkipReason::OutOfOrder);
            }
            self.last_seq = Some(f.seq);
        }
        self.last_ts.insert(modality, msg.timestamp_ns);
        Ok(IngestEvent::Sample(TimedSample::new(msg.timestamp_ns, payload)))
    }

    /// Next accepted event, or the skip that consumed a message.
    pub fn next_decoded(&mut self) -> Option<Result<std::result::Result<IngestEvent, SkipReason>>> {
        if self.ended {
            return None;
        }
        match self.reader.read() {
            Ok(None) => {
                self.ended = true;
                None
            }
            Ok(Some(Decoded::Skipped(r))) => {
                self.stats.skip(r);
                Some(Ok(Err(r)))
            }
            Ok(Some(Decoded::Message(m))) => {
                let r = self.accept(m);
                match &r {
                    Ok(_) => self.stats.yielded += 1,
                    Err(reason) => self.stats.skip(*reason),
                }
                Some(Ok(r))
            }
            Err(e) => {
                self.ended = true;
                Some(Err(Error::StreamEnded {
                    yielded: self.stats.yielded,
                    skipped: self.stats.skipped,
                    reason: e.to_string(),
                }))
            }
        }
    }
}

impl<R: Read> Iterator for IngestStream<R> {
    type Item = Result<IngestEvent>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            match self.next_decoded()? {
                Ok(Ok(ev)) => return Some(Ok(ev)),
                Ok(Err(_)) => continue,
                Err(e) => return Some(Err(e)),
            }
        }
    }
}

pub fn ingest_stream<R: Read>(source: R) -> IngestStream<R> {
    IngestStream::new(source)
}

#[derive(Debug, Clone)]
pub struct FrameArrival {
    pub timestamp_ns: u64,
    pub frame: FramePayload,
    pub arrived: Instant,
}

/// Queues fed by one connection's receiving thread.
#[derive(Debug)]
pub struct SessionQueues {
    pub frames: BoundedQueue<FrameArrival>,
    pub gps: BoundedQueue<Timed<GpsFix>>,
    pub imu: BoundedQueue<Timed<ImuReading>>,
    pub stats: Mutex<IngestStats>,
    pub resolution_requests: Mutex<u32>,
}

impl SessionQueues {
    pub fn new(config: &IngestConfig) -> Self {
        Self {
            frames: BoundedQueue::new(config.frame_capacity, Overflow::DropOldest),
            gps: BoundedQueue::new(config.gps_capacity, Overflow::Block),
            imu: BoundedQueue::new(config.imu_capacity, Overflow::Block),
            stats: Mutex::new(IngestStats::default()),
            resolution_requests: Mutex::new(0),
        }
    }

    pub fn close(&self) {
        self.frames.close();
        self.gps.close();
        self.imu.close();
    }

    pub fn is_finished(&self) -> bool {
        self.frames.is_finished() && self.gps.is_finished() && self.imu.is_finished()
    }
}

pub struct Session {
    pub peer: SocketAddr,
    pub queues: Arc<SessionQueues>,
    handle: Option<JoinHandle<Result<IngestStats>>>,
}

impl Session {
    /// Wait for the receiving thread; returns its final counts.
    pub fn join(mut self) -> Result<IngestStats> {
        self.handle.take().expect("joined once").join().expect("receiver thread panicked")
    }
}

fn receive(stream: TcpStream, queues: Arc<SessionQueues>, config: IngestConfig) -> Result<IngestStats> {
    let mut writer = stream.try_clone()?;
    let _ = stream.set_nodelay(true);
    let epoch = Instant::now();
    let mut monitor = OccupancyMonitor::new(config.resolution_occupancy, config.resolution_hold_ns);
    let mut ingest = IngestStream::new(stream);
    let mut write_ok = true;
    let result = loop {
        let item = match ingest.next_decoded() {
            None => break Ok(()),
            Some(Err(e)) => break Err(e),
            Some(Ok(x)) => x,
        };
        if let Ok(IngestEvent::Sample(s)) = item {
            match s.payload {
                Payload::Frame(frame) => {
                    queues.frames.push(FrameArrival {
                        timestamp_ns: s.timestamp_ns,
                        frame,
                        arrived: Instant::now(),
                    });
                }
                Payload::Gps(fix) => {
                    queues.gps.push(Timed::new(s.timestamp_ns, fix));
                }
                Payload::Imu(r) => {
                    queues.imu.push(Timed::new(s.timestamp_ns, r));
                }
                Payload::Control(_) => {}
            }
        }
        *queues.stats.lock().unwrap() = ingest.stats().clone();
        let now = epoch.elapsed().as_nanos() as u64;
        let mut reply = Vec::new();
        Message::control(now, &format!("ack={}", ingest.stats().total())).encode_into(&mut reply);
        if monitor.observe(queues.frames.occupancy(), now) {
            *queues.resolution_requests.lock().unwrap() += 1;
            log::info!("frame queue saturated; requesting half resolution");
            Message::control(now, "resolution=half").encode_into(&mut reply);
        }
        if write_ok && writer.write_all(&reply).is_err() {
            // the sender may have closed its read side; keep receiving
            write_ok = false;
        }
    };
    queues.close();
    let stats = ingest.stats().clone();
    *queues.stats.lock().unwrap() = stats.clone();
    result.map(|_| stats)
}

pub struct IngestServer {
    listener: TcpListener,
    config: IngestConfig,
}

impl IngestServer {
    pub fn bind(addr: impl ToSocketAddrs, config: IngestConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            listener: TcpListener::bind(addr)?,
            config,
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    pub fn set_nonblocking(&self, nonblocking: bool) -> Result<()> {
        Ok(self.listener.set_nonblocking(nonblocking)?)
    }

    /// Accept one publisher and start its receiving thread.
    pub fn accept(&self) -> Result<Session> {
        let (stream, peer) = self.listener.accept()?;
        stream.set_nonblocking(false)?;
        let queues = Arc::new(SessionQueues::new(&self.config));
        let q = queues.clone();
        let config = self.config.clone();
        let handle = std::thread::Builder::new()
            .name(format!("ingest-{peer}"))
            .spawn(move || receive(stream, q, config))?;
        Ok(Session {
            peer,
            queues,
            handle: Some(handle),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wire::encode_sample;
    use splatstream_core::Image;

    fn frame(seq: u32, ts: u64) -> TimedSample {
        let png = Image::filled(2, 2, [0.25; 3]).encode_png().unwrap();
        TimedSample::new(
            ts,
            Payload::Frame(FramePayload {
                seq,
                png: Arc::new(png),
            }),
        )
    }

    fn gps(ts: u64) -> TimedSample {
        TimedSample::new(
            ts,
            Payload::Gps(GpsFix {
                lat: 1.0,
                lon: 2.0,
                alt: 3.0,
            }),
        )
    }

    #[test]
    fn three_samples_in_order() {
        let samples = [frame(0, 10), gps(15), frame(1, 20)];
        let bytes: Vec<u8> = samples.iter().flat_map(encode_sample).collect();
        let got: Vec<_> = ingest_stream(&bytes[..]).map(|e| e.unwrap()).collect();
        let want: Vec<_> = samples.iter().cloned().map(IngestEvent::Sample).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn corrupted_middle_message() {
        let mut bytes = encode_sample(&frame(0, 10));
        let mut mid = encode_sample(&gps(15));
        mid[20] ^= 1;
        bytes.extend(mid);
        bytes.extend(encode_sample(&frame(1, 20)));
        let mut s = ingest_stream(&bytes[..]);
        let n = s.by_ref().count();
        assert_eq!(n, 2);
        assert_eq!(s.stats().skipped, 1);
        assert_eq!(s.stats().skip_reasons.get("Checksum"), Some(&1));
    }

    #[test]
    fn regressions_are_skipped() {
        let bytes: Vec<u8> = [frame(0, 10), frame(0, 11), gps(20), gps(19), frame(2, 5)]
            .iter()
            .flat_map(encode_sample)
            .collect();
        let mut s = ingest_stream(&bytes[..]);
        assert_eq!(s.by_ref().count(), 2);
        assert_eq!(s.stats().skip_reasons.get("OutOfOrder"), Some(&3));
    }

    #[test]
    fn reset_reports_partial_counts() {
        struct Broken(Vec<u8>, bool);
        impl Read for Broken {
            fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
                if self.1 {
                    return Err(std::io::ErrorKind::ConnectionReset.into());
                }
                self.1 = true;
                buf[..self.0.len()].copy_from_slice(&self.0);
                Ok(self.0.len())
            }
        }
        let bytes: Vec<u8> = [frame(0, 10), gps(15)].iter().flat_map(encode_sample).collect();
        let items: Vec<_> = ingest_stream(Broken(bytes, false)).collect();
        assert_eq!(items.len(), 3);
        assert!(matches!(items[2], Err(Error::StreamEnded { yielded: 2, skipped: 0, .. })));
    }

    #[test]
    fn bind_precedence() {
        assert_eq!(resolve_bind(Some("0.0.0.0:1")), "0.0.0.0:1");
    }
}
