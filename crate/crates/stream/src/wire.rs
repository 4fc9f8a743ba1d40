//! Length-prefixed binary framing:
//! `"SPST" | ver u8 | modality u8 | ts u64 BE | len u32 BE | payload | crc32c u32 BE`,
//! with the checksum covering header and payload.

use std::io::{self, Read};

use crate::sample::{Modality, Payload, TimedSample};

pub const MAGIC: &[u8; 4] = b"SPST";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 18;
pub const TRAILER_LEN: usize = 4;
/// Declared lengths above this are treated as corruption.
pub const MAX_PAYLOAD: usize = 64 << 20;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub modality: u8,
    pub timestamp_ns: u64,
    pub payload: Vec<u8>,
}

impl Message {
    pub fn new(modality: Modality, timestamp_ns: u64, payload: Vec<u8>) -> Self {
        Self {
            modality: modality.code(),
            timestamp_ns,
            payload,
        }
    }

    pub fn control(timestamp_ns: u64, text: &str) -> Self {
        Self::new(Modality::Control, timestamp_ns, text.as_bytes().to_vec())
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.payload.len() + TRAILER_LEN
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.encode_into(&mut out);
        out
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        let start = out.len();
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(self.modality);
        out.extend_from_slice(&self.timestamp_ns.to_be_bytes());
        out.extend_from_slice(&(self.payload.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.payload);
        let crc = crc32c::crc32c(&out[start..]);
        out.extend_from_slice(&crc.to_be_bytes());
    }
}

pub fn encode_sample(sample: &TimedSample) -> Vec<u8> {
    Message::new(sample.modality(), sample.timestamp_ns, sample.payload.encode()).encode()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SkipReason {
    BadMagic,
    BadVersion,
    Oversized,
    Checksum,
    UnknownModality,
    BadPayload,
    Truncated,
    OutOfOrder,
}

#[derive(Debug)]
pub enum Decoded {
    Message(Message),
    Skipped(SkipReason),
}

/// Incremental decoder. Feed bytes with [`push`](Self::push) and drain
/// with [`next_message`](Self::next_message); after the peer closes, call
/// [`finish`](Self::finish) to flush what is left.
///
/// A damaged message is skipped by scanning for the next magic after its
/// first byte, so a corrupted length field costs one message, not the rest
/// of the stream. Each contiguous run of discarded bytes counts once.
#[derive(Debug, Default)]
pub struct Decoder {
    buf: Vec<u8>,
    pos: usize,
    eof: bool,
    discarding: bool,
    pending_skips: u64,
}

impl Decoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        if self.pos > 0 && self.pos * 2 >= self.buf.len() {
            self.buf.drain(..self.pos);
            self.pos = 0;
        }
        self.buf.extend_from_slice(bytes);
    }

    pub fn finish(&mut self) {
        self.eof = true;
    }

    pub fn buffered(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn find_magic(&self, from: usize) -> Option<usize> {
        self.buf[from..].windows(4).position(|w| w == MAGIC).map(|i| from + i)
    }

    /// Drop the message at `pos` and move to the next candidate magic.
    /// Returns the skip only when it starts a new discarded run; damaged
    /// headers inside the discarded bytes are queued as further skips.
    fn resync(&mut self, reason: SkipReason) -> Option<Decoded> {
        let fresh = !self.discarding;
        let from = self.pos + 1;
        let end = match self.find_magic(from) {
            Some(next) => {
                self.discarding = false;
                next
            }
            None => {
                let keep = if self.eof { 0 } else { magic_suffix(&self.buf[from..]) };
                self.discarding = true;
                self.buf.len() - keep
            }
        };
        self.pending_skips += count_damaged_headers(&self.buf[from..end.max(from)]);
        self.pos = end;
        fresh.then_some(Decoded::Skipped(reason))
    }

    pub fn next_message(&mut self) -> Option<Decoded> {
        if self.pending_skips > 0 {
            self.pending_skips -= 1;
            return Some(Decoded::Skipped(SkipReason::BadMagic));
        }
        loop {
            let avail = self.buffered();
            if avail == 0 {
                if self.eof {
                    self.discarding = false;
                }
                return None;
            }
            let head = &self.buf[self.pos..];
            let skip = if !head.iter().zip(MAGIC).all(|(a, b)| a == b) {
                SkipReason::BadMagic
            } else if avail < HEADER_LEN {
                if !self.eof {
                    return None;
                }
                SkipReason::Truncated
            } else if head[4] != VERSION {
                SkipReason::BadVersion
            } else {
                let len = u32::from_be_bytes(head[14..18].try_into().unwrap()) as usize;
                let total = HEADER_LEN + len + TRAILER_LEN;
                if len > MAX_PAYLOAD {
                    SkipReason::Oversized
                } else if avail < total {
                    if !self.eof {
                        return None;
                    }
                    SkipReason::Truncated
                } else {
                    let crc = u32::from_be_bytes(head[HEADER_LEN + len..total].try_into().unwrap());
                    if crc32c::crc32c(&head[..HEADER_LEN + len]) != crc {
                        SkipReason::Checksum
                    } else {
                        let msg = Message {
                            modality: head[5],
                            timestamp_ns: u64::from_be_bytes(head[6..14].try_into().unwrap()),
                            payload: head[HEADER_LEN..HEADER_LEN + len].to_vec(),
                        };
                        self.pos += total;
                        self.discarding = false;
                        return Some(Decoded::Message(msg));
                    }
                }
            };
            if let Some(d) = self.resync(skip) {
                return Some(d);
            }
            if self.pending_skips > 0 {
                return self.next_message();
            }
        }
    }
}

/// Headers with exactly one damaged magic byte and an intact version.
fn count_damaged_headers(region: &[u8]) -> u64 {
    region
        .windows(5)
        .filter(|w| w[4] == VERSION && w[..4].iter().zip(MAGIC).filter(|(a, b)| a == b).count() == 3)
        .count() as u64
}

/// Length of the longest suffix of `bytes` that is a proper prefix of the magic.
fn magic_suffix(bytes: &[u8]) -> usize {
    (1..MAGIC.len())
        .rev()
        .find(|&k| bytes.len() >= k && bytes[bytes.len() - k..] == MAGIC[..k])
        .unwrap_or(0)
}

/// Blocking reader over any byte source.
pub struct MessageReader<R> {
    inner: R,
    decoder: Decoder,
    chunk: Vec<u8>,
    done: bool,
}

impl<R: Read> MessageReader<R> {
    pub fn new(inner: R) -> Self {
        Self {
            inner,
            decoder: Decoder::new(),
            chunk: vec![0; 64 * 1024],
            done: false,
        }
    }

    pub fn get_ref(&self) -> &R {
        &self.inner
    }

    /// Next decoded item; `Ok(None)` at a clean end of stream.
    pub fn read(&mut self) -> io::Result<Option<Decoded>> {
        loop {
            if let Some(d) = self.decoder.next_message() {
                return Ok(Some(d));
            }
            if self.done {
                return Ok(None);
            }
            match self.inner.read(&mut self.chunk) {
                Ok(0) => {
                    self.done = true;
                    self.decoder.finish();
                }
                Ok(n) => self.decoder.push(&self.chunk[..n]),
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => {
                    self.done = true;
                    self.decoder.finish();
                    return Err(e);
                }
            }
        }
    }
}

pub fn decode_payload(msg: &Message) -> Option<(Modality, Payload)> {
    let modality = Modality::from_code(msg.modality)?;
    Payload::decode(modality, &msg.payload).map(|p| (modality, p))
}
