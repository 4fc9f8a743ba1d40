//! Stream ingest: the `SPST` wire format, per-modality queues, telemetry
//! alignment, frame decimation and capture replay.

pub mod align;
pub mod config;
pub mod decimate;
pub mod error;
pub mod ingest;
pub mod queue;
pub mod restream;
pub mod sample;
pub mod wire;

pub use align::{align, Aligner, SyncedRecord, Timed};
pub use config::{Decimation, IngestConfig};
pub use decimate::{decimate, Decimator};
pub use error::{Error, Result};
pub use ingest::{ingest_stream, IngestEvent, IngestServer, IngestStats, Session};
pub use restream::{restream, Capture, RestreamOptions, TransmissionReport};
pub use sample::{FramePayload, GpsFix, ImuReading, Modality, Payload, TimedSample};
