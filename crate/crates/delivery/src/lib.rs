//! Model delivery: snapshots, deltas and region-of-interest filtered
//! streams pushed to subscribers over WebSocket.

pub mod client;
pub mod client_model;
pub mod conformance;
pub mod control;
pub mod error;
pub mod publisher;
pub mod roi;
pub mod server;
pub mod update;

pub use client::{Applied, DeliveryClient};
pub use client_model::ClientModel;
pub use conformance::{run_all, run_scenario, ConformanceOptions, Scenario, ScenarioReport};
pub use control::{Control, Mode};
pub use error::{Error, Result};
pub use publisher::{ClientId, Outgoing, Publisher, Subscription, QUEUE_DEPTH};
pub use roi::{Roi, RoiBox};
pub use server::{DeliveryServer, SUBPROTOCOL};
pub use update::{diff, snapshot, unix_ns, ModelState, ModelUpdate, UpdateKind};
