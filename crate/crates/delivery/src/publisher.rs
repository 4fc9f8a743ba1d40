//! Transport-free fan-out: decides which update each subscriber gets and
//! when, given publishes, acks and resync requests.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use splatstream_core::SplatCloud;

use crate::control::Mode;
use crate::error::{Error, Result};
use crate::roi::Roi;
use crate::update::{diff, snapshot, ModelState, ModelUpdate};

pub type ClientId = u64;

/// Unacked snapshots a replace-mode client may have outstanding. Merge
/// clients get one update at a time, since every delta starts at their last
/// acked revision.
pub const QUEUE_DEPTH: usize = 4;

const MAX_STALE: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct Subscription {
    pub client: ClientId,
    pub mode: Mode,
    pub roi: Option<Roi>,
    pub last_acked_revision: u64,
}

#[derive(Debug, Clone)]
pub struct Outgoing {
    pub client: ClientId,
    pub update: ModelUpdate,
}

#[derive(Debug)]
struct Published {
    state: ModelState,
    published_ns: u64,
}

#[derive(Debug)]
struct Slot {
    sub: Subscription,
    in_flight: VecDeque<u64>,
    // in flight before a resubscribe or resync, with multiplicity; acks for
    // these are ignored
    stale: BTreeMap<u64, u32>,
    last_sent: Option<u64>,
    // newest revision whose delta came out empty
    checked: u64,
    force_snapshot: bool,
}

impl Slot {
    fn new(sub: Subscription, stale: BTreeMap<u64, u32>) -> Self {
        Self {
            sub,
            in_flight: VecDeque::new(),
            stale,
            last_sent: None,
            checked: 0,
            force_snapshot: true,
        }
    }

    fn retire(&mut self) {
        for r in self.in_flight.drain(..) {
            *self.stale.entry(r).or_default() += 1;
        }
        while self.stale.len() > MAX_STALE {
            self.stale.pop_first();
        }
    }

    fn take_stale(&mut self, rev: u64) -> bool {
        match self.stale.get_mut(&rev) {
            Some(n) if *n > 1 => *n -= 1,
            Some(_) => {
                self.stale.remove(&rev);
            }
            None => return false,
        }
        true
    }

    fn depth(&self) -> usize {
        match self.sub.mode {
            Mode::Replace => QUEUE_DEPTH,
            Mode::Merge => 1,
        }
    }
}

#[derive(Debug)]
pub struct Publisher {
    cell_size: f32,
    latest: Option<Arc<Published>>,
    history: BTreeMap<u64, Arc<Published>>,
    clients: BTreeMap<ClientId, Slot>,
}

impl Publisher {
    pub fn new(cell_size: f32) -> Result<Self> {
        if !(cell_size.is_finite() && cell_size > 0.0) {
            return Err(Error::InvalidParameter(format!("cell size {cell_size}")));
        }
        Ok(Self {
            cell_size,
            latest: None,
            history: BTreeMap::new(),
            clients: BTreeMap::new(),
        })
    }

    pub fn cell_size(&self) -> f32 {
        self.cell_size
    }

    pub fn latest_revision(&self) -> Option<u64> {
        self.latest.as_ref().map(|p| p.state.revision)
    }

    pub fn latest_state(&self) -> Option<&ModelState> {
        self.latest.as_ref().map(|p| &p.state)
    }

    pub fn subscription(&self, client: ClientId) -> Option<&Subscription> {
        self.clients.get(&client).map(|s| &s.sub)
    }

    pub fn clients(&self) -> impl Iterator<Item = ClientId> + '_ {
        self.clients.keys().copied()
    }

    pub fn in_flight(&self, client: ClientId) -> usize {
        self.clients.get(&client).map_or(0, |s| s.in_flight.len())
    }

    /// Retained model states: the latest plus every revision a client has
    /// acked or may still ack.
    pub fn retained_states(&self) -> usize {
        self.history.len()
    }

    pub fn publish(&mut self, cloud: &SplatCloud, published_ns: u64) -> Result<Vec<Outgoing>> {
        self.publish_state(ModelState::from_cloud(cloud), published_ns)
    }

    pub fn publish_state(&mut self, state: ModelState, published_ns: u64) -> Result<Vec<Outgoing>> {
        if let Some(prev) = self.latest_revision() {
            if state.revision <= prev {
                return Err(Error::InvalidParameter(format!(
                    "published revision {} does not exceed {prev}",
                    state.revision
                )));
            }
        }
        let p = Arc::new(Published { state, published_ns });
        self.history.insert(p.state.revision, p.clone());
        self.latest = Some(p);
        self.gc();
        Ok(self.flush_all())
    }

    /// Register or re-register a client. Re-subscribing (for instance with a
    /// new ROI) starts over with a fresh snapshot.
    pub fn subscribe(&mut self, client: ClientId, mode: Mode, roi: Option<Roi>) -> Vec<Outgoing> {
        let stale = self
            .clients
            .remove(&client)
            .map(|mut s| {
                s.retire();
                s.stale
            })
            .unwrap_or_default();
        let sub = Subscription {
            client,
            mode,
            roi,
            last_acked_revision: 0,
        };
        self.clients.insert(client, Slot::new(sub, stale));
        self.gc();
        self.flush(client).into_iter().collect()
    }

    /// An ack for a revision the client was never sent is answered with a
    /// snapshot.
    pub fn ack(&mut self, client: ClientId, rev: u64) -> Result<Vec<Outgoing>> {
        let slot = self.slot(client)?;
        if let Some(i) = slot.in_flight.iter().position(|&r| r == rev) {
            slot.in_flight.drain(..=i);
            slot.sub.last_acked_revision = rev;
        } else if slot.take_stale(rev) || rev == slot.sub.last_acked_revision {
            return Ok(vec![]);
        } else {
            log::debug!("client {client} acked unknown revision {rev}; resyncing");
            return self.resync(client);
        }
        self.gc();
        Ok(self.flush(client).into_iter().collect())
    }

    pub fn resync(&mut self, client: ClientId) -> Result<Vec<Outgoing>> {
        let slot = self.slot(client)?;
        let sub = Subscription {
            last_acked_revision: 0,
            ..slot.sub.clone()
        };
        slot.retire();
        let stale = std::mem::take(&mut slot.stale);
        *slot = Slot::new(sub, stale);
        self.gc();
        Ok(self.flush(client).into_iter().collect())
    }

    pub fn remove(&mut self, client: ClientId) -> bool {
        let had = self.clients.remove(&client).is_some();
        self.gc();
        had
    }

    fn slot(&mut self, client: ClientId) -> Result<&mut Slot> {
        self.clients
            .get_mut(&client)
            .ok_or_else(|| Error::Protocol(format!("client {client} is not subscribed")))
    }

    fn gc(&mut self) {
        let latest = self.latest_revision();
        let keep: BTreeSet<u64> = self
            .clients
            .values()
            .flat_map(|s| std::iter::once(s.sub.last_acked_revision).chain(s.in_flight.iter().copied()))
            .chain(latest)
            .collect();
        self.history.retain(|r, _| keep.contains(r));
    }

    fn flush_all(&mut self) -> Vec<Outgoing> {
        let ids: Vec<ClientId> = self.clients.keys().copied().collect();
        ids.into_iter().filter_map(|c| self.flush(c)).collect()
    }

    fn flush(&mut self, client: ClientId) -> Option<Outgoing> {
        let latest = self.latest.clone()?;
        let slot = self.clients.get_mut(&client)?;
        let rev = latest.state.revision;
        if !slot.force_snapshot && slot.last_sent.is_some_and(|s| s >= rev) {
            return None;
        }
        if slot.in_flight.len() >= slot.depth() {
            return None;
        }
        let roi = slot.sub.roi.as_ref();
        let base = match slot.sub.mode {
            Mode::Merge if !slot.force_snapshot && slot.sub.last_acked_revision != 0 => {
                self.history.get(&slot.sub.last_acked_revision)
            }
            _ => None,
        };
        let update = match base {
            Some(b) => {
                if slot.checked >= rev {
                    return None;
                }
                let d = diff(&b.state, &latest.state, self.cell_size, roi, latest.published_ns);
                if d.is_empty_delta() {
                    slot.checked = rev;
                    return None;
                }
                d
            }
            None => snapshot(&latest.state, self.cell_size, roi, latest.published_ns),
        };
        slot.force_snapshot = false;
        slot.in_flight.push_back(rev);
        slot.last_sent = Some(rev);
        Some(Outgoing { client, update })
    }
}
