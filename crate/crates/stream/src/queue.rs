//! Bounded single-producer/single-consumer queues.

use std::collections::VecDeque;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Overflow {
    DropOldest,
    Block,
}

#[derive(Debug)]
struct Inner<T> {
    items: VecDeque<T>,
    closed: bool,
    dropped: u64,
    pushed: u64,
}

#[derive(Debug)]
pub struct BoundedQueue<T> {
    inner: Mutex<Inner<T>>,
    not_empty: Condvar,
    not_full: Condvar,
    capacity: usize,
    overflow: Overflow,
}

impl<T> BoundedQueue<T> {
    pub fn new(capacity: usize, overflow: Overflow) -> Self {
        assert!(capacity > 0);
        Self {
            inner: Mutex::new(Inner {
                items: VecDeque::with_capacity(capacity.min(1024)),
                closed: false,
                dropped: 0,
                pushed: 0,
            }),
            not_empty: Condvar::new(),
            not_full: Condvar::new(),
            capacity,
            overflow,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Enqueue; returns false if the queue was closed. A blocking queue
    /// waits for room, a dropping queue evicts its oldest entry.
    pub fn push(&self, item: T) -> bool {
        let mut g = self.inner.lock().unwrap();
        loop {
            if g.closed {
                return false;
            }
            if g.items.len() < self.capacity {
                break;
            }
            match self.overflow {
                Overflow::DropOldest => {
                    g.items.pop_front();
                    g.dropped += 1;
                    break;
                }
                Overflow::Block => g = self.not_full.wait(g).unwrap(),
            }
        }
        g.items.push_back(item);
        g.pushed += 1;
        self.not_empty.notify_one();
        true
    }

    pub fn try_pop(&self) -> Option<T> {
        let mut g = self.inner.lock().unwrap();
        let item = g.items.pop_front();
        if item.is_some() {
            self.not_full.notify_one();
        }
        item
    }

    /// Wait up to `timeout` for an item. `None` on timeout or when closed
    /// and drained.
    pub fn pop_timeout(&self, timeout: Duration) -> Option<T> {
        let g = self.inner.lock().unwrap();
        let (mut g, _) = self
            .not_empty
            .wait_timeout_while(g, timeout, |g| g.items.is_empty() && !g.closed)
            .unwrap();
        let item = g.items.pop_front();
        if item.is_some() {
            self.not_full.notify_one();
        }
        item
    }

    pub fn drain(&self) -> Vec<T> {
        let mut g = self.inner.lock().unwrap();
        let out = g.items.drain(..).collect();
        self.not_full.notify_all();
        out
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn occupancy(&self) -> f64 {
        self.len() as f64 / self.capacity as f64
    }

    pub fn dropped(&self) -> u64 {
        self.inner.lock().unwrap().dropped
    }

    pub fn pushed(&self) -> u64 {
        self.inner.lock().unwrap().pushed
    }

    pub fn close(&self) {
        self.inner.lock().unwrap().closed = true;
        self.not_empty.notify_all();
        self.not_full.notify_all();
    }

    pub fn is_closed(&self) -> bool {
        self.inner.lock().unwrap().closed
    }

    /// Closed and nothing left to read.
    pub fn is_finished(&self) -> bool {
        let g = self.inner.lock().unwrap();
        g.closed && g.items.is_empty()
    }
}

/// Tracks how long a queue has stayed above an occupancy threshold.
#[derive(Debug, Clone)]
pub struct OccupancyMonitor {
    threshold: f64,
    hold_ns: u64,
    above_since: Option<u64>,
}

impl OccupancyMonitor {
    pub fn new(threshold: f64, hold_ns: u64) -> Self {
        Self {
            threshold,
            hold_ns,
            above_since: None,
        }
    }

    /// Feed an observation at `now_ns`; true once occupancy has stayed
    /// strictly above the threshold for the hold time. Firing re-arms.
    pub fn observe(&mut self, occupancy: f64, now_ns: u64) -> bool {
        if occupancy <= self.threshold {
            self.above_since = None;
            return false;
        }
        let since = *self.above_since.get_or_insert(now_ns);
        if now_ns - since >= self.hold_ns {
            self.above_since = None;
            return true;
        }
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn drop_oldest_keeps_newest() {
        let q = BoundedQueue::new(3, Overflow::DropOldest);
        for i in 0..10 {
            assert!(q.push(i));
        }
        assert_eq!(q.drain(), vec![7, 8, 9]);
        assert_eq!(q.dropped(), 7);
    }

    #[test]
    fn blocking_never_drops() {
        let q = Arc::new(BoundedQueue::new(2, Overflow::Block));
        let p = {
            let q = q.clone();
            std::thread::spawn(move || {
                for i in 0..100 {
                    q.push(i);
                }
                q.close();
            })
        };
        let mut got = vec![];
        while let Some(x) = q.pop_timeout(Duration::from_secs(5)) {
            got.push(x);
        }
        p.join().unwrap();
        assert_eq!(got, (0..100).collect::<Vec<_>>());
        assert_eq!(q.dropped(), 0);
    }

    #[test]
    fn occupancy_hold() {
        let mut m = OccupancyMonitor::new(0.8, 1000);
        assert!(!m.observe(0.9, 0));
        assert!(!m.observe(0.9, 999));
        assert!(m.observe(0.9, 1000));
        assert!(!m.observe(0.9, 1500));
        assert!(!m.observe(0.5, 2100));
        assert!(!m.observe(0.85, 2200));
        assert!(!m.observe(0.8, 3300));
    }
}
