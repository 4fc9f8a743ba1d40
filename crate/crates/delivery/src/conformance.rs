//! Scripted client behaviors run against a live server.

use std::fmt;
use std::net::SocketAddr;
use std::time::{Duration, Instant};

use crate::client::{Applied, DeliveryClient};
use crate::control::{Control, Mode};
use crate::error::Result;
use crate::roi::{Roi, RoiBox};
use crate::update::UpdateKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    SubscribeReplace,
    SubscribeMerge,
    RoiChange,
    ForcedResync,
    Reconnect,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::SubscribeReplace,
        Scenario::SubscribeMerge,
        Scenario::RoiChange,
        Scenario::ForcedResync,
        Scenario::Reconnect,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::SubscribeReplace => "subscribe-replace",
            Scenario::SubscribeMerge => "subscribe-merge",
            Scenario::RoiChange => "roi-change",
            Scenario::ForcedResync => "forced-resync",
            Scenario::Reconnect => "reconnect",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConformanceOptions {
    /// How long to keep receiving after each scripted step.
    pub observe: Duration,
    /// Box used by the ROI scenario.
    pub roi: RoiBox,
}

#[derive(Debug, Clone)]
pub struct ScenarioReport {
    pub scenario: Scenario,
    pub violations: Vec<String>,
    pub snapshots: usize,
    pub deltas: usize,
    pub latencies: Vec<Duration>,
}

impl ScenarioReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn max_latency(&self) -> Option<Duration> {
        self.latencies.iter().max().copied()
    }
}

impl fmt::Display for ScenarioReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let lat = self.max_latency().map_or("n/a".into(), |d| format!("{:.2}ms", d.as_secs_f64() * 1e3));
        write!(
            f,
            "{} {}: snapshots={} deltas={} max_latency={lat}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.scenario.name(),
            self.snapshots,
            self.deltas,
        )?;
        for v in &self.violations {
            write!(f, "\n  violated: {v}")?;
        }
        Ok(())
    }
}

struct Run {
    report: ScenarioReport,
    last_to: Option<u64>,
    // a snapshot may legitimately repeat a revision after we ask for one
    expect_snapshot: bool,
    cell_size: Option<f32>,
}

impl Run {
    fn new(scenario: Scenario) -> Self {
        Self {
            report: ScenarioReport {
                scenario,
                violations: vec![],
                snapshots: 0,
                deltas: 0,
                latencies: vec![],
            },
            last_to: None,
            expect_snapshot: true,
            cell_size: None,
        }
    }

    fn violation(&mut self, v: impl Into<String>) {
        self.report.violations.push(v.into());
    }

    fn record(&mut self, a: &Applied) {
        let u = &a.update;
        let new_epoch = u.kind == UpdateKind::Snapshot && self.expect_snapshot;
        if let Some(prev) = self.last_to {
            if !new_epoch && u.revision_to <= prev {
                self.violation(format!("revision_to {} after {prev}", u.revision_to));
            }
        }
        if u.kind == UpdateKind::Snapshot {
            self.expect_snapshot = false;
            self.report.snapshots += 1;
        } else {
            self.report.deltas += 1;
        }
        self.last_to = Some(u.revision_to);
        self.cell_size = Some(u.cell_size);
        self.report.latencies.push(a.latency);
    }

    /// Apply everything that arrives within `window`.
    fn drain(&mut self, c: &mut DeliveryClient, window: Duration) {
        let deadline = Instant::now() + window;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return;
            }
            match c.step(left) {
                Ok(Some(a)) => self.record(&a),
                Ok(None) => return,
                Err(e) => {
                    self.violation(format!("applying update: {e}"));
                    return;
                }
            }
        }
    }

    fn first_snapshot(&mut self, c: &mut DeliveryClient, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        while self.expect_snapshot {
            let left = deadline.saturating_duration_since(Instant::now());
            match c.step(left) {
                Ok(Some(a)) => self.record(&a),
                Ok(None) => {
                    self.violation("no snapshot received");
                    return false;
                }
                Err(e) => {
                    self.violation(format!("applying update: {e}"));
                    return false;
                }
            }
        }
        true
    }
}

const FIRST_UPDATE_TIMEOUT: Duration = Duration::from_secs(5);

pub fn run_scenario(addr: SocketAddr, scenario: Scenario, opts: &ConformanceOptions) -> Result<ScenarioReport> {
    let mut run = Run::new(scenario);
    let mut c = DeliveryClient::connect(addr)?;
    match scenario {
        Scenario::SubscribeReplace => {
            c.subscribe(Mode::Replace, None)?;
            if run.first_snapshot(&mut c, FIRST_UPDATE_TIMEOUT) {
                run.drain(&mut c, opts.observe);
                if run.report.deltas > 0 {
                    run.violation("replace-mode client received a delta");
                }
            }
        }
        Scenario::SubscribeMerge => {
            c.subscribe(Mode::Merge, None)?;
            if run.first_snapshot(&mut c, FIRST_UPDATE_TIMEOUT) {
                run.drain(&mut c, opts.observe);
            }
        }
        Scenario::RoiChange => {
            c.subscribe(Mode::Merge, None)?;
            if run.first_snapshot(&mut c, FIRST_UPDATE_TIMEOUT) {
                run.drain(&mut c, opts.observe);
                run.expect_snapshot = true;
                c.subscribe(Mode::Merge, Some(opts.roi))?;
                // updates already in transit for the old subscription may
                // arrive first
                let deadline = Instant::now() + FIRST_UPDATE_TIMEOUT;
                let mut scoped = false;
                while !scoped && Instant::now() < deadline {
                    match c.step(deadline.saturating_duration_since(Instant::now())) {
                        Ok(Some(a)) => {
                            scoped = a.update.kind == UpdateKind::Snapshot && a.update.roi.is_some();
                            run.record(&a);
                        }
                        Ok(None) => break,
                        Err(e) => {
                            run.violation(format!("applying update: {e}"));
                            break;
                        }
                    }
                }
                if !scoped {
                    run.violation("no ROI-scoped snapshot after ROI change");
                } else {
                    run.drain(&mut c, opts.observe);
                    check_roi(&mut run, &c, &opts.roi);
                }
            }
        }
        Scenario::ForcedResync => {
            c.subscribe(Mode::Merge, None)?;
            if run.first_snapshot(&mut c, FIRST_UPDATE_TIMEOUT) {
                let before = c.model().revision();
                run.expect_snapshot = true;
                c.send(&Control::Ack { rev: u64::MAX - 1 })?;
                if run.first_snapshot(&mut c, FIRST_UPDATE_TIMEOUT) {
                    if c.model().revision() < before {
                        run.violation("resync snapshot went backwards");
                    }
                    run.drain(&mut c, opts.observe);
                }
            }
        }
        Scenario::Reconnect => {
            c.subscribe(Mode::Merge, None)?;
            if run.first_snapshot(&mut c, FIRST_UPDATE_TIMEOUT) {
                run.drain(&mut c, opts.observe);
                let before = c.model().revision();
                c.close();
                c = DeliveryClient::connect(addr)?;
                run.expect_snapshot = true;
                c.subscribe(Mode::Merge, None)?;
                if run.first_snapshot(&mut c, FIRST_UPDATE_TIMEOUT) {
                    if c.model().revision() < before {
                        run.violation("reconnect snapshot older than state before disconnect");
                    }
                    run.drain(&mut c, opts.observe);
                }
            }
        }
    }
    c.close();
    Ok(run.report)
}

fn check_roi(run: &mut Run, c: &DeliveryClient, b: &RoiBox) {
    let Some(cell_size) = run.cell_size else {
        return;
    };
    let roi = Roi::from_box(b, cell_size);
    let outside = c.model().gaussians().values().filter(|g| !roi.contains(g, cell_size)).count();
    if outside > 0 {
        run.violation(format!("{outside} gaussians outside the ROI"));
    }
}

pub fn run_all(addr: SocketAddr, opts: &ConformanceOptions) -> Result<Vec<ScenarioReport>> {
    Scenario::ALL.iter().map(|&s| run_scenario(addr, s, opts)).collect()
}

