//! Live reconstruction loop: ingest → align → decimate → online update →
//! publish, driven from a single thread that owns the model.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::net::{SocketAddr, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use splatstream_core::pose::colmap::PoseSequence;
use splatstream_core::train::{TrainConfig, TrainState, TrainView};
use splatstream_core::{Image, SplatCloud};
use splatstream_delivery::{unix_ns, DeliveryServer};
use splatstream_stream::ingest::FrameArrival;
use splatstream_stream::{Aligner, Decimation, Decimator, IngestConfig, IngestServer, Session};

use crate::dataset::fit_intrinsics;
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone)]
pub struct LiveConfig {
    pub ingest: IngestConfig,
    pub decimation: Decimation,
    /// Optimizer iterations per accepted frame.
    pub budget_iters: u64,
    pub pose_tolerance_ns: u64,
    /// Publish every accepted frame without optimizing.
    pub bypass_training: bool,
    /// Most recent accepted views kept for replay.
    pub replay_pool: usize,
    /// Longest a frame waits for telemetry past its timestamp.
    pub align_hold: Duration,
    pub idle_warning: Duration,
    pub keep_views: bool,
    /// Grid cell size for ROI subscriptions; 0 derives it from the model.
    pub cell_size: f32,
}

impl Default for LiveConfig {
    fn default() -> Self {
        Self {
            ingest: IngestConfig::default(),
            decimation: Decimation::None,
            budget_iters: 20,
            pose_tolerance_ns: 20_000_000,
            bypass_training: false,
            replay_pool: 32,
            align_hold: Duration::from_millis(25),
            idle_warning: Duration::from_secs(30),
            keep_views: false,
            cell_size: 0.0,
        }
    }
}

/// Parse `none`, `uniform:<n>` or `adaptive:<pixel>,<degrees>`.
pub fn parse_decimation(s: &str) -> CliResult<Decimation> {
    let bad = || CliError::input(format!("bad decimation `{s}`; expected none, uniform:N or adaptive:PIXEL,DEG"));
    match s.split_once(':') {
        None if s == "none" => Ok(Decimation::None),
        Some(("uniform", n)) => match n.parse::<usize>() {
            Ok(n) if n > 0 => Ok(Decimation::Uniform(n)),
            _ => Err(bad()),
        },
        Some(("adaptive", rest)) => {
            let (p, d) = rest.split_once(',').ok_or_else(bad)?;
            let p: f64 = p.parse().map_err(|_| bad())?;
            let d: f64 = d.parse().map_err(|_| bad())?;
            if p < 0.0 || d < 0.0 {
                return Err(bad());
            }
            Ok(Decimation::Adaptive {
                pixel_threshold: p,
                rotation_threshold: d.to_radians(),
            })
        }
        _ => Err(bad()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyRecord {
    pub revision: u64,
    pub frame_ts: u64,
    pub arrival_unix_ns: u64,
    pub publish_unix_ns: u64,
}

impl LatencyRecord {
    pub fn ms(&self) -> f64 {
        self.publish_unix_ns.saturating_sub(self.arrival_unix_ns) as f64 / 1e6
    }
}

pub fn latency_report(records: &[LatencyRecord]) -> String {
    let mut s = String::new();
    for r in records {
        let _ = writeln!(
            s,
            "revision={} frame_ts={} arrival_ns={} publish_ns={} arrival_to_publish_ms={:.3}",
            r.revision,
            r.frame_ts,
            r.arrival_unix_ns,
            r.publish_unix_ns,
            r.ms()
        );
    }
    let ms: Vec<f64> = records.iter().map(LatencyRecord::ms).collect();
    let l = splatstream_stream::restream::LatencySummary::from_ms(ms);
    let _ = writeln!(
        s,
        "summary updates={} mean_ms={:.3} p50_ms={:.3} p95_ms={:.3} max_ms={:.3}",
        l.count, l.mean_ms, l.p50_ms, l.p95_ms, l.max_ms
    );
    s
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LiveStats {
    pub sessions: u64,
    pub frames: u64,
    pub align_failed: u64,
    pub decimated: u64,
    pub no_pose: u64,
    pub bad_frames: u64,
    pub updates: u64,
    pub idle_warnings: u64,
    pub diverged: bool,
}

enum Model {
    Training(Box<TrainState>),
    PassThrough(SplatCloud),
}

impl Model {
    fn cloud(&self) -> &SplatCloud {
        match self {
            Model::Training(t) => t.cloud(),
            Model::PassThrough(c) => c,
        }
    }
}

pub struct LivePipeline {
    cfg: LiveConfig,
    ingest: IngestServer,
    sessions: Vec<Session>,
    delivery: DeliveryServer,
    model: Model,
    poses: Option<PoseSequence>,
    aligner: Aligner,
    decimator: Decimator,
    pending: VecDeque<FrameArrival>,
    newest_gps: Option<u64>,
    newest_imu: Option<u64>,
    replay: VecDeque<TrainView>,
    applied: Vec<TrainView>,
    latency: Vec<LatencyRecord>,
    stats: LiveStats,
    last_frame: Instant,
}

impl LivePipeline {
    pub fn new(
        ingest_addr: impl ToSocketAddrs,
        delivery_addr: impl ToSocketAddrs,
        mut cloud: SplatCloud,
        train: TrainConfig,
        poses: Option<PoseSequence>,
        mut cfg: LiveConfig,
    ) -> CliResult<Self> {
        cfg.ingest.decimation = cfg.decimation;
        if !cfg.bypass_training && poses.is_none() {
            return Err(CliError::input("live training needs camera poses"));
        }
        let ingest = IngestServer::bind(ingest_addr, cfg.ingest.clone())?;
        ingest.set_nonblocking(true)?;
        let cell = if cfg.cell_size > 0.0 {
            cfg.cell_size
        } else {
            splatstream_core::splat::default_cell_size(cloud.gaussians())
        };
        let delivery = DeliveryServer::bind(delivery_addr, cell)?;
        if cloud.revision() == 0 {
            cloud.touch();
        }
        delivery.publish(&cloud)?;
        let model = if cfg.bypass_training {
            Model::PassThrough(cloud)
        } else {
            Model::Training(Box::new(TrainState::new(cloud, train)?))
        };
        Ok(Self {
            decimator: Decimator::new(cfg.decimation),
            cfg,
            ingest,
            sessions: vec![],
            delivery,
            model,
            poses,
            aligner: Aligner::new(),
            pending: VecDeque::new(),
            newest_gps: None,
            newest_imu: None,
            replay: VecDeque::new(),
            applied: vec![],
            latency: vec![],
            stats: LiveStats::default(),
            last_frame: Instant::now(),
        })
    }

    pub fn ingest_addr(&self) -> CliResult<SocketAddr> {
        Ok(self.ingest.local_addr()?)
    }

    pub fn delivery_addr(&self) -> SocketAddr {
        self.delivery.local_addr()
    }

    pub fn cloud(&self) -> &SplatCloud {
        self.model.cloud()
    }

    pub fn stats(&self) -> &LiveStats {
        &self.stats
    }

    pub fn latency(&self) -> &[LatencyRecord] {
        &self.latency
    }

    /// Views that went into online updates, in order (when `keep_views`).
    pub fn applied_views(&self) -> &[TrainView] {
        &self.applied
    }

    pub fn active_sessions(&self) -> usize {
        self.sessions.iter().filter(|s| !s.queues.is_finished()).count()
    }

    fn accept(&mut self) {
        loop {
            match self.ingest.accept() {
                Ok(s) => {
                    log::info!("ingest session from {}", s.peer);
                    self.stats.sessions += 1;
                    self.sessions.push(s);
                }
                Err(splatstream_stream::Error::Io(e)) if e.kind() == std::io::ErrorKind::WouldBlock => return,
                Err(e) => {
                    log::warn!("accept failed: {e}");
                    return;
                }
            }
        }
    }

    fn drain_sessions(&mut self, wait: Duration) {
        let mut got_frame = false;
        for s in &self.sessions {
            for g in s.queues.gps.drain() {
                self.newest_gps = Some(self.newest_gps.map_or(g.timestamp_ns, |t| t.max(g.timestamp_ns)));
                self.aligner.push_gps(g);
            }
            for m in s.queues.imu.drain() {
                self.newest_imu = Some(self.newest_imu.map_or(m.timestamp_ns, |t| t.max(m.timestamp_ns)));
                self.aligner.push_imu(m);
            }
            for f in s.queues.frames.drain() {
                self.pending.push_back(f);
                got_frame = true;
            }
        }
        if !got_frame && self.pending.is_empty() {
            // block briefly on the first live session's frame queue
            if let Some(s) = self.sessions.iter().find(|s| !s.queues.is_finished()) {
                if let Some(f) = s.queues.frames.pop_timeout(wait) {
                    self.pending.push_back(f);
                }
            } else {
                std::thread::sleep(wait);
            }
        }
        if !self.pending.is_empty() {
            self.last_frame = Instant::now();
        }
        self.sessions.retain(|s| !(s.queues.is_finished() && s.queues.frames.is_empty()));
    }

    fn ready(&self, f: &FrameArrival) -> bool {
        let caught_up = |newest: Option<u64>| newest.map_or(true, |t| t >= f.timestamp_ns);
        (caught_up(self.newest_gps) && caught_up(self.newest_imu))
            || f.arrived.elapsed() >= self.cfg.align_hold
            || self.sessions.is_empty()
    }

    /// One pass: accept sessions, collect samples, process every frame that
    /// is ready. Returns the number of updates published.
    pub fn poll(&mut self, wait: Duration) -> CliResult<usize> {
        self.accept();
        self.drain_sessions(wait);
        if self.last_frame.elapsed() >= self.cfg.idle_warning {
            eprintln!(
                "warning: no frames received for {} s",
                self.last_frame.elapsed().as_secs()
            );
            self.stats.idle_warnings += 1;
            self.last_frame = Instant::now();
        }
        let mut published = 0;
        while self.pending.front().is_some_and(|f| self.ready(f)) {
            let f = self.pending.pop_front().expect("checked");
            if self.process(f)? {
                published += 1;
            }
        }
        Ok(published)
    }

    fn process(&mut self, f: FrameArrival) -> CliResult<bool> {
        self.stats.frames += 1;
        let rec = match self.aligner.align(&f.frame, f.timestamp_ns, &self.cfg.ingest) {
            Ok(r) => r,
            Err(e) => {
                log::debug!("frame at {} not aligned: {e}", f.timestamp_ns);
                self.stats.align_failed += 1;
                return Ok(false);
            }
        };
        match self.decimator.keep(&rec) {
            Ok(true) => {}
            Ok(false) => {
                self.stats.decimated += 1;
                return Ok(false);
            }
            Err(e) => {
                log::warn!("frame at {} undecodable: {e}", f.timestamp_ns);
                self.stats.bad_frames += 1;
                return Ok(false);
            }
        }
        if self.stats.diverged {
            return Ok(false);
        }
        let image = match Image::decode_png(&rec.frame.png) {
            Ok(i) => i,
            Err(e) => {
                log::warn!("frame at {} undecodable: {e}", f.timestamp_ns);
                self.stats.bad_frames += 1;
                return Ok(false);
            }
        };
        let arrival_unix_ns = unix_ns().saturating_sub(f.arrived.elapsed().as_nanos() as u64);
        match &mut self.model {
            Model::PassThrough(cloud) => cloud.touch(),
            Model::Training(state) => {
                let poses = self.poses.as_ref().expect("checked in new");
                let Some(entry) = poses.nearest(f.timestamp_ns, self.cfg.pose_tolerance_ns) else {
                    self.stats.no_pose += 1;
                    return Ok(false);
                };
                let k = poses
                    .intrinsics_for(entry)
                    .and_then(|k| fit_intrinsics(k, image.width(), image.height()));
                let Some(intrinsics) = k else {
                    self.stats.bad_frames += 1;
                    return Ok(false);
                };
                let view = TrainView {
                    name: entry.name.clone(),
                    pose: entry.pose,
                    intrinsics,
                    image,
                };
                let prior: Vec<TrainView> = self.replay.iter().cloned().collect();
                let backup = state.clone();
                let outcome = state.online_update(std::slice::from_ref(&view), &prior, self.cfg.budget_iters);
                if let Err(e) = outcome.and_then(|_| state.cloud().validate()) {
                    log::error!("online update failed: {e}; serving the last good model");
                    **state = *backup;
                    self.stats.diverged = true;
                    return Ok(false);
                }
                self.replay.push_back(view.clone());
                if self.replay.len() > self.cfg.replay_pool {
                    self.replay.pop_front();
                }
                if self.cfg.keep_views {
                    self.applied.push(view);
                }
            }
        }
        let cloud = self.model.cloud();
        self.delivery.publish(cloud)?;
        self.stats.updates += 1;
        self.latency.push(LatencyRecord {
            revision: cloud.revision(),
            frame_ts: f.timestamp_ns,
            arrival_unix_ns,
            publish_unix_ns: unix_ns(),
        });
        Ok(true)
    }

    /// Poll until `stop` is set, or until `idle_exit` passes with no
    /// session connected and nothing pending.
    pub fn run(&mut self, stop: &AtomicBool, idle_exit: Option<Duration>) -> CliResult<()> {
        let mut idle_since: Option<Instant> = None;
        while !stop.load(Ordering::Relaxed) {
            self.poll(Duration::from_millis(5))?;
            let idle = self.sessions.is_empty() && self.pending.is_empty() && self.stats.sessions > 0;
            match (idle, idle_since) {
                (true, None) => idle_since = Some(Instant::now()),
                (true, Some(t)) if idle_exit.is_some_and(|d| t.elapsed() >= d) => break,
                (false, _) => idle_since = None,
                _ => {}
            }
        }
        Ok(())
    }

    pub fn into_parts(self) -> (SplatCloud, LiveStats, Vec<LatencyRecord>) {
        let cloud = match self.model {
            Model::Training(t) => t.into_cloud(),
            Model::PassThrough(c) => c,
        };
        (cloud, self.stats, self.latency)
    }
}

pub fn shared_flag() -> Arc<AtomicBool> {
    Arc::new(AtomicBool::new(false))
}
