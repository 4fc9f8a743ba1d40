use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, SystemTime};

use splatstream_core::splat::default_cell_size;
use splatstream_core::SplatCloud;
use splatstream_delivery::DeliveryServer;

use crate::args::ServeArgs;
use crate::cmd::{emit, load_model};
use crate::error::{CliError, CliResult};

fn stamp(path: &Path) -> Option<(SystemTime, u64)> {
    let m = std::fs::metadata(path).ok()?;
    Some((m.modified().ok()?, m.len()))
}

/// Files on disk carry their own revision; the served revision must keep
/// increasing across reloads regardless.
fn next_revision(cloud: SplatCloud, last: u64) -> CliResult<SplatCloud> {
    if cloud.revision() > last {
        return Ok(cloud);
    }
    let sh = cloud.sh_degree();
    Ok(SplatCloud::from_parts(sh, cloud.gaussians().to_vec(), last + 1, None)?)
}

pub fn run(a: &ServeArgs, stop: &AtomicBool, out: &mut dyn Write) -> CliResult<()> {
    if !(a.cell_size >= 0.0 && a.cell_size.is_finite()) {
        return Err(CliError::input("cell size must be non-negative"));
    }
    let cloud = next_revision(load_model(&a.model)?, 0)?;
    let cell = if a.cell_size > 0.0 {
        a.cell_size
    } else {
        default_cell_size(cloud.gaussians())
    };
    let mut server = DeliveryServer::bind(&a.bind, cell).map_err(|e| CliError::input(format!("bind {}: {e}", a.bind)))?;
    server.publish(&cloud)?;
    let mut last = cloud.revision();
    emit(
        out,
        format!(
            "serving model={} revision={last} gaussians={} addr={}",
            a.model.display(),
            cloud.len(),
            server.local_addr()
        ),
    );
    let mut seen = stamp(&a.model);
    let poll = Duration::from_millis(a.watch_ms.max(1));
    while !stop.load(Ordering::Relaxed) {
        std::thread::sleep(poll.min(Duration::from_millis(50)));
        let now = stamp(&a.model);
        if now.is_none() || now == seen {
            continue;
        }
        match load_model(&a.model).and_then(|c| next_revision(c, last)) {
            Ok(c) => {
                server.publish(&c)?;
                last = c.revision();
                seen = now;
                emit(out, format!("republished revision={last} gaussians={}", c.len()));
            }
            // mid-write or broken file: keep serving the last good model
            Err(e) => log::warn!("reload of {} failed: {e}", a.model.display()),
        }
    }
    server.shutdown();
    Ok(())
}
