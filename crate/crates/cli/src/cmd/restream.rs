use std::io::{ErrorKind, Write};
use std::time::Duration;

use splatstream_stream::{restream, Capture, RestreamOptions};

use crate::args::RestreamArgs;
use crate::cmd::emit;
use crate::error::{CliError, CliResult};

fn refused(e: &splatstream_stream::Error) -> bool {
    matches!(e, splatstream_stream::Error::Io(io)
        if matches!(io.kind(), ErrorKind::ConnectionRefused | ErrorKind::TimedOut | ErrorKind::AddrNotAvailable))
}

pub fn run(a: &RestreamArgs, out: &mut dyn Write) -> CliResult<()> {
    let capture = Capture::load(&a.capture)?;
    let opts = RestreamOptions {
        rate: a.rate,
        jitter_ms: a.jitter_ms,
        seed: a.seed,
        ..RestreamOptions::default()
    };
    let attempts = a.attempts.max(1);
    let mut backoff = Duration::from_millis(100);
    for attempt in 1..=attempts {
        match restream(&capture, &a.addr, &opts) {
            Ok(r) => {
                emit(
                    out,
                    format!(
                        "sent={} acked={} attempts={attempt} duration_ms={:.1} latency_p50_ms={:.3} latency_p95_ms={:.3} latency_max_ms={:.3} resolution_halvings={}",
                        r.sent,
                        r.acked,
                        r.duration.as_secs_f64() * 1e3,
                        r.latency.p50_ms,
                        r.latency.p95_ms,
                        r.latency.max_ms,
                        r.resolution_halvings
                    ),
                );
                return Ok(());
            }
            Err(e) if refused(&e) && attempt < attempts => {
                log::warn!("connect attempt {attempt}/{attempts} to {} failed: {e}", a.addr);
                std::thread::sleep(backoff);
                backoff = (backoff * 2).min(Duration::from_secs(2));
            }
            Err(e) if refused(&e) => {
                return Err(CliError::runtime(format!("{} unreachable after {attempts} attempts: {e}", a.addr)))
            }
            Err(e) => return Err(e.into()),
        }
    }
    unreachable!()
}
