use std::io::Write;
use std::path::Path;
use std::sync::atomic::AtomicBool;

use splatstream_core::store::{ply, splm};
use splatstream_core::SplatCloud;

use crate::args::{Cli, Command};
use crate::error::{CliError, CliResult};

pub mod eval;
pub mod live;
pub mod render;
pub mod restream;
pub mod serve;
pub mod train;

pub fn run(cli: &Cli, stop: &AtomicBool, out: &mut dyn Write) -> CliResult<()> {
    match &cli.command {
        Command::Restream(a) => restream::run(a, out),
        Command::Train(a) => train::run(a, stop, out),
        Command::Live(a) => live::run(a, stop, out),
        Command::Render(a) => render::run(a, out),
        Command::Serve(a) => serve::run(a, stop, out),
        Command::Eval(a) => eval::run(a, out),
    }
}

fn is_ply(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("ply"))
}

/// Load a `.splm` model, or a `.ply` in the reference layout.
pub fn load_model(path: &Path) -> CliResult<SplatCloud> {
    Ok(if is_ply(path) {
        ply::import_ply(path)?
    } else {
        splm::load(path)?
    })
}

/// Atomic save; the format follows the extension.
pub fn save_model(cloud: &SplatCloud, path: &Path) -> CliResult<u64> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        if !dir.is_dir() {
            return Err(CliError::input(format!("output directory {} does not exist", dir.display())));
        }
    }
    Ok(if is_ply(path) {
        ply::export_ply(cloud, path)?
    } else {
        splm::save(cloud, path)?
    })
}

pub fn parse_rgb(s: &str) -> CliResult<[f64; 3]> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::input(format!("bad color `{s}`")))?;
    match v.as_slice() {
        [r, g, b] if v.iter().all(|c| (0.0..=1.0).contains(c)) => Ok([*r, *g, *b]),
        _ => Err(CliError::input(format!("color `{s}` must be r,g,b in [0, 1]"))),
    }
}

/// Write a line to the command's output; a closed stdout is not an error
/// worth failing a long run over.
pub(crate) fn emit(out: &mut dyn Write, line: impl std::fmt::Display) {
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}
