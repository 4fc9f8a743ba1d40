//! Text control frames: `cmd=<subscribe|ack|resync> mode=<replace|merge>
//! roi=<x0,y0,z0,x1,y1,z1|none> rev=<u64>`.

use std::fmt;

use crate::error::{Error, Result};
use crate::roi::RoiBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Replace,
    Merge,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Replace => "replace",
            Mode::Merge => "merge",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "replace" => Ok(Mode::Replace),
            "merge" => Ok(Mode::Merge),
            _ => Err(format!("unknown mode `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Control {
    Subscribe { mode: Mode, roi: Option<RoiBox> },
    Ack { rev: u64 },
    Resync,
}

impl fmt::Display for Control {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Control::Subscribe { mode, roi } => {
                write!(f, "cmd=subscribe mode={} roi=", mode.name())?;
                match roi {
                    None => write!(f, "none"),
                    Some(b) => write!(
                        f,
                        "{},{},{},{},{},{}",
                        b.min[0], b.min[1], b.min[2], b.max[0], b.max[1], b.max[2]
                    ),
                }
            }
            Control::Ack { rev } => write!(f, "cmd=ack rev={rev}"),
            Control::Resync => write!(f, "cmd=resync"),
        }
    }
}

impl Control {
    pub fn parse(text: &str) -> Result<Self> {
        let bad = |reason: String| Error::Control {
            text: text.to_string(),
            reason,
        };
        let mut cmd = None;
        let mut mode = None;
        let mut roi = None;
        let mut rev = None;
        for field in text.split_whitespace() {
            let (k, v) = field.split_once('=').ok_or_else(|| bad(format!("`{field}` is not key=value")))?;
            let slot = match k {
                "cmd" => &mut cmd,
                "mode" => &mut mode,
                "roi" => &mut roi,
                "rev" => &mut rev,
                _ => return Err(bad(format!("unknown key `{k}`"))),
            };
            if slot.replace(v).is_some() {
                return Err(bad(format!("duplicate key `{k}`")));
            }
        }
        match cmd {
            Some("subscribe") => {
                let mode = mode.unwrap_or("replace").parse().map_err(bad)?;
                let roi = match roi {
                    None | Some("none") => None,
                    Some(s) => Some(parse_box(s).map_err(bad)?),
                };
                Ok(Control::Subscribe { mode, roi })
            }
            Some("ack") => {
                let rev = rev.ok_or_else(|| bad("ack needs rev".into()))?;
                let rev = rev.parse().map_err(|_| bad(format!("bad revision `{rev}`")))?;
                Ok(Control::Ack { rev })
            }
            Some("resync") => Ok(Control::Resync),
            Some(c) => Err(bad(format!("unknown command `{c}`"))),
            None => Err(bad("missing cmd".into())),
        }
    }
}

fn parse_box(s: &str) -> std::result::Result<RoiBox, String> {
    let v: Vec<f32> = s
        .split(',')
        .map(|x| x.parse::<f32>().map_err(|_| format!("bad roi value `{x}`")))
        .collect::<std::result::Result<_, _>>()?;
    if v.len() != 6 {
        return Err(format!("roi needs 6 values, got {}", v.len()));
    }
    RoiBox::new([v[0], v[1], v[2]], [v[3], v[4], v[5]]).map_err(|e| e.to_string())
}
