//! Trainer settings from three layers: config file, then environment
//! (`SPLATSTREAM_<KEY>`), then command-line flags.

use std::collections::BTreeMap;
use std::path::Path;

use splatstream_core::synthetic::small_scene_config;
use splatstream_core::train::TrainConfig;

use crate::error::{CliError, CliResult};

pub const ENV_PREFIX: &str = "SPLATSTREAM_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Profile {
    /// Defaults tuned for large captures.
    #[default]
    Default,
    /// Settings for scenes of a few hundred Gaussians at ~128 px.
    SmallScene,
}

#[derive(Debug, Clone, Default)]
pub struct Layers {
    pub file: BTreeMap<String, String>,
    pub env: BTreeMap<String, String>,
    pub flags: BTreeMap<String, String>,
}

fn check_key(key: &str, origin: &str) -> CliResult<()> {
    if TrainConfig::KEYS.contains(&key) {
        Ok(())
    } else {
        Err(CliError::input(format!("{origin}: unknown config key `{key}`")))
    }
}

pub fn parse_config_file(path: &Path) -> CliResult<BTreeMap<String, String>> {
    if !path.exists() {
        return Err(splatstream_core::Error::MissingFile(path.to_path_buf()).into());
    }
    let text = std::fs::read_to_string(path)?;
    // full validation, with line numbers, happens here
    TrainConfig::default().apply_kv(&text, path)?;
    let mut out = BTreeMap::new();
    for raw in text.lines() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if let Some((k, v)) = line.split_once('=') {
            out.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    Ok(out)
}

pub fn env_layer(vars: impl IntoIterator<Item = (String, String)>) -> BTreeMap<String, String> {
    vars.into_iter()
        .filter_map(|(k, v)| {
            let key = k.strip_prefix(ENV_PREFIX)?.to_ascii_lowercase();
            TrainConfig::KEYS.contains(&key.as_str()).then_some((key, v))
        })
        .collect()
}

/// `key=value` overrides from `--set`.
pub fn flag_layer(sets: &[String]) -> CliResult<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for s in sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| CliError::input(format!("--set expects key=value, got `{s}`")))?;
        check_key(k.trim(), "--set")?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

impl Layers {
    pub fn load(config: Option<&Path>, sets: &[String]) -> CliResult<Self> {
        Ok(Self {
            file: config.map(parse_config_file).transpose()?.unwrap_or_default(),
            env: env_layer(std::env::vars()),
            flags: flag_layer(sets)?,
        })
    }

    pub fn merged(&self) -> BTreeMap<String, (String, &'static str)> {
        let mut m = BTreeMap::new();
        for (layer, name) in [(&self.file, "config"), (&self.env, "env"), (&self.flags, "flag")] {
            for (k, v) in layer {
                m.insert(k.clone(), (v.clone(), name));
            }
        }
        m
    }

    pub fn resolve(&self, profile: Profile) -> CliResult<TrainConfig> {
        let m = self.merged();
        let get = |k: &str| m.get(k).map(|(v, o)| (v.as_str(), *o));
        let parse_u = |k: &str, default: u64| -> CliResult<u64> {
            match get(k) {
                None => Ok(default),
                Some((v, o)) => v.parse().map_err(|_| CliError::input(format!("{o}: bad value `{v}` for `{k}`"))),
            }
        };
        let iterations = parse_u("iterations", TrainConfig::default().iterations)?;
        let mut c = match profile {
            Profile::Default => TrainConfig::for_iterations(iterations),
            Profile::SmallScene => {
                let degree = parse_u("sh_degree", 0)?;
                small_scene_config(iterations, degree.min(u8::MAX as u64) as u8)
            }
        };
        for (k, (v, origin)) in &m {
            c.set(k, v).map_err(|e| CliError::input(format!("{origin}: {e}")))?;
        }
        if !m.contains_key("densify_stop") || !m.contains_key("densify_start") {
            c.fit_densify_window();
        }
        c.validate()?;
        Ok(c)
    }
}
