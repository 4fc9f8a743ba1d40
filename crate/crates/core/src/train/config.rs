use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Optimizer and density-control hyperparameters.
///
/// Every field is addressable by its name through [`TrainConfig::set`],
/// which is what the flat `key = value` config file and CLI overrides use.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub iterations: u64,
    pub lr_position_init: f64,
    pub lr_position_final: f64,
    pub lr_position_max_steps: u64,
    /// Multiplies the position learning rate; `0` means "use the scene
    /// extent".
    pub position_lr_scale: f64,
    pub lr_sh: f64,
    /// Divisor applied to `lr_sh` for coefficients above the DC band.
    pub sh_rest_lr_divisor: f64,
    pub lr_opacity: f64,
    pub lr_scale: f64,
    pub lr_rotation: f64,
    pub densify_grad_threshold: f64,
    pub densify_interval: u64,
    pub densify_start: u64,
    pub densify_stop: u64,
    pub opacity_prune_threshold: f64,
    pub opacity_reset_interval: u64,
    pub opacity_reset_value: f64,
    pub sh_degree_promote_interval: u64,
    /// Clone/split boundary as a fraction of scene extent.
    pub percent_dense: f64,
    /// Screen-space radius (px) above which Gaussians are culled.
    pub max_screen_size: f64,
    /// World-space scale, as a fraction of scene extent, above which
    /// Gaussians are culled.
    pub max_world_size: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub ssim_weight: f64,
    pub background: [f64; 3],
    pub replay_fraction: f64,
    pub sh_degree: u8,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 30_000,
            lr_position_init: 1.6e-4,
            lr_position_final: 1.6e-6,
            lr_position_max_steps: 30_000,
            position_lr_scale: 0.0,
            lr_sh: 2.5e-3,
            sh_rest_lr_divisor: 20.0,
            lr_opacity: 5e-2,
            lr_scale: 5e-3,
            lr_rotation: 1e-3,
            densify_grad_threshold: 2e-4,
            densify_interval: 100,
            densify_start: 500,
            densify_stop: 15_000,
            opacity_prune_threshold: 0.005,
            opacity_reset_interval: 3000,
            opacity_reset_value: 0.01,
            sh_degree_promote_interval: 1000,
            percent_dense: 0.01,
            max_screen_size: 20.0,
            max_world_size: 0.1,
            batch_size: 1,
            seed: 0,
            ssim_weight: 0.2,
            background: [0.0; 3],
            replay_fraction: 0.25,
            sh_degree: 3,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::InvalidParameter(format!("bad value `{value}` for `{key}`")))
}

fn parse_rgb(key: &str, value: &str) -> Result<[f64; 3]> {
    let parts: Vec<&str> = value.split(',').collect();
    if parts.len() != 3 {
        return Err(Error::InvalidParameter(format!("`{key}` expects r,g,b")));
    }
    Ok([parse(key, parts[0])?, parse(key, parts[1])?, parse(key, parts[2])?])
}

impl TrainConfig {
    pub const KEYS: &'static [&'static str] = &[
        "iterations",
        "lr_position_init",
        "lr_position_final",
        "lr_position_max_steps",
        "position_lr_scale",
        "lr_sh",
        "sh_rest_lr_divisor",
        "lr_opacity",
        "lr_scale",
        "lr_rotation",
        "densify_grad_threshold",
        "densify_interval",
        "densify_start",
        "densify_stop",
        "opacity_prune_threshold",
        "opacity_reset_interval",
        "opacity_reset_value",
        "sh_degree_promote_interval",
        "percent_dense",
        "max_screen_size",
        "max_world_size",
        "batch_size",
        "seed",
        "ssim_weight",
        "background",
        "replay_fraction",
        "sh_degree",
    ];

    /// Defaults adjusted for a shorter run: the densification window is
    /// clipped to the run length.
    pub fn for_iterations(iterations: u64) -> Self {
        let mut c = Self {
            iterations,
            ..Self::default()
        };
        c.fit_densify_window();
        c
    }

    /// Clip `densify_stop` to `iterations` and keep `start < stop`.
    pub fn fit_densify_window(&mut self) {
        self.densify_stop = self.densify_stop.min(self.iterations).max(1);
        if self.densify_start >= self.densify_stop {
            self.densify_start = self.densify_stop - 1;
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "iterations" => self.iterations = parse(key, value)?,
            "lr_position_init" => self.lr_position_init = parse(key, value)?,
            "lr_position_final" => self.lr_position_final = parse(key, value)?,
            "lr_position_max_steps" => self.lr_position_max_steps = parse(key, value)?,
            "position_lr_scale" => self.position_lr_scale = parse(key, value)?,
            "lr_sh" => self.lr_sh = parse(key, value)?,
            "sh_rest_lr_divisor" => self.sh_rest_lr_divisor = parse(key, value)?,
            "lr_opacity" => self.lr_opacity = parse(key, value)?,
            "lr_scale" => self.lr_scale = parse(key, value)?,
            "lr_rotation" => self.lr_rotation = parse(key, value)?,
            "densify_grad_threshold" => self.densify_grad_threshold = parse(key, value)?,
            "densify_interval" => self.densify_interval = parse(key, value)?,
            "densify_start" => self.densify_start = parse(key, value)?,
            "densify_stop" => self.densify_stop = parse(key, value)?,
            "opacity_prune_threshold" => self.opacity_prune_threshold = parse(key, value)?,
            "opacity_reset_interval" => self.opacity_reset_interval = parse(key, value)?,
            "opacity_reset_value" => self.opacity_reset_value = parse(key, value)?,
            "sh_degree_promote_interval" => self.sh_degree_promote_interval = parse(key, value)?,
            "percent_dense" => self.percent_dense = parse(key, value)?,
            "max_screen_size" => self.max_screen_size = parse(key, value)?,
            "max_world_size" => self.max_world_size = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "ssim_weight" => self.ssim_weight = parse(key, value)?,
            "background" => self.background = parse_rgb(key, value)?,
            "replay_fraction" => self.replay_fraction = parse(key, value)?,
            "sh_degree" => self.sh_degree = parse(key, value)?,
            _ => return Err(Error::InvalidParameter(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "iterations" => self.iterations.to_string(),
            "lr_position_init" => self.lr_position_init.to_string(),
            "lr_position_final" => self.lr_position_final.to_string(),
            "lr_position_max_steps" => self.lr_position_max_steps.to_string(),
            "position_lr_scale" => self.position_lr_scale.to_string(),
            "lr_sh" => self.lr_sh.to_string(),
            "sh_rest_lr_divisor" => self.sh_rest_lr_divisor.to_string(),
            "lr_opacity" => self.lr_opacity.to_string(),
            "lr_scale" => self.lr_scale.to_string(),
            "lr_rotation" => self.lr_rotation.to_string(),
            "densify_grad_threshold" => self.densify_grad_threshold.to_string(),
            "densify_interval" => self.densify_interval.to_string(),
            "densify_start" => self.densify_start.to_string(),
            "densify_stop" => self.densify_stop.to_string(),
            "opacity_prune_threshold" => self.opacity_prune_threshold.to_string(),
            "opacity_reset_interval" => self.opacity_reset_interval.to_string(),
            "opacity_reset_value" => self.opacity_reset_value.to_string(),
            "sh_degree_promote_interval" => self.sh_degree_promote_interval.to_string(),
            "percent_dense" => self.percent_dense.to_string(),
            "max_screen_size" => self.max_screen_size.to_string(),
            "max_world_size" => self.max_world_size.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "seed" => self.seed.to_string(),
            "ssim_weight" => self.ssim_weight.to_string(),
            "background" => format!("{},{},{}", self.background[0], self.background[1], self.background[2]),
            "replay_fraction" => self.replay_fraction.to_string(),
            "sh_degree" => self.sh_degree.to_string(),
            _ => return None,
        })
    }

    /// Parse `key = value` lines; `#` starts a comment. Keys not present
    /// keep their current value.
    pub fn apply_kv(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                message: "expected `key = value`".into(),
            })?;
            self.set(k.trim(), v.trim()).map_err(|e| Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path)?;
        let mut c = Self::default();
        c.apply_kv(&text, path)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for k in Self::KEYS {
            let _ = writeln!(s, "{k} = {}", self.get(k).expect("listed key"));
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr_position_init", self.lr_position_init),
            ("lr_position_final", self.lr_position_final),
            ("sh_rest_lr_divisor", self.sh_rest_lr_divisor),
            ("densify_grad_threshold", self.densify_grad_threshold),
            ("opacity_prune_threshold", self.opacity_prune_threshold),
            ("opacity_reset_value", self.opacity_reset_value),
            ("percent_dense", self.percent_dense),
            ("max_screen_size", self.max_screen_size),
            ("max_world_size", self.max_world_size),
        ];
        for (k, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("`{k}` must be > 0, got {v}")));
            }
        }
        let non_negative = [
            ("position_lr_scale", self.position_lr_scale),
            ("lr_sh", self.lr_sh),
            ("lr_opacity", self.lr_opacity),
            ("lr_scale", self.lr_scale),
            ("lr_rotation", self.lr_rotation),
        ];
        for (k, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("`{k}` must be >= 0, got {v}")));
            }
        }
        let intervals = [
            ("densify_interval", self.densify_interval),
            ("opacity_reset_interval", self.opacity_reset_interval),
            ("sh_degree_promote_interval", self.sh_degree_promote_interval),
            ("lr_position_max_steps", self.lr_position_max_steps),
        ];
        for (k, v) in intervals {
            if v == 0 {
                return Err(Error::InvalidParameter(format!("`{k}` must be > 0")));
            }
        }
        if !(self.densify_start < self.densify_stop && self.densify_stop <= self.iterations) {
            return Err(Error::InvalidParameter(format!(
                "need densify_start < densify_stop <= iterations, got {} / {} / {}",
                self.densify_start, self.densify_stop, self.iterations
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("`batch_size` must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.ssim_weight) || !(0.0..=1.0).contains(&self.replay_fraction) {
            return Err(Error::InvalidParameter("`ssim_weight` and `replay_fraction` must lie in [0, 1]".into()));
        }
        if !(self.opacity_prune_threshold < 1.0 && self.opacity_reset_value < 1.0) {
            return Err(Error::InvalidParameter("opacity thresholds must be below 1".into()));
        }
        if self.sh_degree > crate::splat::MAX_SH_DEGREE {
            return Err(Error::InvalidParameter(format!("sh_degree {} above 3", self.sh_degree)));
        }
        Ok(())
    }
}
