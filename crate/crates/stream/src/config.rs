use crate::error::{Error, Result};

pub const DEFAULT_WINDOW_NS: u64 = 50_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decimation {
    None,
    /// Keep one record in every `n`.
    Uniform(usize),
    /// Keep a record when the mean absolute pixel difference to the last
    /// kept frame, or the integrated rotation since it (radians), exceeds
    /// the threshold.
    Adaptive { pixel_threshold: f64, rotation_threshold: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backpressure {
    /// Frames drop the oldest entry on overflow; telemetry blocks the
    /// producer instead of dropping.
    DropOldestFrames,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestConfig {
    pub window_ns: u64,
    pub decimation: Decimation,
    pub frame_capacity: usize,
    pub gps_capacity: usize,
    pub imu_capacity: usize,
    pub backpressure: Backpressure,
    pub require_gps: bool,
    pub require_imu: bool,
    /// Frame-queue occupancy fraction that, held for `resolution_hold_ns`,
    /// asks the sender to halve resolution.
    pub resolution_occupancy: f64,
    pub resolution_hold_ns: u64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            window_ns: DEFAULT_WINDOW_NS,
            decimation: Decimation::None,
            frame_capacity: 16,
            gps_capacity: 4096,
            imu_capacity: 16384,
            backpressure: Backpressure::DropOldestFrames,
            require_gps: false,
            require_imu: false,
            resolution_occupancy: 0.8,
            resolution_hold_ns: 1_000_000_000,
        }
    }
}

impl IngestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_ns == 0 {
            return Err(Error::InvalidParameter("window_ns must be positive".into()));
        }
        match self.decimation {
            Decimation::Uniform(0) => return Err(Error::InvalidParameter("uniform decimation needs N >= 1".into())),
            Decimation::Adaptive {
                pixel_threshold,
                rotation_threshold,
            } if !(pixel_threshold >= 0.0 && rotation_threshold >= 0.0) => {
                return Err(Error::InvalidParameter("adaptive thresholds must be non-negative".into()))
            }
            _ => {}
        }
        if self.frame_capacity == 0 || self.gps_capacity == 0 || self.imu_capacity == 0 {
            return Err(Error::InvalidParameter("queue capacities must be positive".into()));
        }
        if !(self.resolution_occupancy > 0.0 && self.resolution_occupancy <= 1.0) {
            return Err(Error::InvalidParameter("resolution_occupancy must be in (0, 1]".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        IngestConfig::default().validate().unwrap();
        assert_eq!(IngestConfig::default().window_ns, 50_000_000);
    }

    #[test]
    fn rejects_bad_values() {
        let mut c = IngestConfig {
            window_ns: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        c.window_ns = 1;
        c.decimation = Decimation::Uniform(0);
        assert!(c.validate().is_err());
        c.decimation = Decimation::Uniform(1);
        c.validate().unwrap();
    }
}
