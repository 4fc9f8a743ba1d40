use nalgebra::Rotation3;
use splatstream_core::Image;

use crate::align::SyncedRecord;
use crate::config::Decimation;
use crate::error::Result;

/// Streaming form of [`decimate`].
#[derive(Debug)]
pub struct Decimator {
    mode: Decimation,
    seen: usize,
    last_kept: Option<Image>,
    rotation_since_kept: Rotation3<f64>,
}

impl Decimator {
    pub fn new(mode: Decimation) -> Self {
        Self {
            mode,
            seen: 0,
            last_kept: None,
            rotation_since_kept: Rotation3::identity(),
        }
    }

    pub fn keep(&mut self, rec: &SyncedRecord) -> Result<bool> {
        let index = self.seen;
        self.seen += 1;
        match self.mode {
            Decimation::None => Ok(true),
            Decimation::Uniform(n) => Ok(index % n == 0),
            Decimation::Adaptive {
                pixel_threshold,
                rotation_threshold,
            } => {
                let image = rec.frame.decode()?;
                if index > 0 {
                    if let Some(imu) = rec.imu {
                        self.rotation_since_kept *= imu.delta;
                    }
                }
                let keep = match &self.last_kept {
                    None => true,
                    Some(prev) => {
                        let pixel = if prev.same_shape(&image) {
                            prev.mean_abs_diff(&image)?
                        } else {
                            f64::INFINITY
                        };
                        pixel > pixel_threshold || self.rotation_since_kept.angle() > rotation_threshold
                    }
                };
                if keep {
                    self.last_kept = Some(image);
                    self.rotation_since_kept = Rotation3::identity();
                }
                Ok(keep)
            }
        }
    }
}

pub fn decimate(records: Vec<SyncedRecord>, mode: Decimation) -> Result<Vec<SyncedRecord>> {
    let mut d = Decimator::new(mode);
    let mut out = Vec::new();
    for r in records {
        if d.keep(&r)? {
            out.push(r);
        }
    }
    Ok(out)
}
