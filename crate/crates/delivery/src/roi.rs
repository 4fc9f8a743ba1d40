use std::collections::BTreeSet;

use splatstream_core::splat::{cell_coords, pack_cell};
use splatstream_core::Gaussian3D;

use crate::error::{Error, Result};

/// Region of interest as a set of grid cells. World-space boxes resolve to
/// every cell they overlap.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Roi {
    cells: BTreeSet<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoiBox {
    pub min: [f32; 3],
    pub max: [f32; 3],
}

impl RoiBox {
    pub fn new(min: [f32; 3], max: [f32; 3]) -> Result<Self> {
        if !(0..3).all(|k| min[k].is_finite() && max[k].is_finite() && max[k] > min[k]) {
            return Err(Error::InvalidParameter(format!("ROI box {min:?}..{max:?} has no volume")));
        }
        Ok(Self { min, max })
    }
}

impl Roi {
    pub fn from_cells(cells: impl IntoIterator<Item = u32>) -> Self {
        Self {
            cells: cells.into_iter().collect(),
        }
    }

    pub fn from_box(b: &RoiBox, cell_size: f32) -> Self {
        let lo = cell_coords(b.min, cell_size);
        let hi = cell_coords(b.max, cell_size);
        let mut cells = BTreeSet::new();
        for x in lo[0]..=hi[0] {
            for y in lo[1]..=hi[1] {
                for z in lo[2]..=hi[2] {
                    cells.insert(pack_cell([x, y, z]));
                }
            }
        }
        Self { cells }
    }

    pub fn cells(&self) -> &BTreeSet<u32> {
        &self.cells
    }

    pub fn contains(&self, g: &Gaussian3D, cell_size: f32) -> bool {
        self.cells.contains(&pack_cell(cell_coords(g.position, cell_size)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(p: [f32; 3]) -> Gaussian3D {
        Gaussian3D {
            id: 0,
            position: p,
            rotation: [1.0, 0.0, 0.0, 0.0],
            log_scale: [0.0; 3],
            sh: vec![0.0; 3],
            opacity_logit: 0.0,
        }
    }

    #[test]
    fn box_covers_partial_cells() {
        let r = Roi::from_box(&RoiBox::new([0.1, 0.1, 0.1], [1.5, 0.9, 0.9]).unwrap(), 1.0);
        assert_eq!(r.cells().len(), 2);
        assert!(r.contains(&at([1.9, 0.5, 0.5]), 1.0));
        assert!(!r.contains(&at([2.0, 0.5, 0.5]), 1.0));
        assert!(!r.contains(&at([-0.01, 0.5, 0.5]), 1.0));
    }

    #[test]
    fn degenerate_box_rejected() {
        assert!(RoiBox::new([0.0; 3], [1.0, 0.0, 1.0]).is_err());
        assert!(RoiBox::new([0.0; 3], [1.0, f32::NAN, 1.0]).is_err());
    }
}
