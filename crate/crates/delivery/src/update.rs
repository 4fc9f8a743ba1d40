//! Snapshot and delta messages and their binary encoding.
//!
//! Layout (little-endian): `"SPUP" | version u16 | kind u8 | sh_degree u8 |
//! revision_from u64 | revision_to u64 | published_ns u64 | cell_size f32 |
//! roi cell count u32 | added u64 | modified u64 | removed u64 |
//! roi cells u32… | added arrays | modified arrays | removed ids u64…`.
//! Gaussian records use the model file's array sections.

use std::collections::BTreeMap;

use splatstream_core::store::splm::{arrays_len, decode_arrays, encode_arrays};
use splatstream_core::Gaussian3D;

use crate::error::{Error, Result};
use crate::roi::Roi;

pub const MAGIC: &[u8; 4] = b"SPUP";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 1 + 1 + 8 + 8 + 8 + 4 + 4 + 8 + 8 + 8;

pub fn unix_ns() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_nanos() as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateKind {
    Snapshot,
    Delta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelUpdate {
    pub kind: UpdateKind,
    pub revision_from: u64,
    pub revision_to: u64,
    pub sh_degree: u8,
    /// Server wall clock at publish, Unix nanoseconds.
    pub published_ns: u64,
    pub added: Vec<Gaussian3D>,
    pub modified: Vec<Gaussian3D>,
    pub removed: Vec<u64>,
    /// Grid cell size and cells the update was filtered to, if any.
    pub cell_size: f32,
    pub roi: Option<Roi>,
}

impl ModelUpdate {
    pub fn is_empty_delta(&self) -> bool {
        self.kind == UpdateKind::Delta && self.added.is_empty() && self.modified.is_empty() && self.removed.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            UpdateKind::Snapshot => {
                if self.revision_from != 0 || !self.removed.is_empty() || !self.modified.is_empty() {
                    return Err(Error::Format("snapshot must start at revision 0 and only add".into()));
                }
            }
            UpdateKind::Delta => {
                if self.revision_to <= self.revision_from {
                    return Err(Error::Format(format!(
                        "delta revisions {} -> {} do not advance",
                        self.revision_from, self.revision_to
                    )));
                }
            }
        }
        let sh_len = 3 * splatstream_core::splat::sh_coeff_count(self.sh_degree);
        let mut seen = std::collections::HashSet::new();
        for g in self.added.iter().chain(&self.modified) {
            if g.sh.len() != sh_len {
                return Err(Error::Format(format!("gaussian {} has {} SH values, expected {sh_len}", g.id, g.sh.len())));
            }
            if !seen.insert(g.id) {
                return Err(Error::Format(format!("id {} listed twice", g.id)));
            }
        }
        for id in &self.removed {
            if !seen.insert(*id) {
                return Err(Error::Format(format!("id {id} listed twice")));
            }
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let roi: Vec<u32> = self.roi.as_ref().map(|r| r.cells().iter().copied().collect()).unwrap_or_default();
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * roi.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(match self.kind {
            UpdateKind::Snapshot => 0,
            UpdateKind::Delta => 1,
        });
        out.push(self.sh_degree);
        out.extend_from_slice(&self.revision_from.to_le_bytes());
        out.extend_from_slice(&self.revision_to.to_le_bytes());
        out.extend_from_slice(&self.published_ns.to_le_bytes());
        out.extend_from_slice(&self.cell_size.to_le_bytes());
        let roi_count = if self.roi.is_some() { roi.len() as u32 } else { u32::MAX };
        out.extend_from_slice(&roi_count.to_le_bytes());
        for n in [self.added.len(), self.modified.len(), self.removed.len()] {
            out.extend_from_slice(&(n as u64).to_le_bytes());
        }
        for c in &roi {
            out.extend_from_slice(&c.to_le_bytes());
        }
        encode_arrays(&self.added, &mut out);
        encode_arrays(&self.modified, &mut out);
        for id in &self.removed {
            out.extend_from_slice(&id.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format(format!("{} bytes is shorter than the header", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let u16_at = |o: usize| u16::from_le_bytes(bytes[o..o + 2].try_into().unwrap());
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let version = u16_at(4);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let kind = match bytes[6] {
            0 => UpdateKind::Snapshot,
            1 => UpdateKind::Delta,
            k => return Err(Error::Format(format!("unknown kind {k}"))),
        };
        let sh_degree = bytes[7];
        if sh_degree > 3 {
            return Err(Error::Format(format!("sh degree {sh_degree}")));
        }
        let revision_from = u64_at(8);
        let revision_to = u64_at(16);
        let published_ns = u64_at(24);
        let cell_size = f32::from_le_bytes(bytes[32..36].try_into().unwrap());
        let roi_count = u32_at(36);
        let (n_added, n_modified, n_removed) = (u64_at(40), u64_at(48), u64_at(56));

        let len_err = || Error::Format("declared sizes exceed the message".into());
        let roi_bytes = if roi_count == u32::MAX { 0 } else { 4 * roi_count as u64 };
        let added_bytes = arrays_len(n_added, sh_degree).ok_or_else(len_err)?;
        let modified_bytes = arrays_len(n_modified, sh_degree).ok_or_else(len_err)?;
        let removed_bytes = n_removed.checked_mul(8).ok_or_else(len_err)?;
        let total = [roi_bytes, added_bytes, modified_bytes, removed_bytes]
            .iter()
            .try_fold(HEADER_LEN as u64, |a, &b| a.checked_add(b))
            .ok_or_else(len_err)?;
        if total != bytes.len() as u64 {
            return Err(Error::Format(format!("message is {} bytes, header declares {total}", bytes.len())));
        }
        let mut o = HEADER_LEN;
        let roi = (roi_count != u32::MAX).then(|| {
            let cells = (0..roi_count as usize).map(|i| u32_at(o + 4 * i));
            Roi::from_cells(cells)
        });
        o += roi_bytes as usize;
        let added = decode_arrays(&bytes[o..o + added_bytes as usize], n_added as usize, sh_degree)?;
        o += added_bytes as usize;
        let modified = decode_arrays(&bytes[o..o + modified_bytes as usize], n_modified as usize, sh_degree)?;
        o += modified_bytes as usize;
        let removed = (0..n_removed as usize).map(|i| u64_at(o + 8 * i)).collect();
        let u = Self {
            kind,
            revision_from,
            revision_to,
            sh_degree,
            published_ns,
            added,
            modified,
            removed,
            cell_size,
            roi,
        };
        u.validate()?;
        Ok(u)
    }
}

/// Canonical model state keyed by ID.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelState {
    pub revision: u64,
    pub sh_degree: u8,
    pub gaussians: BTreeMap<u64, Gaussian3D>,
}

impl ModelState {
    pub fn from_cloud(cloud: &splatstream_core::SplatCloud) -> Self {
        Self {
            revision: cloud.revision(),
            sh_degree: cloud.sh_degree(),
            gaussians: cloud.gaussians().iter().map(|g| (g.id, g.clone())).collect(),
        }
    }

    pub fn filtered(&self, roi: Option<&Roi>, cell_size: f32) -> Self {
        match roi {
            None => self.clone(),
            Some(r) => Self {
                revision: self.revision,
                sh_degree: self.sh_degree,
                gaussians: self
                    .gaussians
                    .iter()
                    .filter(|(_, g)| r.contains(g, cell_size))
                    .map(|(k, g)| (*k, g.clone()))
                    .collect(),
            },
        }
    }

    /// Bit-level equality of every parameter.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.sh_degree == other.sh_degree
            && self.gaussians.len() == other.gaussians.len()
            && self
                .gaussians
                .iter()
                .zip(&other.gaussians)
                .all(|((a, ga), (b, gb))| a == b && ga.bit_eq(gb))
    }

    pub fn to_cloud(&self) -> splatstream_core::Result<splatstream_core::SplatCloud> {
        splatstream_core::SplatCloud::from_parts(
            self.sh_degree,
            self.gaussians.values().cloned().collect(),
            self.revision,
            None,
        )
    }
}

pub fn snapshot(state: &ModelState, cell_size: f32, roi: Option<&Roi>, published_ns: u64) -> ModelUpdate {
    let view = state.filtered(roi, cell_size);
    ModelUpdate {
        kind: UpdateKind::Snapshot,
        revision_from: 0,
        revision_to: state.revision,
        sh_degree: state.sh_degree,
        published_ns,
        added: view.gaussians.into_values().collect(),
        modified: vec![],
        removed: vec![],
        cell_size,
        roi: roi.cloned(),
    }
}

/// Delta taking `base` to `target`, both seen through `roi`. Parameters
/// compare by bit pattern, so any change at all is shipped.
pub fn diff(base: &ModelState, target: &ModelState, cell_size: f32, roi: Option<&Roi>, published_ns: u64) -> ModelUpdate {
    let b = base.filtered(roi, cell_size);
    let t = target.filtered(roi, cell_size);
    let mut added = vec![];
    let mut modified = vec![];
    for (id, g) in &t.gaussians {
        match b.gaussians.get(id) {
            None => added.push(g.clone()),
            Some(old) if !old.bit_eq(g) => modified.push(g.clone()),
            Some(_) => {}
        }
    }
    let removed = b.gaussians.keys().filter(|id| !t.gaussians.contains_key(id)).copied().collect();
    ModelUpdate {
        kind: UpdateKind::Delta,
        revision_from: base.revision,
        revision_to: target.revision,
        sh_degree: target.sh_degree,
        published_ns,
        added,
        modified,
        removed,
        cell_size,
        roi: roi.cloned(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(id: u64, x: f32) -> Gaussian3D {
        Gaussian3D {
            id,
            position: [x, 0.0, 0.0],
            rotation: [1.0, 0.0, 0.0, 0.0],
            log_scale: [-2.0; 3],
            sh: vec![0.1, 0.2, 0.3],
            opacity_logit: 0.5,
        }
    }

    fn state(rev: u64, items: &[(u64, f32)]) -> ModelState {
        ModelState {
            revision: rev,
            sh_degree: 0,
            gaussians: items.iter().map(|&(i, x)| (i, g(i, x))).collect(),
        }
    }

    #[test]
    fn encode_roundtrip() {
        let base = state(3, &[(1, 0.0), (2, 1.0), (3, 2.0)]);
        let target = state(9, &[(1, 0.0), (2, 1.5), (4, 3.0)]);
        let d = diff(&base, &target, 1.0, Some(&Roi::from_cells([1, 2, 3])), 123);
        assert_eq!(ModelUpdate::decode(&d.encode()).unwrap(), d);
        let s = snapshot(&target, 0.5, None, 7);
        assert_eq!(ModelUpdate::decode(&s.encode()).unwrap(), s);
    }

    #[test]
    fn pure_growth_delta() {
        let base = state(1, &[(1, 0.0)]);
        let mut items = vec![(1, 0.0)];
        items.extend((10..15).map(|i| (i, i as f32)));
        let d = diff(&base, &state(2, &items), 1.0, None, 0);
        assert_eq!((d.added.len(), d.modified.len(), d.removed.len()), (5, 0, 0));
    }

    #[test]
    fn negative_zero_counts_as_modified() {
        let base = state(1, &[(1, 0.0)]);
        let target = state(2, &[(1, -0.0)]);
        assert_eq!(diff(&base, &target, 1.0, None, 0).modified.len(), 1);
    }

    #[test]
    fn truncated_messages_rejected() {
        let d = diff(&state(1, &[(1, 0.0)]), &state(2, &[(2, 1.0)]), 1.0, None, 0);
        let bytes = d.encode();
        for cut in 0..bytes.len() {
            assert!(ModelUpdate::decode(&bytes[..cut]).is_err());
        }
    }

    #[test]
    fn invariants_checked() {
        let mut d = diff(&state(1, &[]), &state(2, &[(1, 0.0)]), 1.0, None, 0);
        d.removed.push(1);
        assert!(d.validate().is_err());
        let mut s = snapshot(&state(2, &[(1, 0.0)]), 1.0, None, 0);
        s.revision_from = 1;
        assert!(s.validate().is_err());
    }
}
