//! SPLM: contiguous little-endian parameter arrays plus a spatial grid.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "SPLM"
//!      4     2  version (u16)
//!      6     8  gaussian count (u64)
//!     14     1  sh degree (u8)
//!     15     8  revision (u64)
//!     23     4  grid cell size (f32)
//!     27     4  grid cell count (u32)
//!     31    56  section offsets (7 x u64): positions, rotations,
//!               log_scales, opacity_logits, sh, ids, grid
//!     87        sections
//! ```
//!
//! Grid records are `cell index u32, member count u32, member ordinals u32*`.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::splat::{cell_index, default_cell_size, sh_coeff_count, Gaussian3D, SplatCloud, Tiling, MAX_SH_DEGREE};

pub const MAGIC: &[u8; 4] = b"SPLM";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 87;
const SECTIONS: usize = 7;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFileHeader {
    pub version: u16,
    pub count: u64,
    pub sh_degree: u8,
    pub revision: u64,
    pub cell_size: f32,
    pub cell_count: u32,
    pub offsets: [u64; SECTIONS],
}

impl ModelFileHeader {
    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&self.count.to_le_bytes());
        out.push(self.sh_degree);
        out.extend_from_slice(&self.revision.to_le_bytes());
        out.extend_from_slice(&self.cell_size.to_le_bytes());
        out.extend_from_slice(&self.cell_count.to_le_bytes());
        for o in self.offsets {
            out.extend_from_slice(&o.to_le_bytes());
        }
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format(format!(
                "file is {} bytes, header needs {HEADER_LEN}",
                bytes.len()
            )));
        }
        if &bytes[0..4] != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let mut r = Reader::new(&bytes[4..HEADER_LEN]);
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let count = r.u64()?;
        let sh_degree = r.u8()?;
        let revision = r.u64()?;
        let cell_size = r.f32()?;
        let cell_count = r.u32()?;
        let mut offsets = [0u64; SECTIONS];
        for o in &mut offsets {
            *o = r.u64()?;
        }
        Ok(Self {
            version,
            count,
            sh_degree,
            revision,
            cell_size,
            cell_count,
            offsets,
        })
    }

    /// Byte length of each parameter section given count and degree.
    fn section_lens(count: u64, sh_degree: u8) -> Option<[u64; SECTIONS - 1]> {
        let sh = 3 * sh_coeff_count(sh_degree) as u64;
        let f = |per: u64, size: u64| count.checked_mul(per)?.checked_mul(size);
        Some([f(3, 4)?, f(4, 4)?, f(3, 4)?, f(1, 4)?, f(sh, 4)?, f(1, 8)?])
    }
}

/// Bounds-checked little-endian cursor.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos.checked_add(N).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!("read of {N} bytes at offset {} past end {}", self.pos, self.bytes.len()))
        })?;
        let out = self.bytes[self.pos..end].try_into().expect("length checked");
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take::<1>()?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take()?))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take()?))
    }
}

fn put_f32s(out: &mut Vec<u8>, vals: impl Iterator<Item = f32>) {
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Parameter arrays for `gaussians` in file order (positions through ids),
/// concatenated. Returns the start offset of each of the six sections
/// relative to the start of the output.
pub fn encode_arrays(gaussians: &[Gaussian3D], out: &mut Vec<u8>) -> [usize; SECTIONS - 1] {
    let base = out.len();
    let mut starts = [0; SECTIONS - 1];
    starts[0] = out.len() - base;
    put_f32s(out, gaussians.iter().flat_map(|g| g.position));
    starts[1] = out.len() - base;
    put_f32s(out, gaussians.iter().flat_map(|g| g.rotation));
    starts[2] = out.len() - base;
    put_f32s(out, gaussians.iter().flat_map(|g| g.log_scale));
    starts[3] = out.len() - base;
    put_f32s(out, gaussians.iter().map(|g| g.opacity_logit));
    starts[4] = out.len() - base;
    put_f32s(out, gaussians.iter().flat_map(|g| g.sh.iter().copied()));
    starts[5] = out.len() - base;
    for g in gaussians {
        out.extend_from_slice(&g.id.to_le_bytes());
    }
    starts
}

/// Total byte length of the six parameter sections.
pub fn arrays_len(count: u64, sh_degree: u8) -> Option<u64> {
    ModelFileHeader::section_lens(count, sh_degree)?
        .iter()
        .try_fold(0u64, |a, &b| a.checked_add(b))
}

/// Inverse of [`encode_arrays`]: `bytes` must hold exactly the six
/// sections for `count` Gaussians of degree `sh_degree`.
pub fn decode_arrays(bytes: &[u8], count: usize, sh_degree: u8) -> Result<Vec<Gaussian3D>> {
    let lens = ModelFileHeader::section_lens(count as u64, sh_degree)
        .ok_or_else(|| Error::Format("gaussian count overflows".into()))?;
    let total: u64 = lens.iter().sum();
    if bytes.len() as u64 != total {
        return Err(Error::Format(format!(
            "{} bytes of parameter arrays, expected {total} for {count} gaussians",
            bytes.len()
        )));
    }
    let sh_len = 3 * sh_coeff_count(sh_degree);
    let mut starts = [0usize; SECTIONS - 1];
    for i in 1..starts.len() {
        starts[i] = starts[i - 1] + lens[i - 1] as usize;
    }
    let f = |sec: usize, idx: usize| {
        let o = starts[sec] + 4 * idx;
        f32::from_le_bytes(bytes[o..o + 4].try_into().expect("in bounds"))
    };
    Ok((0..count)
        .map(|i| {
            let o = starts[5] + 8 * i;
            Gaussian3D {
                id: u64::from_le_bytes(bytes[o..o + 8].try_into().expect("in bounds")),
                position: std::array::from_fn(|k| f(0, 3 * i + k)),
                rotation: std::array::from_fn(|k| f(1, 4 * i + k)),
                log_scale: std::array::from_fn(|k| f(2, 3 * i + k)),
                opacity_logit: f(3, i),
                sh: (0..sh_len).map(|k| f(4, sh_len * i + k)).collect(),
            }
        })
        .collect())
}

/// Serialize to bytes. Clouds without a tiling get one at the default
/// cell size; the stored cloud itself is not modified.
pub fn to_bytes(cloud: &SplatCloud) -> Vec<u8> {
    let owned;
    let tiling = match cloud.tiling() {
        Some(t) => t,
        None => {
            owned = Tiling::build(cloud.gaussians(), default_cell_size(cloud.gaussians()));
            &owned
        }
    };
    let ordinal: std::collections::HashMap<u64, u32> =
        cloud.gaussians().iter().enumerate().map(|(i, g)| (g.id, i as u32)).collect();

    let mut body = Vec::new();
    let starts = encode_arrays(cloud.gaussians(), &mut body);
    let grid_start = body.len();
    for (cell, members) in &tiling.cells {
        body.extend_from_slice(&cell.to_le_bytes());
        body.extend_from_slice(&(members.len() as u32).to_le_bytes());
        for id in members {
            body.extend_from_slice(&ordinal[id].to_le_bytes());
        }
    }

    let mut offsets = [0u64; SECTIONS];
    for (o, s) in offsets.iter_mut().zip(starts.iter().chain([&grid_start])) {
        *o = (HEADER_LEN + s) as u64;
    }
    let header = ModelFileHeader {
        version: VERSION,
        count: cloud.len() as u64,
        sh_degree: cloud.sh_degree(),
        revision: cloud.revision(),
        cell_size: tiling.cell_size,
        cell_count: tiling.cells.len() as u32,
        offsets,
    };
    let mut out = Vec::with_capacity(HEADER_LEN + body.len());
    header.encode(&mut out);
    out.extend_from_slice(&body);
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<SplatCloud> {
    let h = ModelFileHeader::decode(bytes)?;
    if h.sh_degree > MAX_SH_DEGREE {
        return Err(Error::Format(format!("sh degree {} above {MAX_SH_DEGREE}", h.sh_degree)));
    }
    if !(h.cell_size.is_finite() && h.cell_size > 0.0) {
        return Err(Error::Format(format!("grid cell size {} not positive", h.cell_size)));
    }
    let file_len = bytes.len() as u64;
    let lens = ModelFileHeader::section_lens(h.count, h.sh_degree)
        .ok_or_else(|| Error::Format(format!("gaussian count {} overflows", h.count)))?;
    if h.offsets[0] != HEADER_LEN as u64 {
        return Err(Error::Format(format!("first section at {}, expected {HEADER_LEN}", h.offsets[0])));
    }
    for (i, len) in lens.iter().enumerate() {
        let end = h.offsets[i].checked_add(*len);
        if end != Some(h.offsets[i + 1]) {
            return Err(Error::Format(format!(
                "section {i} spans {}..{:?} but next section starts at {}",
                h.offsets[i],
                end,
                h.offsets[i + 1]
            )));
        }
    }
    let grid_start = h.offsets[SECTIONS - 1];
    // smallest possible grid: one 8-byte record per cell plus one ordinal
    // per gaussian
    let min_grid = 8 * h.cell_count as u64 + 4 * h.count;
    if grid_start.checked_add(min_grid).map_or(true, |e| e > file_len) {
        return Err(Error::Format(format!(
            "declared sections need at least {} bytes, file has {file_len}",
            grid_start.saturating_add(min_grid)
        )));
    }

    let count = h.count as usize;
    let gaussians = decode_arrays(&bytes[HEADER_LEN..grid_start as usize], count, h.sh_degree)?;

    let mut r = Reader::new(&bytes[grid_start as usize..]);
    let mut cells = std::collections::BTreeMap::new();
    let mut seen = vec![false; count];
    for _ in 0..h.cell_count {
        let cell = r.u32()?;
        let n = r.u32()? as usize;
        if n > count {
            return Err(Error::Format(format!("cell {cell} lists {n} members of {count}")));
        }
        let mut members = Vec::with_capacity(n);
        for _ in 0..n {
            let ord = r.u32()? as usize;
            if ord >= count {
                return Err(Error::Format(format!("grid ordinal {ord} out of range")));
            }
            if std::mem::replace(&mut seen[ord], true) {
                return Err(Error::Format(format!("gaussian {ord} listed in more than one cell")));
            }
            let g = &gaussians[ord];
            if g.is_finite() && cell_index(g.position, h.cell_size) != cell {
                return Err(Error::Format(format!("gaussian {ord} filed under cell {cell}, not its own")));
            }
            members.push(g.id);
        }
        if cells.insert(cell, members).is_some() {
            return Err(Error::Format(format!("cell {cell} repeated")));
        }
    }
    if r.pos != r.bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after grid", r.bytes.len() - r.pos)));
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::Format(format!("gaussian {missing} not in any grid cell")));
    }
    let tiling = Tiling {
        cell_size: h.cell_size,
        cells,
    };
    SplatCloud::from_parts(h.sh_degree, gaussians, h.revision, Some(tiling))
}

fn temp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(format!(".tmp-{}", std::process::id()));
    path.with_file_name(name)
}

/// Write `bytes` to `path` atomically: temp file, fsync, rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = temp_path(path);
    let result = (|| -> Result<()> {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            // directory fsync is best effort; not every platform allows it
            if let Ok(d) = File::open(dir) {
                let _ = d.sync_all();
            }
        }
        Ok(())
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

/// Save `cloud`; returns the number of bytes written.
pub fn save(cloud: &SplatCloud, path: &Path) -> Result<u64> {
    cloud.validate()?;
    let bytes = to_bytes(cloud);
    write_atomic(path, &bytes)?;
    Ok(bytes.len() as u64)
}

pub fn load(path: &Path) -> Result<SplatCloud> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    from_bytes(&fs::read(path)?)
}
