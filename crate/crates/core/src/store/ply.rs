//! PLY interchange using the reference 3DGS vertex layout.
//!
//! Writes `binary_little_endian` with float properties
//! `x y z nx ny nz f_dc_0..2 f_rest_* opacity scale_0..2 rot_0..3`.
//! `f_rest` is channel-major (all red coefficients first), whereas
//! [`Gaussian3D::sh`] is coefficient-major.
//!
//! The reader accepts ascii and both binary byte orders, any scalar
//! property type, extra properties, and extra elements (including list
//! properties) which are skipped.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::splat::{sh_coeff_count, Gaussian3D, SplatCloud, MAX_SH_DEGREE};
use crate::store::splm::write_atomic;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Ascii,
    BinaryLe,
    BinaryBe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn read(self, b: &[u8], big: bool) -> f64 {
        macro_rules! rd {
            ($t:ty, $n:expr) => {{
                let a: [u8; $n] = b[..$n].try_into().expect("sized by caller");
                (if big { <$t>::from_be_bytes(a) } else { <$t>::from_le_bytes(a) }) as f64
            }};
        }
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => rd!(i16, 2),
            Self::U16 => rd!(u16, 2),
            Self::I32 => rd!(i32, 4),
            Self::U32 => rd!(u32, 4),
            Self::F32 => rd!(f32, 4),
            Self::F64 => rd!(f64, 8),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

fn fmt_err(msg: impl Into<String>) -> Error {
    Error::Format(format!("ply: {}", msg.into()))
}

fn parse_header(bytes: &[u8]) -> Result<(Format, Vec<Element>, usize)> {
    const END: &[u8] = b"end_header";
    let end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| fmt_err("no end_header"))?;
    let mut body = end + END.len();
    if bytes.get(body) == Some(&b'\r') {
        body += 1;
    }
    if bytes.get(body) != Some(&b'\n') {
        return Err(fmt_err("end_header not followed by newline"));
    }
    body += 1;
    let text = std::str::from_utf8(&bytes[..end]).map_err(|_| fmt_err("header is not utf-8"))?;
    let mut lines = text.lines().map(str::trim);
    if lines.next() != Some("ply") {
        return Err(fmt_err("missing `ply` signature"));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    for line in lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            [] | ["comment", ..] | ["obj_info", ..] => {}
            ["format", f, _version] => {
                format = Some(match *f {
                    "ascii" => Format::Ascii,
                    "binary_little_endian" => Format::BinaryLe,
                    "binary_big_endian" => Format::BinaryBe,
                    other => return Err(fmt_err(format!("unknown format `{other}`"))),
                })
            }
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| fmt_err(format!("bad element count `{count}`")))?,
                props: Vec::new(),
            }),
            ["property", "list", ct, it, name] => {
                let el = elements.last_mut().ok_or_else(|| fmt_err("property before element"))?;
                let ct = Scalar::parse(ct).ok_or_else(|| fmt_err(format!("unknown type `{ct}`")))?;
                let it = Scalar::parse(it).ok_or_else(|| fmt_err(format!("unknown type `{it}`")))?;
                el.props.push(Property::List(name.to_string(), ct, it));
            }
            ["property", ty, name] => {
                let el = elements.last_mut().ok_or_else(|| fmt_err("property before element"))?;
                let ty = Scalar::parse(ty).ok_or_else(|| fmt_err(format!("unknown type `{ty}`")))?;
                el.props.push(Property::Scalar(name.to_string(), ty));
            }
            _ => return Err(fmt_err(format!("unrecognized header line `{line}`"))),
        }
    }
    Ok((format.ok_or_else(|| fmt_err("missing format line"))?, elements, body))
}

/// Scalar property names and values of the `vertex` element, row-major.
fn read_vertices(bytes: &[u8]) -> Result<(Vec<String>, Vec<f64>, usize)> {
    let (format, elements, mut pos) = parse_header(bytes)?;
    let vi = elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| fmt_err("no vertex element"))?;
    let names: Vec<String> = elements[vi]
        .props
        .iter()
        .filter_map(|p| match p {
            Property::Scalar(n, _) => Some(n.clone()),
            Property::List(..) => None,
        })
        .collect();
    let count = elements[vi].count;
    // a vertex row is at least one byte per property; reject absurd counts
    if count.saturating_mul(elements[vi].props.len().max(1)) > bytes.len() {
        return Err(fmt_err(format!("{count} vertices cannot fit in {} bytes", bytes.len())));
    }
    let mut values = Vec::with_capacity(count * names.len());

    if format == Format::Ascii {
        let text = std::str::from_utf8(&bytes[pos..]).map_err(|_| fmt_err("ascii body is not utf-8"))?;
        let mut rows = text.lines().filter(|l| !l.trim().is_empty());
        for el in &elements[..=vi] {
            for row in 0..el.count {
                let line = rows.next().ok_or_else(|| fmt_err(format!("{} row {row} missing", el.name)))?;
                if el.name != "vertex" {
                    continue;
                }
                let mut toks = line.split_whitespace();
                for p in &el.props {
                    match p {
                        Property::Scalar(n, _) => {
                            let t = toks.next().ok_or_else(|| fmt_err(format!("vertex {row}: missing `{n}`")))?;
                            values.push(t.parse().map_err(|_| fmt_err(format!("vertex {row}: bad `{n}` value `{t}`")))?);
                        }
                        Property::List(n, ..) => {
                            let t = toks.next().ok_or_else(|| fmt_err(format!("vertex {row}: missing `{n}`")))?;
                            let len: usize = t.parse().map_err(|_| fmt_err(format!("bad list length `{t}`")))?;
                            for _ in 0..len {
                                toks.next();
                            }
                        }
                    }
                }
            }
        }
        return Ok((names, values, count));
    }

    let big = format == Format::BinaryBe;
    let need = |pos: usize, n: usize| -> Result<()> {
        if pos.checked_add(n).map_or(true, |e| e > bytes.len()) {
            Err(fmt_err(format!("body truncated at byte {pos}")))
        } else {
            Ok(())
        }
    };
    for el in &elements[..=vi] {
        let is_vertex = el.name == "vertex";
        for _ in 0..el.count {
            for p in &el.props {
                match p {
                    Property::Scalar(_, t) => {
                        need(pos, t.size())?;
                        if is_vertex {
                            values.push(t.read(&bytes[pos..], big));
                        }
                        pos += t.size();
                    }
                    Property::List(_, ct, it) => {
                        need(pos, ct.size())?;
                        let len = ct.read(&bytes[pos..], big);
                        if !(len >= 0.0) {
                            return Err(fmt_err("negative list length"));
                        }
                        pos += ct.size();
                        let skip = (len as usize).saturating_mul(it.size());
                        need(pos, skip)?;
                        pos += skip;
                    }
                }
            }
        }
    }
    Ok((names, values, count))
}

fn degree_for_rest(n: usize) -> Option<u8> {
    (0..=MAX_SH_DEGREE).find(|&d| 3 * (sh_coeff_count(d) - 1) == n)
}

pub fn from_bytes(bytes: &[u8]) -> Result<SplatCloud> {
    let (names, values, count) = read_vertices(bytes)?;
    let col = |name: &str| -> Result<usize> {
        names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::MissingProperty(name.to_string()))
    };
    let pos = [col("x")?, col("y")?, col("z")?];
    let dc = [col("f_dc_0")?, col("f_dc_1")?, col("f_dc_2")?];
    let opacity = col("opacity")?;
    let scale = [col("scale_0")?, col("scale_1")?, col("scale_2")?];
    let rot = [col("rot_0")?, col("rot_1")?, col("rot_2")?, col("rot_3")?];
    let n_rest = names.iter().filter(|n| n.starts_with("f_rest_")).count();
    let degree = degree_for_rest(n_rest)
        .ok_or_else(|| fmt_err(format!("{n_rest} f_rest properties do not match any sh degree <= 3")))?;
    let rest: Vec<usize> = (0..n_rest).map(|i| col(&format!("f_rest_{i}"))).collect::<Result<_>>()?;
    let per_channel = sh_coeff_count(degree) - 1;
    let stride = names.len();

    let mut cloud = SplatCloud::new(degree)?;
    let gaussians: Vec<Gaussian3D> = (0..count)
        .map(|i| {
            let row = &values[i * stride..(i + 1) * stride];
            let v = |c: usize| row[c] as f32;
            let mut sh = vec![0.0f32; 3 * sh_coeff_count(degree)];
            for c in 0..3 {
                sh[c] = v(dc[c]);
                for k in 0..per_channel {
                    sh[(k + 1) * 3 + c] = v(rest[c * per_channel + k]);
                }
            }
            Gaussian3D {
                id: 0,
                position: pos.map(v),
                rotation: rot.map(v),
                log_scale: scale.map(v),
                sh,
                opacity_logit: v(opacity),
            }
        })
        .collect();
    let bad: Vec<usize> = gaussians
        .iter()
        .enumerate()
        .filter(|(_, g)| !g.is_finite() || g.rotation.iter().all(|&q| q == 0.0))
        .map(|(i, _)| i)
        .collect();
    if !bad.is_empty() {
        return Err(Error::NonFinite(bad));
    }
    cloud.extend_new(gaussians)?;
    Ok(cloud)
}

pub fn to_bytes(cloud: &SplatCloud) -> Vec<u8> {
    let per_channel = sh_coeff_count(cloud.sh_degree()) - 1;
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    header += &format!("element vertex {}\n", cloud.len());
    let mut props: Vec<String> = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    props.extend((0..3 * per_channel).map(|i| format!("f_rest_{i}")));
    props.push("opacity".into());
    props.extend((0..3).map(|i| format!("scale_{i}")));
    props.extend((0..4).map(|i| format!("rot_{i}")));
    for p in &props {
        header += &format!("property float {p}\n");
    }
    header += "end_header\n";

    let mut out = header.into_bytes();
    out.reserve(cloud.len() * props.len() * 4);
    let mut put = |v: f32| out.extend_from_slice(&v.to_le_bytes());
    for g in cloud.gaussians() {
        g.position.iter().for_each(|&v| put(v));
        (0..3).for_each(|_| put(0.0));
        (0..3).for_each(|c| put(g.sh[c]));
        for c in 0..3 {
            for k in 0..per_channel {
                put(g.sh[(k + 1) * 3 + c]);
            }
        }
        put(g.opacity_logit);
        g.log_scale.iter().for_each(|&v| put(v));
        g.rotation.iter().for_each(|&v| put(v));
    }
    out
}

pub fn export_ply(cloud: &SplatCloud, path: &Path) -> Result<u64> {
    let bytes = to_bytes(cloud);
    write_atomic(path, &bytes)?;
    Ok(bytes.len() as u64)
}

pub fn import_ply(path: &Path) -> Result<SplatCloud> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{random_cloud, GaussianRanges};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn roundtrip_all_degrees() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for d in 0..=3 {
            let c = random_cloud(&mut rng, 20, d, &GaussianRanges::default());
            let back = from_bytes(&to_bytes(&c)).unwrap();
            assert_eq!(back.sh_degree(), d);
            assert_eq!(back.ids(), (0..20).collect::<Vec<_>>());
            for (a, b) in c.gaussians().iter().zip(back.gaussians()) {
                let mut a = a.clone();
                a.id = b.id;
                assert!(a.bit_eq(b));
            }
        }
    }

    #[test]
    fn handcrafted_ascii_single_gaussian() {
        let text = "ply\nformat ascii 1.0\ncomment made by hand\nelement vertex 1\n\
            property float x\nproperty float y\nproperty float z\n\
            property float f_dc_0\nproperty float f_dc_1\nproperty float f_dc_2\n\
            property double opacity\nproperty float scale_0\nproperty float scale_1\nproperty float scale_2\n\
            property float rot_0\nproperty float rot_1\nproperty float rot_2\nproperty float rot_3\n\
            property uchar red\nend_header\n1 2 3 0.5 -0.5 0 0 -1 -2 -3 1 0 0 0 200\n";
        let c = from_bytes(text.as_bytes()).unwrap();
        assert_eq!(c.sh_degree(), 0);
        let g = &c.gaussians()[0];
        assert_eq!(g.position, [1.0, 2.0, 3.0]);
        assert_eq!(g.sh, vec![0.5, -0.5, 0.0]);
        assert_eq!(g.opacity(), 0.5);
        assert_eq!(g.log_scale, [-1.0, -2.0, -3.0]);
        assert_eq!(g.rotation, [1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn channel_major_rest_order() {
        let mut c = SplatCloud::new(1).unwrap();
        let sh: Vec<f32> = (0..12).map(|i| i as f32).collect();
        c.extend_new([Gaussian3D {
            id: 0,
            position: [0.0; 3],
            rotation: [1.0, 0.0, 0.0, 0.0],
            log_scale: [0.0; 3],
            sh,
            opacity_logit: 0.0,
        }])
        .unwrap();
        let bytes = to_bytes(&c);
        let (names, values, _) = read_vertices(&bytes).unwrap();
        let get = |n: &str| values[names.iter().position(|x| x == n).unwrap()];
        // coefficient k, channel c lives at sh[3k + c]; f_rest is c * 3 + (k - 1)
        assert_eq!(get("f_rest_0"), 3.0);
        assert_eq!(get("f_rest_1"), 6.0);
        assert_eq!(get("f_rest_2"), 9.0);
        assert_eq!(get("f_rest_3"), 4.0);
        assert_eq!(get("f_rest_8"), 11.0);
    }

    #[test]
    fn missing_property_named() {
        let text = "ply\nformat ascii 1.0\nelement vertex 0\nproperty float x\nproperty float y\nproperty float z\n\
            property float f_dc_0\nproperty float f_dc_1\nproperty float f_dc_2\nproperty float scale_0\nend_header\n";
        match from_bytes(text.as_bytes()) {
            Err(Error::MissingProperty(p)) => assert_eq!(p, "opacity"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn big_endian_and_skipped_elements() {
        let mut c = SplatCloud::new(0).unwrap();
        c.extend_new([Gaussian3D {
            id: 0,
            position: [1.5, -2.0, 0.25],
            rotation: [0.5, 0.5, 0.5, 0.5],
            log_scale: [-1.0; 3],
            sh: vec![0.1, 0.2, 0.3],
            opacity_logit: 2.0,
        }])
        .unwrap();
        let le = to_bytes(&c);
        let split = le.windows(11).position(|w| w == b"end_header\n").unwrap() + 11;
        let header = std::str::from_utf8(&le[..split])
            .unwrap()
            .replace("binary_little_endian", "binary_big_endian")
            .replace("end_header\n", "element face 1\nproperty list uchar int vertex_indices\nend_header\n");
        let mut be = header.into_bytes();
        for chunk in le[split..].chunks(4) {
            be.extend(chunk.iter().rev());
        }
        be.extend_from_slice(&[3, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 2]);
        let back = from_bytes(&be).unwrap();
        assert!(back.gaussians()[0].bit_eq(&c.gaussians()[0]));
    }

    #[test]
    fn truncated_binary_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let c = random_cloud(&mut rng, 3, 1, &GaussianRanges::default());
        let bytes = to_bytes(&c);
        for len in (0..bytes.len()).step_by(7) {
            assert!(from_bytes(&bytes[..len]).is_err());
        }
    }
}
