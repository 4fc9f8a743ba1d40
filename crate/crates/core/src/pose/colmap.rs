//! COLMAP text model (`cameras.txt`, `images.txt`, `points3D.txt`).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;

use crate::camera::{CameraIntrinsics, PoseSE3};
use crate::error::{Error, Result};

/// Nominal frame interval used when timestamps must be synthesized.
pub const DEFAULT_FRAME_INTERVAL_NS: u64 = 33_330_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoseConvention {
    WorldToCamera,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseEntry {
    pub image_id: u32,
    pub camera_id: u32,
    pub name: String,
    pub pose: PoseSE3,
}

impl PoseEntry {
    pub fn timestamp_ns(&self) -> u64 {
        self.pose.timestamp_ns
    }
}

/// Poses ordered by strictly increasing timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSequence {
    pub entries: Vec<PoseEntry>,
    pub cameras: BTreeMap<u32, CameraIntrinsics>,
    pub convention: PoseConvention,
}

impl PoseSequence {
    /// Bare trajectory without cameras or names.
    pub fn from_poses(poses: Vec<PoseSE3>) -> Result<Self> {
        let entries = poses
            .into_iter()
            .enumerate()
            .map(|(i, pose)| PoseEntry {
                image_id: i as u32 + 1,
                camera_id: 1,
                name: format!("{i:06}"),
                pose,
            })
            .collect();
        let seq = Self {
            entries,
            cameras: BTreeMap::new(),
            convention: PoseConvention::WorldToCamera,
        };
        seq.check_timestamps()?;
        Ok(seq)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn poses(&self) -> impl Iterator<Item = &PoseSE3> {
        self.entries.iter().map(|e| &e.pose)
    }

    pub fn intrinsics_for(&self, entry: &PoseEntry) -> Option<&CameraIntrinsics> {
        self.cameras.get(&entry.camera_id)
    }

    /// Entry whose timestamp is nearest to `ts`, if within `tolerance_ns`.
    pub fn nearest(&self, ts: u64, tolerance_ns: u64) -> Option<&PoseEntry> {
        let i = self.entries.partition_point(|e| e.pose.timestamp_ns < ts);
        [i.checked_sub(1), Some(i)]
            .into_iter()
            .flatten()
            .filter_map(|j| self.entries.get(j))
            .map(|e| (e.pose.timestamp_ns.abs_diff(ts), e))
            .filter(|(d, _)| *d <= tolerance_ns)
            .min_by_key(|(d, _)| *d)
            .map(|(_, e)| e)
    }

    /// Replace timestamps by image name; names missing from `by_name` keep
    /// their current value.
    pub fn override_timestamps(&mut self, by_name: &BTreeMap<String, u64>) -> Result<()> {
        for e in &mut self.entries {
            if let Some(&ts) = by_name.get(&e.name) {
                e.pose.timestamp_ns = ts;
            }
        }
        self.entries.sort_by_key(|e| e.pose.timestamp_ns);
        self.check_timestamps()
    }

    fn check_timestamps(&self) -> Result<()> {
        for w in self.entries.windows(2) {
            if w[1].pose.timestamp_ns <= w[0].pose.timestamp_ns {
                return Err(Error::InvalidInput(format!(
                    "timestamps not strictly increasing at image `{}`",
                    w[1].name
                )));
            }
        }
        for e in &self.entries {
            if !self.cameras.is_empty() && !self.cameras.contains_key(&e.camera_id) {
                return Err(Error::InvalidInput(format!(
                    "image `{}` references unknown camera {}",
                    e.name, e.camera_id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparsePoint {
    pub id: u64,
    pub xyz: [f64; 3],
    pub rgb: [u8; 3],
    pub error: f64,
    /// (image id, 2D point index) observations.
    pub track: Vec<(u32, u32)>,
}

impl SparsePoint {
    pub fn track_len(&self) -> usize {
        self.track.len()
    }
}

pub type SparsePoints = Vec<SparsePoint>;

#[derive(Debug, Clone, PartialEq)]
pub struct ColmapImport {
    pub poses: PoseSequence,
    pub points: SparsePoints,
}

struct Lines<'a> {
    path: &'a Path,
    text: String,
}

impl<'a> Lines<'a> {
    fn read(path: &'a Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Ok(Self {
            path,
            text: fs::read_to_string(path)?,
        })
    }

    /// Non-comment lines with 1-based line numbers.
    fn data(&self) -> impl Iterator<Item = (usize, &str)> {
        self.text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
            .filter(|(_, l)| !l.trim_start().starts_with('#'))
    }

    fn err(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line,
            message: message.into(),
        }
    }
}

fn field<T: std::str::FromStr>(lines: &Lines<'_>, line: usize, tok: Option<&str>, what: &str) -> Result<T> {
    let tok = tok.ok_or_else(|| lines.err(line, format!("missing {what}")))?;
    tok.parse()
        .map_err(|_| lines.err(line, format!("bad {what} `{tok}`")))
}

fn parse_cameras(path: &Path) -> Result<BTreeMap<u32, CameraIntrinsics>> {
    let lines = Lines::read(path)?;
    let mut cameras = BTreeMap::new();
    for (n, line) in lines.data() {
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let id: u32 = field(&lines, n, it.next(), "camera id")?;
        let model = it.next().ok_or_else(|| lines.err(n, "missing camera model"))?;
        let width: u32 = field(&lines, n, it.next(), "width")?;
        let height: u32 = field(&lines, n, it.next(), "height")?;
        let params = it
            .map(|t| t.parse::<f64>().map_err(|_| lines.err(n, format!("bad camera parameter `{t}`"))))
            .collect::<Result<Vec<_>>>()?;
        let (fx, fy, cx, cy) = match (model, params.as_slice()) {
            ("SIMPLE_PINHOLE", &[f, cx, cy]) => (f, f, cx, cy),
            ("PINHOLE", &[fx, fy, cx, cy]) => (fx, fy, cx, cy),
            ("SIMPLE_PINHOLE" | "PINHOLE", p) => {
                return Err(lines.err(n, format!("{model} with {} parameters", p.len())));
            }
            (other, _) => return Err(Error::UnsupportedModel(other.to_string())),
        };
        let k = CameraIntrinsics::new(fx, fy, cx, cy, width, height).map_err(|e| lines.err(n, e.to_string()))?;
        if cameras.insert(id, k).is_some() {
            return Err(lines.err(n, format!("duplicate camera id {id}")));
        }
    }
    Ok(cameras)
}

struct RawImage {
    image_id: u32,
    camera_id: u32,
    name: String,
    q: [f64; 4],
    t: [f64; 3],
    line: usize,
}

fn parse_images(path: &Path) -> Result<Vec<RawImage>> {
    let lines = Lines::read(path)?;
    let data: Vec<(usize, &str)> = lines.data().collect();
    // skip blank lines only where a header line is expected; the second
    // line of each record may legitimately be empty
    let mut images = Vec::new();
    let mut i = 0;
    while i < data.len() {
        let (n, line) = data[i];
        if line.trim().is_empty() {
            i += 1;
            continue;
        }
        let mut it = line.split_whitespace();
        let image_id: u32 = field(&lines, n, it.next(), "image id")?;
        let mut q = [0.0; 4];
        for (j, v) in q.iter_mut().enumerate() {
            *v = field(&lines, n, it.next(), ["qw", "qx", "qy", "qz"][j])?;
        }
        let mut t = [0.0; 3];
        for (j, v) in t.iter_mut().enumerate() {
            *v = field(&lines, n, it.next(), ["tx", "ty", "tz"][j])?;
        }
        let camera_id: u32 = field(&lines, n, it.next(), "camera id")?;
        let name = it.collect::<Vec<_>>().join(" ");
        if name.is_empty() {
            return Err(lines.err(n, "missing image name"));
        }
        if let Some(&(pn, points)) = data.get(i + 1) {
            let toks: Vec<&str> = points.split_whitespace().collect();
            if toks.len() % 3 != 0 {
                return Err(lines.err(pn, "POINTS2D entries must be (x, y, point3d_id) triples"));
            }
            for c in toks.chunks(3) {
                field::<f64>(&lines, pn, Some(c[0]), "point x")?;
                field::<f64>(&lines, pn, Some(c[1]), "point y")?;
                field::<i64>(&lines, pn, Some(c[2]), "point3d id")?;
            }
        }
        images.push(RawImage {
            image_id,
            camera_id,
            name,
            q,
            t,
            line: n,
        });
        i += 2;
    }
    Ok(images)
}

fn parse_points(path: &Path) -> Result<SparsePoints> {
    let lines = Lines::read(path)?;
    let mut points = Vec::new();
    for (n, line) in lines.data() {
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let id: u64 = field(&lines, n, it.next(), "point id")?;
        let mut xyz = [0.0; 3];
        for (j, v) in xyz.iter_mut().enumerate() {
            *v = field(&lines, n, it.next(), ["x", "y", "z"][j])?;
        }
        let mut rgb = [0u8; 3];
        for (j, v) in rgb.iter_mut().enumerate() {
            *v = field(&lines, n, it.next(), ["r", "g", "b"][j])?;
        }
        let error: f64 = field(&lines, n, it.next(), "error")?;
        let rest: Vec<&str> = it.collect();
        if rest.len() % 2 != 0 {
            return Err(lines.err(n, "track entries must be (image_id, point2d_idx) pairs"));
        }
        let track = rest
            .chunks(2)
            .map(|c| Ok((field(&lines, n, Some(c[0]), "track image id")?, field(&lines, n, Some(c[1]), "track point index")?)))
            .collect::<Result<Vec<_>>>()?;
        points.push(SparsePoint { id, xyz, rgb, error, track });
    }
    Ok(points)
}

/// Timestamps from image names: when every stem is an integer they are
/// taken as nanoseconds, otherwise frames are spaced `interval_ns` apart in
/// name order.
fn synthesize_timestamps(names: &[&str], interval_ns: u64) -> Vec<u64> {
    let stems: Option<Vec<u64>> = names
        .iter()
        .map(|n| Path::new(n).file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse().ok()))
        .collect();
    match stems {
        Some(ts) if ts.windows(2).all(|w| w[0] < w[1]) => ts,
        _ => (0..names.len() as u64).map(|i| i * interval_ns).collect(),
    }
}

pub fn import_colmap(dir: &Path) -> Result<ColmapImport> {
    import_colmap_with_interval(dir, DEFAULT_FRAME_INTERVAL_NS)
}

pub fn import_colmap_with_interval(dir: &Path, interval_ns: u64) -> Result<ColmapImport> {
    let cameras = parse_cameras(&dir.join("cameras.txt"))?;
    let images_path = dir.join("images.txt");
    let mut raw = parse_images(&images_path)?;
    let points = parse_points(&dir.join("points3D.txt"))?;

    raw.sort_by(|a, b| a.name.cmp(&b.name));
    for w in raw.windows(2) {
        if w[0].name == w[1].name {
            return Err(Error::Parse {
                path: images_path.clone(),
                line: w[1].line,
                message: format!("duplicate image name `{}`", w[1].name),
            });
        }
    }
    let names: Vec<&str> = raw.iter().map(|r| r.name.as_str()).collect();
    let stamps = synthesize_timestamps(&names, interval_ns);
    let mut entries = Vec::with_capacity(raw.len());
    for (r, ts) in raw.iter().zip(stamps) {
        if !cameras.contains_key(&r.camera_id) {
            return Err(Error::Parse {
                path: images_path.clone(),
                line: r.line,
                message: format!("unknown camera id {}", r.camera_id),
            });
        }
        let pose = PoseSE3::from_quaternion(r.q, Vector3::from(r.t), ts).map_err(|e| Error::Parse {
            path: images_path.clone(),
            line: r.line,
            message: e.to_string(),
        })?;
        entries.push(PoseEntry {
            image_id: r.image_id,
            camera_id: r.camera_id,
            name: r.name.clone(),
            pose,
        });
    }
    let poses = PoseSequence {
        entries,
        cameras,
        convention: PoseConvention::WorldToCamera,
    };
    poses.check_timestamps()?;
    Ok(ColmapImport { poses, points })
}

fn write_atomic(path: &Path, text: &str) -> Result<()> {
    let tmp: PathBuf = path.with_extension("txt.tmp");
    fs::write(&tmp, text)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Write a COLMAP text model. Cameras are always written as `PINHOLE`;
/// 2D keypoints are not tracked, so each image's points line is empty.
pub fn export_colmap(dir: &Path, poses: &PoseSequence, points: &[SparsePoint]) -> Result<()> {
    fs::create_dir_all(dir)?;

    let mut cams = String::from("# Camera list with one line of data per camera:\n#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n");
    let _ = writeln!(cams, "# Number of cameras: {}", poses.cameras.len());
    for (id, k) in &poses.cameras {
        let _ = writeln!(cams, "{id} PINHOLE {} {} {} {} {} {}", k.width, k.height, k.fx, k.fy, k.cx, k.cy);
    }

    let mut imgs = String::from(
        "# Image list with two lines of data per image:\n#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n#   POINTS2D[] as (X, Y, POINT3D_ID)\n",
    );
    let _ = writeln!(imgs, "# Number of images: {}", poses.entries.len());
    for e in &poses.entries {
        let q = e.pose.quaternion();
        let t = e.pose.translation;
        let _ = writeln!(
            imgs,
            "{} {} {} {} {} {} {} {} {} {}\n",
            e.image_id, q[0], q[1], q[2], q[3], t.x, t.y, t.z, e.camera_id, e.name
        );
    }

    let mut pts = String::from(
        "# 3D point list with one line of data per point:\n#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)\n",
    );
    let _ = writeln!(pts, "# Number of points: {}", points.len());
    for p in points {
        let _ = write!(
            pts,
            "{} {} {} {} {} {} {} {}",
            p.id, p.xyz[0], p.xyz[1], p.xyz[2], p.rgb[0], p.rgb[1], p.rgb[2], p.error
        );
        for (img, idx) in &p.track {
            let _ = write!(pts, " {img} {idx}");
        }
        pts.push('\n');
    }

    write_atomic(&dir.join("cameras.txt"), &cams)?;
    write_atomic(&dir.join("images.txt"), &imgs)?;
    write_atomic(&dir.join("points3D.txt"), &pts)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn write_trio(dir: &Path, cameras: &str, images: &str, points: &str) {
        fs::write(dir.join("cameras.txt"), cameras).unwrap();
        fs::write(dir.join("images.txt"), images).unwrap();
        fs::write(dir.join("points3D.txt"), points).unwrap();
    }

    const CAMERAS: &str = "# Camera list\n1 PINHOLE 640 480 500 510 320 240\n";
    const POINTS: &str = "# pts\n1 0 0 1 255 0 0 0.5 1 0 2 0\n2 1 0 1 0 255 0 0.5 1 1 2 1\n3 0 1 1 0 0 255 0.5 1 2 2 2\n";

    #[test]
    fn minimal_trio() {
        let dir = tempfile::tempdir().unwrap();
        let images = "# Image list\n1 1 0 0 0 0 0 0 1 b.png\n10 20 0\n2 1 0 0 0 1 2 3 1 a.png\n\n";
        write_trio(dir.path(), CAMERAS, images, POINTS);
        let m = import_colmap(dir.path()).unwrap();
        assert_eq!(m.poses.len(), 2);
        assert_eq!(m.points.len(), 3);
        // sorted by name
        assert_eq!(m.poses.entries[0].name, "a.png");
        assert_eq!(m.poses.entries[0].pose.timestamp_ns, 0);
        assert_eq!(m.poses.entries[1].pose.timestamp_ns, DEFAULT_FRAME_INTERVAL_NS);
        let b = &m.poses.entries[1].pose;
        assert_eq!(b.rotation, nalgebra::Matrix3::identity());
        assert_eq!(b.translation, Vector3::zeros());
        assert_eq!(m.points[0].track_len(), 2);
        assert_eq!(m.points[2].rgb, [0, 0, 255]);
        let k = m.poses.cameras[&1];
        assert_eq!((k.fx, k.fy, k.cx, k.cy), (500.0, 510.0, 320.0, 240.0));
    }

    #[test]
    fn numeric_names_are_timestamps() {
        let dir = tempfile::tempdir().unwrap();
        let images = "1 1 0 0 0 0 0 0 1 1000.png\n\n2 1 0 0 0 0 0 0 1 250.png\n\n";
        write_trio(dir.path(), CAMERAS, images, POINTS);
        let m = import_colmap(dir.path()).unwrap();
        let ts: Vec<u64> = m.poses.poses().map(|p| p.timestamp_ns).collect();
        // name order is lexicographic, which puts 1000 before 250; stems
        // that are not increasing in that order fall back to synthesis
        assert_eq!(ts, vec![0, DEFAULT_FRAME_INTERVAL_NS]);
    }

    #[test]
    fn simple_pinhole_and_unknown_model() {
        let dir = tempfile::tempdir().unwrap();
        write_trio(dir.path(), "1 SIMPLE_PINHOLE 100 80 90 50 40\n", "", "");
        let m = import_colmap(dir.path()).unwrap();
        assert_eq!(m.poses.cameras[&1].fy, 90.0);

        write_trio(dir.path(), "1 OPENCV 100 80 90 90 50 40 0 0 0 0\n", "", "");
        match import_colmap(dir.path()) {
            Err(Error::UnsupportedModel(m)) => assert_eq!(m, "OPENCV"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn parse_error_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let images = "# c\n# c\n1 1 0 0 zero 0 0 0 1 a.png\n\n";
        write_trio(dir.path(), CAMERAS, images, POINTS);
        match import_colmap(dir.path()) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("qz"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_camera_reference_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_trio(dir.path(), CAMERAS, "1 1 0 0 0 0 0 0 7 a.png\n\n", POINTS);
        assert!(matches!(import_colmap(dir.path()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn count_invariant_matches_data_lines() {
        let dir = tempfile::tempdir().unwrap();
        let mut images = String::from("# header\n");
        for i in 0..7 {
            images += &format!("{} 1 0 0 0 0 0 0 1 f{i:02}.png\n", i + 1);
            if i % 2 == 0 {
                images += "1.0 2.0 -1 3.0 4.0 5\n";
            } else {
                images += "\n";
            }
        }
        write_trio(dir.path(), CAMERAS, &images, POINTS);
        let data_lines = images.lines().filter(|l| !l.starts_with('#')).count();
        let m = import_colmap(dir.path()).unwrap();
        assert_eq!(m.poses.len(), data_lines / 2);
        assert_eq!(m.points.len(), POINTS.lines().filter(|l| !l.starts_with('#')).count());
    }

    #[test]
    fn export_import_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut cameras = BTreeMap::new();
        cameras.insert(3, CameraIntrinsics::new(412.5, 400.25, 200.0, 150.5, 400, 300).unwrap());
        let entries: Vec<PoseEntry> = (0..25)
            .map(|i| {
                let q: [f64; 4] = [0; 4].map(|_| rng.gen_range(-1.0..1.0));
                let t = Vector3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
                PoseEntry {
                    image_id: 100 + i,
                    camera_id: 3,
                    name: format!("frame_{i:04}.png"),
                    pose: PoseSE3::from_quaternion(q, t, i as u64 * DEFAULT_FRAME_INTERVAL_NS).unwrap(),
                }
            })
            .collect();
        let seq = PoseSequence {
            entries,
            cameras,
            convention: PoseConvention::WorldToCamera,
        };
        let points: Vec<SparsePoint> = (0..10)
            .map(|i| SparsePoint {
                id: i,
                xyz: [rng.gen(), rng.gen(), rng.gen()],
                rgb: [rng.gen(), rng.gen(), rng.gen()],
                error: rng.gen(),
                track: vec![(100, i as u32), (101, 2)],
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        export_colmap(dir.path(), &seq, &points).unwrap();
        let back = import_colmap(dir.path()).unwrap();
        assert_eq!(back.points, points);
        assert_eq!(back.poses.cameras, seq.cameras);
        assert_eq!(back.poses.len(), seq.len());
        for (a, b) in seq.entries.iter().zip(&back.poses.entries) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.pose.timestamp_ns, b.pose.timestamp_ns);
            assert!((a.pose.rotation - b.pose.rotation).abs().max() < 1e-9);
            assert!((a.pose.translation - b.pose.translation).abs().max() < 1e-9);
            b.pose.validate().unwrap();
        }
    }

    #[test]
    fn nearest_lookup() {
        let seq = PoseSequence::from_poses(
            (0..5).map(|i| PoseSE3::identity().with_timestamp(i * 100)).collect(),
        )
        .unwrap();
        assert_eq!(seq.nearest(149, 60).unwrap().pose.timestamp_ns, 100);
        assert_eq!(seq.nearest(151, 60).unwrap().pose.timestamp_ns, 200);
        assert!(seq.nearest(1000, 60).is_none());
        assert_eq!(seq.nearest(0, 0).unwrap().pose.timestamp_ns, 0);
    }
}
