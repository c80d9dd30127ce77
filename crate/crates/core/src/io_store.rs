//! On-disk formats: scan directories, pose files, model checkpoints, sampled
//! grids, PLY meshes and 2D trajectories. Binary data is little-endian.

use crate::encode::EncodingConfig;
use crate::field::{GridField, NeuralField};
use crate::field_net::{FieldNet, Layer, NetError};
use crate::geom::{Aabb, Dim, GeomError, Pose, Scan, SceneTransform, Vec3};
use crate::mesher::{PolylineSet, TriangleMesh};
use ndarray::{Array1, Array2};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{path}: size {size} is not a multiple of the {record}-byte record")]
    RecordSize { path: PathBuf, size: usize, record: usize },
    #[error("{path}: non-finite value")]
    NonFinite { path: PathBuf },
    #[error("{scans} scan files but {poses} poses")]
    CountMismatch { scans: usize, poses: usize },
    #[error("not a model file (bad magic)")]
    BadMagic,
    #[error("unsupported model format version {0}")]
    Version(u16),
    #[error("file truncated")]
    Truncated,
    #[error("{0} trailing bytes after model parameters")]
    Trailing(usize),
    #[error("invalid model: {0}")]
    Model(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Geom(#[from] GeomError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub const POSES_FILE: &str = "poses.txt";
pub const TRAJECTORY_FILE: &str = "trajectory.txt";

pub fn scan_file_name(index: usize) -> String {
    format!("scan_{index:06}.bin")
}

/// Parses one 3x4 row-major world-from-sensor pose per line.
pub fn parse_poses(text: &str, path: &Path) -> Result<Vec<Pose>, IoError> {
    let mut poses = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| IoError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e: std::num::ParseFloatError| parse_err(e.to_string()))?;
        let arr: [f64; 12] = vals
            .as_slice()
            .try_into()
            .map_err(|_| parse_err(format!("expected 12 values, found {}", vals.len())))?;
        poses.push(Pose::from_row_major(&arr).map_err(|e| parse_err(e.to_string()))?);
    }
    Ok(poses)
}

pub fn read_poses(path: &Path) -> Result<Vec<Pose>, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_poses(&text, path)
}

pub fn format_poses(poses: &[Pose]) -> String {
    let mut out = String::new();
    for p in poses {
        let row: Vec<String> = p.to_row_major().iter().map(|v| format!("{v:e}")).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

/// Decodes little-endian f32 records of `stride` floats, keeping the first three.
pub fn decode_points(bytes: &[u8], stride: usize, path: &Path) -> Result<Vec<Vec3>, IoError> {
    let record = 4 * stride;
    if bytes.len() % record != 0 {
        return Err(IoError::RecordSize {
            path: path.to_path_buf(),
            size: bytes.len(),
            record,
        });
    }
    let mut points = Vec::with_capacity(bytes.len() / record);
    for rec in bytes.chunks_exact(record) {
        let f = |k: usize| f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().unwrap()) as f64;
        let p = Vec3::new(f(0), f(1), f(2));
        if !p.iter().all(|v| v.is_finite()) {
            return Err(IoError::NonFinite { path: path.to_path_buf() });
        }
        points.push(p);
    }
    Ok(points)
}

pub fn encode_points(points: &[Vec3]) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 * points.len());
    for p in points {
        for k in 0..3 {
            out.extend_from_slice(&(p[k] as f32).to_le_bytes());
        }
    }
    out
}

/// Loads `poses.txt` and the scan files of `dir`. Files named `scan_*.bin`
/// hold xyz triplets; other `*.bin` files are read as xyz + intensity.
/// Scans pair with poses in file-name order.
pub fn load_scans(dir: &Path) -> Result<Vec<Scan>, IoError> {
    let poses = read_poses(&dir.join(POSES_FILE))?;
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "bin"))
        .collect();
    files.sort();
    if files.len() != poses.len() {
        return Err(IoError::CountMismatch {
            scans: files.len(),
            poses: poses.len(),
        });
    }
    files
        .iter()
        .zip(poses)
        .map(|(path, pose)| {
            let bytes = fs::read(path).map_err(io_err(path))?;
            let xyz_only = path
                .file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("scan_"));
            let points = decode_points(&bytes, if xyz_only { 3 } else { 4 }, path)?;
            Ok(Scan::new(pose, points)?)
        })
        .collect()
}

/// Writes scans as `scan_NNNNNN.bin` plus `poses.txt`.
pub fn write_scans(dir: &Path, scans: &[Scan]) -> Result<(), IoError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (i, scan) in scans.iter().enumerate() {
        let path = dir.join(scan_file_name(i));
        fs::write(&path, encode_points(scan.points())).map_err(io_err(&path))?;
    }
    let poses: Vec<Pose> = scans.iter().map(|s| *s.pose()).collect();
    let path = dir.join(POSES_FILE);
    fs::write(&path, format_poses(&poses)).map_err(io_err(&path))
}

pub const MODEL_MAGIC: &[u8; 6] = b"CCNDF\0";
pub const MODEL_VERSION: u16 = 1;

/// Byte length of the checkpoint header for a net of this shape.
pub fn model_header_len(layer_count: usize, h: usize) -> usize {
    6 + 2 + 1 + 2 + 2 + 4 * (layer_count + 1) + 8 * h + 8 * layer_count + 8 * 4
}

/// Checkpoint layout: magic, version u16, dim u8, h u16, layer count u16,
/// layer sizes u32, frequencies f64, per-layer sine factor f64 (0 = linear),
/// scene center 3xf64 and scale f64, then every parameter as f64 in layer
/// order (weights row-major, then bias).
pub fn encode_model(field: &NeuralField) -> Vec<u8> {
    let net = &field.net;
    let sizes = net.layer_sizes();
    let freqs = net.encoding().frequencies();
    let mut out = Vec::with_capacity(model_header_len(net.layers().len(), freqs.len()) + 8 * net.param_count());
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.push(net.dim().m() as u8);
    out.extend_from_slice(&(freqs.len() as u16).to_le_bytes());
    out.extend_from_slice(&(net.layers().len() as u16).to_le_bytes());
    for s in &sizes {
        out.extend_from_slice(&(*s as u32).to_le_bytes());
    }
    for f in freqs {
        out.extend_from_slice(&f.to_le_bytes());
    }
    for l in net.layers() {
        out.extend_from_slice(&l.omega.unwrap_or(0.0).to_le_bytes());
    }
    let t = &field.transform;
    for v in [t.center.x, t.center.y, t.center.z, t.scale] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for p in net.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IoError> {
        let s = self.bytes.get(self.pos..self.pos + n).ok_or(IoError::Truncated)?;
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, IoError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, IoError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, IoError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, IoError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<NeuralField, IoError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(6).map_err(|_| IoError::BadMagic)? != MODEL_MAGIC {
        return Err(IoError::BadMagic);
    }
    let version = r.u16()?;
    if version != MODEL_VERSION {
        return Err(IoError::Version(version));
    }
    let dim = Dim::from_m(r.u8()? as usize).ok_or_else(|| IoError::Model("dimension must be 2 or 3".into()))?;
    let h = r.u16()? as usize;
    let n_layers = r.u16()? as usize;
    let sizes: Vec<usize> = (0..=n_layers).map(|_| r.u32().map(|v| v as usize)).collect::<Result<_, _>>()?;
    let freqs: Vec<f64> = (0..h).map(|_| r.f64()).collect::<Result<_, _>>()?;
    let omegas: Vec<f64> = (0..n_layers).map(|_| r.f64()).collect::<Result<_, _>>()?;
    let center = Vec3::new(r.f64()?, r.f64()?, r.f64()?);
    let scale = r.f64()?;
    if !(scale > 0.0) || !center.iter().all(|v| v.is_finite()) {
        return Err(IoError::Model("invalid scene transform".into()));
    }
    let encoding = EncodingConfig::new(freqs).map_err(|e| IoError::Model(e.to_string()))?;
    let mut layers = Vec::with_capacity(n_layers);
    for l in 0..n_layers {
        let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
        let w: Vec<f64> = (0..fan_in * fan_out).map(|_| r.f64()).collect::<Result<_, _>>()?;
        let b: Vec<f64> = (0..fan_out).map(|_| r.f64()).collect::<Result<_, _>>()?;
        layers.push(Layer {
            weights: Array2::from_shape_vec((fan_out, fan_in), w).expect("length matches shape"),
            bias: Array1::from(b),
            omega: (omegas[l] != 0.0).then_some(omegas[l]),
        });
    }
    if r.pos != bytes.len() {
        return Err(IoError::Trailing(bytes.len() - r.pos));
    }
    let net = FieldNet::from_layers(dim, encoding, layers)?;
    Ok(NeuralField::new(net, SceneTransform { center, scale }))
}

pub fn save_model(path: &Path, field: &NeuralField) -> Result<(), IoError> {
    fs::write(path, encode_model(field)).map_err(io_err(path))
}

pub fn load_model(path: &Path) -> Result<NeuralField, IoError> {
    decode_model(&fs::read(path).map_err(io_err(path))?)
}

fn write_buffered(path: &Path, body: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> Result<(), IoError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    body(&mut w).and_then(|_| w.flush()).map_err(io_err(path))
}

pub fn format_mesh_ply(mesh: &TriangleMesh) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nelement face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.vertices.len(),
        mesh.triangles.len()
    );
    for v in &mesh.vertices {
        let _ = writeln!(s, "{} {} {}", v.x as f32, v.y as f32, v.z as f32);
    }
    for t in &mesh.triangles {
        let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
    }
    s
}

pub fn format_polylines_ply(lines: &PolylineSet) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nelement edge {}\nproperty int vertex1\nproperty int vertex2\nend_header\n",
        lines.vertices.len(),
        lines.segments.len()
    );
    for v in &lines.vertices {
        let _ = writeln!(s, "{} {} {}", v.x as f32, v.y as f32, v.z as f32);
    }
    for e in &lines.segments {
        let _ = writeln!(s, "{} {}", e[0], e[1]);
    }
    s
}

pub fn export_mesh_ply(mesh: &TriangleMesh, path: &Path) -> Result<(), IoError> {
    write_buffered(path, |w| w.write_all(format_mesh_ply(mesh).as_bytes()))
}

pub fn export_polylines_ply(lines: &PolylineSet, path: &Path) -> Result<(), IoError> {
    write_buffered(path, |w| w.write_all(format_polylines_ply(lines).as_bytes()))
}

/// Reads back an ASCII PLY written by [`export_mesh_ply`].
pub fn parse_mesh_ply(text: &str) -> Result<TriangleMesh, IoError> {
    let bad = |line: usize, msg: &str| IoError::Parse {
        path: PathBuf::from("<ply>"),
        line,
        msg: msg.to_string(),
    };
    let mut lines = text.lines().enumerate();
    let (mut nv, mut nf) = (0usize, 0usize);
    for (i, line) in lines.by_ref() {
        let parts: Vec<&str> = line.split_whitespace().collect();
        match parts.as_slice() {
            ["element", "vertex", n] => nv = n.parse().map_err(|_| bad(i + 1, "bad vertex count"))?,
            ["element", "face", n] => nf = n.parse().map_err(|_| bad(i + 1, "bad face count"))?,
            ["end_header"] => break,
            _ => {}
        }
    }
    let mut mesh = TriangleMesh::default();
    for _ in 0..nv {
        let (i, line) = lines.next().ok_or_else(|| bad(0, "missing vertex"))?;
        let v: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|_| bad(i + 1, "bad vertex"))?;
        if v.len() != 3 {
            return Err(bad(i + 1, "vertex needs 3 coordinates"));
        }
        mesh.vertices.push(Vec3::new(v[0], v[1], v[2]));
    }
    for _ in 0..nf {
        let (i, line) = lines.next().ok_or_else(|| bad(0, "missing face"))?;
        let v: Vec<u32> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|_| bad(i + 1, "bad face"))?;
        if v.len() != 4 || v[0] != 3 || v[1..].iter().any(|&k| k as usize >= nv) {
            return Err(bad(i + 1, "face must be a triangle with valid indices"));
        }
        mesh.triangles.push([v[1], v[2], v[3]]);
    }
    Ok(mesh)
}

/// Text header followed by little-endian f32 samples, x fastest:
///
/// ```text
/// ndf-grid 1
/// dim 3
/// min -2 -2 -2
/// max 2 2 2
/// res 4 4 4
/// end
/// ```
pub fn encode_grid(grid: &GridField) -> Vec<u8> {
    let (lo, hi, res) = (grid.aabb().min(), grid.aabb().max(), grid.res());
    let mut out = format!(
        "ndf-grid 1\ndim {}\nmin {} {} {}\nmax {} {} {}\nres {} {} {}\nend\n",
        grid.aabb().dim().m(),
        lo.x,
        lo.y,
        lo.z,
        hi.x,
        hi.y,
        hi.z,
        res[0],
        res[1],
        res[2]
    )
    .into_bytes();
    for v in grid.values() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_grid(bytes: &[u8]) -> Result<GridField, IoError> {
    let bad = |msg: &str| IoError::Parse {
        path: PathBuf::from("<grid>"),
        line: 0,
        msg: msg.to_string(),
    };
    let marker = b"\nend\n";
    let end = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| bad("missing end of header"))?
        + marker.len();
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| bad("header is not text"))?;
    let mut dim = None;
    let (mut lo, mut hi, mut res) = (None, None, None);
    for line in header.lines() {
        let parts: Vec<&str> = line.split_whitespace().collect();
        let nums = |k: usize| -> Result<Vec<f64>, IoError> {
            let v: Vec<f64> = parts[1..].iter().map(|s| s.parse()).collect::<Result<_, _>>().map_err(|_| bad(line))?;
            if v.len() != k {
                return Err(bad(line));
            }
            Ok(v)
        };
        match parts.first().copied() {
            Some("dim") => dim = Dim::from_m(nums(1)?[0] as usize),
            Some("min") => lo = Some(nums(3)?),
            Some("max") => hi = Some(nums(3)?),
            Some("res") => res = Some(nums(3)?),
            _ => {}
        }
    }
    let (Some(dim), Some(lo), Some(hi), Some(res)) = (dim, lo, hi, res) else {
        return Err(bad("incomplete header"));
    };
    let aabb = Aabb::new(Vec3::new(lo[0], lo[1], lo[2]), Vec3::new(hi[0], hi[1], hi[2]), dim)?;
    let res = [res[0] as usize, res[1] as usize, res[2] as usize];
    let payload = &bytes[end..];
    let count: usize = res.iter().product();
    if payload.len() != 4 * count {
        return Err(IoError::Truncated);
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    GridField::from_values(aabb, res, values).ok_or(IoError::Truncated)
}

pub fn export_grid(grid: &GridField, path: &Path) -> Result<(), IoError> {
    fs::write(path, encode_grid(grid)).map_err(io_err(path))
}

pub fn import_grid(path: &Path) -> Result<GridField, IoError> {
    decode_grid(&fs::read(path).map_err(io_err(path))?)
}

/// One planar pose per time step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

pub fn format_trajectory(points: &[TrajectoryPoint]) -> String {
    points.iter().map(|p| format!("{} {} {} {}\n", p.t, p.x, p.y, p.theta)).collect()
}

pub fn parse_trajectory(text: &str, path: &Path) -> Result<Vec<TrajectoryPoint>, IoError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e: std::num::ParseFloatError| IoError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })?;
        if v.len() != 4 {
            return Err(IoError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("expected `t x y theta`, found {} values", v.len()),
            });
        }
        out.push(TrajectoryPoint {
            t: v[0],
            x: v[1],
            y: v[2],
            theta: v[3],
        });
    }
    Ok(out)
}

pub fn write_trajectory(path: &Path, points: &[TrajectoryPoint]) -> Result<(), IoError> {
    fs::write(path, format_trajectory(points)).map_err(io_err(path))
}

pub fn read_trajectory(path: &Path) -> Result<Vec<TrajectoryPoint>, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_trajectory(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field_net::NetConfig;

    #[test]
    fn identity_pose_line() {
        let poses = parse_poses("1 0 0 0 0 1 0 0 0 0 1 0\n", Path::new("p")).unwrap();
        assert_eq!(poses, vec![Pose::identity()]);
        assert!(matches!(
            parse_poses("1 0 0 0 0 1 0 0 0 0 1", Path::new("p")),
            Err(IoError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn point_records() {
        let pts = vec![Vec3::new(1.0, 2.0, 3.0), Vec3::new(-0.5, 0.25, 8.0)];
        let bytes = encode_points(&pts);
        assert_eq!(bytes.len(), 12 * pts.len());
        assert_eq!(decode_points(&bytes, 3, Path::new("s")).unwrap(), pts);

        let mut kitti = Vec::new();
        for p in &pts {
            for v in [p.x as f32, p.y as f32, p.z as f32, 0.7] {
                kitti.extend_from_slice(&v.to_le_bytes());
            }
        }
        assert_eq!(kitti.len(), 16 * pts.len());
        assert_eq!(decode_points(&kitti, 4, Path::new("k")).unwrap(), pts);
        assert!(matches!(
            decode_points(&bytes[..13], 3, Path::new("s")),
            Err(IoError::RecordSize { size: 13, record: 12, .. })
        ));
        let nan = encode_points(&[Vec3::new(f64::NAN, 0.0, 0.0)]);
        assert!(matches!(decode_points(&nan, 3, Path::new("s")), Err(IoError::NonFinite { .. })));
    }

    fn model() -> NeuralField {
        let cfg = NetConfig {
            dim: Dim::Three,
            encoding: EncodingConfig::log_spaced(4, 1.0, 8.0).unwrap(),
            hidden_width: 16,
            hidden_layers: 2,
            first_omega: 1.0,
            hidden_omega: 1.0,
        };
        NeuralField::new(
            FieldNet::init(&cfg, 3).unwrap(),
            SceneTransform {
                center: Vec3::new(1.0, -2.0, 0.5),
                scale: 0.25,
            },
        )
    }

    #[test]
    fn model_round_trip_is_bit_exact() {
        let field = model();
        let bytes = encode_model(&field);
        let back = decode_model(&bytes).unwrap();
        assert_eq!(back, field);
        let n = field.net.layers().len();
        assert_eq!(bytes.len(), model_header_len(n, 4) + 8 * field.net.param_count());
    }

    #[test]
    fn model_rejects_corruption() {
        let bytes = encode_model(&model());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_model(&bad), Err(IoError::BadMagic)));
        let mut ver = bytes.clone();
        ver[6] = 9;
        assert!(matches!(decode_model(&ver), Err(IoError::Version(9))));
        assert!(matches!(decode_model(&bytes[..bytes.len() - 3]), Err(IoError::Truncated)));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode_model(&long), Err(IoError::Trailing(1))));
    }

    #[test]
    fn ply_headers() {
        let cube = TriangleMesh {
            vertices: (0..8).map(|c| Vec3::new((c & 1) as f64, ((c >> 1) & 1) as f64, (c >> 2) as f64)).collect(),
            triangles: vec![[0, 1, 2]; 12],
        };
        let text = format_mesh_ply(&cube);
        assert!(text.contains("element vertex 8\n"));
        assert!(text.contains("element face 12\n"));
        assert_eq!(parse_mesh_ply(&text).unwrap(), cube);
        let empty = format_mesh_ply(&TriangleMesh::default());
        assert!(empty.contains("element vertex 0\n") && empty.contains("element face 0\n"));
        assert_eq!(parse_mesh_ply(&empty).unwrap(), TriangleMesh::default());
    }

    #[test]
    fn grid_round_trip() {
        let aabb = Aabb::cube(Vec3::zeros(), 2.0, Dim::Three).unwrap();
        let values: Vec<f64> = (0..64).map(|i| i as f64 * 0.5 - 3.0).collect();
        let grid = GridField::from_values(aabb, [4, 4, 4], values).unwrap();
        let bytes = encode_grid(&grid);
        let header_len = bytes.len() - 64 * 4;
        assert!(std::str::from_utf8(&bytes[..header_len]).unwrap().ends_with("end\n"));
        assert_eq!(decode_grid(&bytes).unwrap(), grid);
        assert!(decode_grid(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn trajectory_round_trip() {
        let pts = vec![
            TrajectoryPoint { t: 0.0, x: 1.0, y: -2.0, theta: 0.5 },
            TrajectoryPoint { t: 0.1, x: 1.25, y: -2.0, theta: -3.0 },
        ];
        assert_eq!(parse_trajectory(&format_trajectory(&pts), Path::new("t")).unwrap(), pts);
        assert!(parse_trajectory("0 1 2", Path::new("t")).is_err());
    }
}
