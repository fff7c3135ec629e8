//! Structured-text persistence and point-cloud readers.
//!
//! Every JSON document is written with floats in `{:.16e}` form so that values
//! survive a save/load cycle bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{BasisDocument, BasisSet};
use crate::convolution::OpCounts;
use crate::learn::{NetworkConfig, NetworkParams, TrainHistory};
use crate::retrieval::{Descriptor, Evaluation, PcaReducer};
use crate::transform::PointCloud;

pub const CHECKPOINT_FORMAT: &str = "bcs-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const GALLERY_FORMAT: &str = "bcs-gallery";
pub const GALLERY_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{path}: {message}")]
    Json { path: PathBuf, message: String },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Compact JSON formatter that prints every float with 17 significant digits.
#[derive(Debug, Clone, Copy, Default)]
pub struct PreciseFormatter;

impl serde_json::ser::Formatter for PreciseFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        write!(writer, "{:.16e}", f64::from(value))
    }
}

pub fn to_json_string<T: Serialize>(value: &T) -> Result<String, serde_json::Error> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, PreciseFormatter);
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let text = to_json_string(value).map_err(|e| IoError::Json {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| IoError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

pub fn save_basis(path: &Path, basis: &BasisSet) -> Result<(), IoError> {
    save_json(path, &basis.to_document())
}

pub fn load_basis(path: &Path) -> Result<BasisSet, IoError> {
    let doc: BasisDocument = load_json(path)?;
    BasisSet::from_document(doc).map_err(|e| IoError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Trained network state together with what is needed to rebuild its plans.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub basis: BasisDocument,
    pub network: NetworkConfig,
    pub class_names: Vec<String>,
    pub params: NetworkParams,
}

impl Checkpoint {
    pub fn new(basis: &BasisSet, network: NetworkConfig, class_names: Vec<String>, params: NetworkParams) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            basis: basis.to_document(),
            network,
            class_names,
            params,
        }
    }
}

fn check_header(path: &Path, format: &str, version: u32, want_format: &str, want_version: u32) -> Result<(), IoError> {
    if format != want_format || version != want_version {
        return Err(IoError::Format {
            path: path.to_path_buf(),
            message: format!("expected {want_format} v{want_version}, found {format} v{version}"),
        });
    }
    Ok(())
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<(), IoError> {
    save_json(path, checkpoint)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, IoError> {
    let ck: Checkpoint = load_json(path)?;
    check_header(path, &ck.format, ck.version, CHECKPOINT_FORMAT, CHECKPOINT_VERSION)?;
    Ok(ck)
}

/// Descriptors of a gallery plus the reducer fitted on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gallery {
    pub format: String,
    pub version: u32,
    pub reducer: PcaReducer,
    pub entries: Vec<Descriptor>,
}

impl Gallery {
    pub fn new(reducer: PcaReducer, entries: Vec<Descriptor>) -> Self {
        Self {
            format: GALLERY_FORMAT.into(),
            version: GALLERY_VERSION,
            reducer,
            entries,
        }
    }
}

pub fn save_gallery(path: &Path, gallery: &Gallery) -> Result<(), IoError> {
    save_json(path, gallery)
}

pub fn load_gallery(path: &Path) -> Result<Gallery, IoError> {
    let g: Gallery = load_json(path)?;
    check_header(path, &g.format, g.version, GALLERY_FORMAT, GALLERY_VERSION)?;
    Ok(g)
}

fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

pub fn history_csv(history: &TrainHistory) -> String {
    let mut s = String::from("step,phase,loss\n");
    for r in &history.records {
        let _ = writeln!(s, "{},{},{:.16e}", r.step, r.phase, r.loss);
    }
    s
}

pub fn write_history_csv(path: &Path, history: &TrainHistory) -> Result<(), IoError> {
    write_text(path, &history_csv(history))
}

/// Rows are `(protocol, evaluation)`; the protocol names how queries and
/// relevance were defined.
pub fn evaluation_csv(rows: &[(String, Evaluation)]) -> String {
    let mut s = String::from("protocol,metric,nn_accuracy,map,scored_queries\n");
    for (protocol, e) in rows {
        let _ = writeln!(s, "{protocol},{},{:.16e},{:.16e},{}", e.metric, e.nn_accuracy, e.map, e.scored_queries);
    }
    s
}

pub fn write_evaluation_csv(path: &Path, rows: &[(String, Evaluation)]) -> Result<(), IoError> {
    write_text(path, &evaluation_csv(rows))
}

/// One measured convolution configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n_max: usize,
    /// Number of query points.
    pub lattice: usize,
    /// Points in the input cloud.
    pub points: usize,
    pub counts: OpCounts,
    pub wall_ns: u128,
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from("n_max,lattice,points,multiplies,adds,transcendentals,wall_ns\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.n_max, r.lattice, r.points, r.counts.multiplies, r.counts.adds, r.counts.transcendentals, r.wall_ns
        );
    }
    s
}

pub fn write_bench_csv(path: &Path, rows: &[BenchRow]) -> Result<(), IoError> {
    write_text(path, &bench_csv(rows))
}

fn parse_floats(path: &Path, line_no: usize, line: &str) -> Result<Vec<f64>, IoError> {
    line.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>().map_err(|_| IoError::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: format!("invalid number `{t}`"),
            })
        })
        .collect()
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty())
}

/// Parses `x y z [texture]` rows; whitespace or commas separate fields and
/// `#` starts a comment.
pub fn parse_xyz(path: &Path, text: &str) -> Result<PointCloud, IoError> {
    let mut points = Vec::new();
    let mut textures = Vec::new();
    for (line_no, line) in content_lines(text) {
        let v = parse_floats(path, line_no, line)?;
        if !(v.len() == 3 || v.len() == 4) {
            return Err(IoError::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: format!("expected 3 or 4 fields, found {}", v.len()),
            });
        }
        points.push([v[0], v[1], v[2]]);
        textures.push(v.get(3).copied().unwrap_or(1.0));
    }
    Ok(PointCloud {
        points,
        textures,
        label: None,
    })
}

/// Reads the vertices of an OFF mesh; faces are ignored.
pub fn parse_off(path: &Path, text: &str) -> Result<PointCloud, IoError> {
    let perr = |line: usize, message: String| IoError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = content_lines(text);
    let (line_no, header) = lines.next().ok_or_else(|| perr(1, "empty file".into()))?;
    let rest = header
        .strip_prefix("OFF")
        .ok_or_else(|| perr(line_no, "missing OFF header".into()))?
        .trim();
    let (count_line, counts) = if rest.is_empty() {
        let (n, l) = lines.next().ok_or_else(|| perr(line_no, "missing vertex count".into()))?;
        (n, l)
    } else {
        (line_no, rest)
    };
    let nv = counts
        .split_whitespace()
        .next()
        .and_then(|t| t.parse::<usize>().ok())
        .ok_or_else(|| perr(count_line, format!("invalid counts `{counts}`")))?;
    let mut points = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (n, l) = lines.next().ok_or_else(|| perr(count_line, format!("expected {nv} vertices, found {}", points.len())))?;
        let v = parse_floats(path, n, l)?;
        if v.len() < 3 {
            return Err(perr(n, format!("vertex needs 3 coordinates, found {}", v.len())));
        }
        points.push([v[0], v[1], v[2]]);
    }
    Ok(PointCloud::from_points(points))
}

/// Dispatches on the extension: `.off` meshes, everything else as xyz rows.
pub fn read_point_cloud(path: &Path) -> Result<PointCloud, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let is_off = path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("off"));
    if is_off {
        parse_off(path, &text)
    } else {
        parse_xyz(path, &text)
    }
}

pub fn write_xyz(path: &Path, cloud: &PointCloud) -> Result<(), IoError> {
    let mut s = String::new();
    for (p, t) in cloud.points.iter().zip(&cloud.textures) {
        let _ = writeln!(s, "{:.16e} {:.16e} {:.16e} {:.16e}", p[0], p[1], p[2], t);
    }
    write_text(path, &s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{orthogonalize, BaseMode};

    #[test]
    fn floats_survive_round_trip() {
        let values = vec![0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE, 0.0];
        let text = to_json_string(&values).unwrap();
        let back: Vec<f64> = serde_json::from_str(&text).unwrap();
        assert_eq!(values, back);
        assert!(text.contains("3.3333333333333331e-1"));
    }

    #[test]
    fn basis_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.json");
        let basis = orthogonalize(4, BaseMode::Exponential).unwrap();
        save_basis(&path, &basis).unwrap();
        let back = load_basis(&path).unwrap();
        assert_eq!(back.to_document(), basis.to_document());
    }

    #[test]
    fn xyz_errors_carry_line() {
        let p = Path::new("c.xyz");
        let cloud = parse_xyz(p, "# header\n0 0 0\n1,2,3,0.5\n").unwrap();
        assert_eq!(cloud.points.len(), 2);
        assert_eq!(cloud.textures, vec![1.0, 0.5]);
        let err = parse_xyz(p, "0 0 0\n\n1 x 2\n").unwrap_err().to_string();
        assert_eq!(err, "c.xyz:3: invalid number `x`");
        assert!(parse_xyz(p, "1 2\n").unwrap_err().to_string().starts_with("c.xyz:1:"));
    }

    #[test]
    fn off_vertices() {
        let p = Path::new("m.off");
        let text = "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n";
        assert_eq!(parse_off(p, text).unwrap().points, vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
        let inline = "OFF 1 0 0\n0.5 0.5 0.5\n";
        assert_eq!(parse_off(p, inline).unwrap().points.len(), 1);
        assert!(parse_off(p, "PLY\n").unwrap_err().to_string().starts_with("m.off:1:"));
        assert!(parse_off(p, "OFF\n2 0 0\n0 0 0\n").is_err());
    }

    #[test]
    fn checkpoint_header_checked() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.json");
        let mut g = Gallery::new(PcaReducer::unfitted(4), Vec::new());
        save_gallery(&path, &g).unwrap();
        assert_eq!(load_gallery(&path).unwrap(), g);
        g.version = 99;
        save_json(&path, &g).unwrap();
        assert!(matches!(load_gallery(&path), Err(IoError::Format { .. })));
    }
}
