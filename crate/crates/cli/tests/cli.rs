use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bcs_cli::commands::{random_ball_cloud, MomentsDocument};
use bcs_core::convolution::ConvField;
use bcs_core::io::{load_checkpoint, load_gallery, load_json, write_xyz};
use bcs_core::retrieval::Metric;
use bcs_core::transform::BallGrid;

fn bcs(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bcs"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn fixture(dir: &Path, points: usize) -> PathBuf {
    let path = dir.join("cloud.xyz");
    write_xyz(&path, &random_ball_cloud(points, 42)).unwrap();
    path
}

const TINY: &str = r#"
seed = 4

[basis]
n_max = 3

[network]
input_dims = { nr = 8, ntheta = 12, nphi = 6 }
lattice = { nr = 3, ntheta = 4, nphi = 3 }
layer1_kernels = 2
layer2_kernels = 4
groups1 = 2
groups2 = 2

[train]
iters_polynomial = 2
iters_kernel = 20
batch_size = 6

[dataset]
train_per_class = 4
test_per_class = 3

[retrieval]
dim = 16
"#;

#[test]
fn bin_conserves_points_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path(), 10_000);
    let out = bcs(dir.path(), &["bin", "cloud.xyz", "--dims", "25,36,18", "--out", "o"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let grid: BallGrid = load_json(&dir.path().join("o/grid.json")).unwrap();
    assert_eq!(grid.total_occupancy(), 10_000);
    assert_eq!((grid.dims.nr, grid.dims.ntheta, grid.dims.nphi), (25, 36, 18));
    let text = std::fs::read_to_string(dir.path().join("o/grid.json")).unwrap();
    assert_eq!(bcs_core::io::to_json_string(&grid).unwrap(), text);
}

#[test]
fn zero_kernel_gives_zero_field() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path(), 2_000);
    for args in [
        vec!["bin", "cloud.xyz"],
        vec!["transform", "out/grid.json"],
        vec!["convolve", "out/moments.json", "--zero-kernel"],
    ] {
        let out = bcs(dir.path(), &args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let doc: MomentsDocument = load_json(&dir.path().join("out/moments.json")).unwrap();
    assert_eq!(doc.tensor.n_max(), 5);
    let field: ConvField = load_json(&dir.path().join("out/conv_field.json")).unwrap();
    assert_eq!(field.values.len(), 512);
    assert!(field.values.iter().all(|v| *v == 0.0));
}

#[test]
fn derive_basis_reports_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let out = bcs(dir.path(), &["derive-basis", "--n-max", "5", "--out", "a"]);
    assert!(out.status.success());
    let report = std::fs::read_to_string(dir.path().join("a/basis_report.txt")).unwrap();
    let residual: f64 = report
        .lines()
        .find_map(|l| l.strip_prefix("max same-degree residual: "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(residual < 1e-9);
    let audit = std::fs::read_to_string(dir.path().join("a/appendix_audit.csv")).unwrap();
    assert!(audit.lines().nth(1).unwrap().starts_with("0,0,0.0000000000000000e0,0.0000000000000000e0,true"), "{audit}");
    assert!(bcs(dir.path(), &["derive-basis", "--n-max", "5", "--out", "b"]).status.success());
    assert_eq!(
        std::fs::read(dir.path().join("a/basis.json")).unwrap(),
        std::fs::read(dir.path().join("b/basis.json")).unwrap()
    );

    let out = bcs(dir.path(), &["derive-basis", "--n-max", "0", "--out", "z"]);
    assert!(out.status.success());
    let report = std::fs::read_to_string(dir.path().join("z/basis_report.txt")).unwrap();
    assert!(report.contains("elements: 1\n") && report.contains("max same-degree residual: 0.000e0"), "{report}");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.xyz"), "0 0 0\n1 0 0\n0.5 oops 1\n").unwrap();
    let out = bcs(dir.path(), &["bin", "bad.xyz"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.xyz:3:"));

    assert_eq!(bcs(dir.path(), &["bin", "missing.xyz"]).status.code(), Some(1));
    assert_eq!(bcs(dir.path(), &["no-such-command"]).status.code(), Some(1));
    assert_eq!(bcs(dir.path(), &["--help"]).status.code(), Some(0));

    fixture(dir.path(), 500);
    assert!(bcs(dir.path(), &["bin", "cloud.xyz"]).status.success());
    assert!(bcs(dir.path(), &["transform", "out/grid.json", "--n-max", "4"]).status.success());
    let out = bcs(dir.path(), &["convolve", "out/moments.json", "--n-max", "3"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("band limit"));

    // Two quadrature nodes cannot separate the higher elements.
    std::fs::write(dir.path().join("coarse.toml"), "[basis]\nquadrature_nodes = 2\n").unwrap();
    let out = bcs(dir.path(), &["--config", "coarse.toml", "derive-basis"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn train_then_retrieve_self_query() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    let out = bcs(dir.path(), &["--config", "tiny.toml", "--threads", "1", "train"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ck = load_checkpoint(&dir.path().join("out/checkpoint.json")).unwrap();
    assert_eq!(ck.network.layer2_kernels, 4);
    let history = std::fs::read_to_string(dir.path().join("out/history.csv")).unwrap();
    assert_eq!(history.lines().count(), 1 + 22);

    let out = bcs(dir.path(), &["--config", "tiny.toml", "retrieve", "--checkpoint", "out/checkpoint.json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("out/evaluation.csv")).unwrap();
    let self_rows: Vec<&str> = csv.lines().filter(|l| l.starts_with("self,")).collect();
    assert_eq!(self_rows.len(), 4);
    for row in self_rows {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols[3].parse::<f64>().unwrap(), 1.0, "{row}");
    }
    let gallery = load_gallery(&dir.path().join("out/gallery.json")).unwrap();
    assert_eq!(gallery.entries.len(), 9);
    assert!(gallery.entries.iter().all(|d| d.values.len() == 16));
    assert!(csv.contains(&format!("class,{}", Metric::Cosine)));

    // Same seed and inputs reproduce every output.
    let again = bcs(dir.path(), &["--config", "tiny.toml", "--out", "again", "train"]);
    assert!(again.status.success());
    assert_eq!(
        std::fs::read(dir.path().join("out/checkpoint.json")).unwrap(),
        std::fs::read(dir.path().join("again/checkpoint.json")).unwrap()
    );
}

#[test]
fn bench_writes_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let out = bcs(dir.path(), &["bench", "--n-max", "1,3", "--lattice", "2,4", "--points", "100,5000"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("out/bench.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "n_max,lattice,points,multiplies,adds,transcendentals,wall_ns");
    assert_eq!(lines.count(), 8);
}
