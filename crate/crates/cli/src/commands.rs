//! Subcommand implementations. Each one reads its inputs, calls into
//! `bcs-core` and writes its outputs under the configured directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use bcs_core::basis::appendix::audit;
use bcs_core::basis::{orthogonalize_with, BaseMode, BasisSet};
use bcs_core::convolution::{blended_conv, gaussian_cap, instrumented_conv, kernel_spectrum, rotation_only_conv, KernelSpectrum, QueryLattice};
use bcs_core::io::{
    load_basis, load_checkpoint, load_json, read_point_cloud, save_basis, save_checkpoint, save_gallery, save_json, write_bench_csv,
    write_evaluation_csv, write_history_csv, BenchRow, Checkpoint, Gallery,
};
use bcs_core::learn::{make_synthetic_dataset, train, Network, PreparedSample};
use bcs_core::quadrature::GaussLegendre;
use bcs_core::retrieval::{build_gallery, describe_batch, evaluate, identity_labelled, Evaluation};
use bcs_core::transform::{bin_point_cloud, forward_moments, normalize, BallGrid, GridDims, PointCloud, SpectralTensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{BasisArgs, CliError, Command, RunConfig, VariantArg};

/// Offsets applied to the run seed for the independent random streams.
pub const TEST_SPLIT_SEED_OFFSET: u64 = 1;
pub const QUERY_JITTER_SEED_OFFSET: u64 = 2;
pub const BENCH_SEED_OFFSET: u64 = 3;

/// Moments of one grid together with the basis that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentsDocument {
    pub basis_id: String,
    pub dims: GridDims,
    pub tensor: SpectralTensor,
}

pub fn dispatch(command: Command, mut cfg: RunConfig) -> Result<(), CliError> {
    match command {
        Command::DeriveBasis { n_max, mode } => {
            if let Some(n) = n_max {
                cfg.basis.n_max = n;
            }
            if let Some(m) = mode {
                cfg.basis.mode = m.into();
            }
            derive_basis(&cfg).map(|_| ())
        }
        Command::Bin { input, dims } => {
            if let Some([nr, nt, np]) = dims {
                cfg.grid = GridDims::new(nr, nt, np);
            }
            cfg.validate()?;
            bin(&cfg, &input).map(|_| ())
        }
        Command::Transform { grid, basis } => transform(&cfg, &grid, &basis).map(|_| ()),
        Command::Convolve {
            moments,
            basis,
            kernel,
            zero_kernel,
            variant,
        } => {
            let kernel = match (kernel, zero_kernel) {
                (Some(p), _) => KernelSource::File(p),
                (None, true) => KernelSource::Zero,
                (None, false) => KernelSource::GaussianCap,
            };
            convolve(&cfg, &moments, &basis, kernel, variant).map(|_| ())
        }
        Command::Train {
            iters_polynomial,
            iters_kernel,
            n_max,
        } => {
            if let Some(i) = iters_polynomial {
                cfg.train.iters_polynomial = i;
            }
            if let Some(i) = iters_kernel {
                cfg.train.iters_kernel = i;
            }
            if let Some(n) = n_max {
                cfg.basis.n_max = n;
            }
            train_cmd(&cfg).map(|_| ())
        }
        Command::Retrieve { checkpoint, inputs, dim } => {
            if let Some(d) = dim {
                cfg.retrieval.dim = d;
            }
            cfg.validate()?;
            retrieve(&cfg, &checkpoint, &inputs).map(|_| ())
        }
        Command::Bench { n_max, lattice, points } => {
            if let Some(v) = n_max {
                cfg.bench.n_max = v;
            }
            if let Some(v) = lattice {
                cfg.bench.lattice = v;
            }
            if let Some(v) = points {
                cfg.bench.points = v;
            }
            bench(&cfg).map(|_| ())
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn derive(cfg: &RunConfig, n_max: usize, mode: BaseMode) -> Result<BasisSet, CliError> {
    let quad = GaussLegendre::new(cfg.basis.quadrature_nodes).map_err(|e| CliError::Input(e.to_string()))?;
    Ok(orthogonalize_with(n_max, mode, &quad)?)
}

/// The basis named by `--basis`, or one derived from the configuration with
/// any `--n-max` / `--mode` overrides.
pub fn resolve_basis(cfg: &RunConfig, args: &BasisArgs) -> Result<BasisSet, CliError> {
    let n_max = args.n_max.unwrap_or(cfg.basis.n_max);
    let mode = args.mode.map(BaseMode::from).unwrap_or(cfg.basis.mode);
    match &args.basis {
        Some(path) => {
            let basis = load_basis(path)?;
            if args.n_max.is_some_and(|n| n != basis.n_max()) {
                return Err(CliError::Input(format!(
                    "band limit mismatch: --n-max {n_max} but {} has n_max {}",
                    path.display(),
                    basis.n_max()
                )));
            }
            Ok(basis)
        }
        None => derive(cfg, n_max, mode),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasisSummary {
    pub basis_path: PathBuf,
    pub same_degree_residual: f64,
    pub cross_degree_residual: f64,
    pub audited_entries: usize,
    pub exact_entries: usize,
}

pub fn derive_basis(cfg: &RunConfig) -> Result<BasisSummary, CliError> {
    let start = Instant::now();
    let basis = derive(cfg, cfg.basis.n_max, cfg.basis.mode)?;
    let elapsed = start.elapsed();
    let report = basis.orthogonality_residuals()?;
    let basis_path = cfg.out.join("basis.json");
    save_basis(&basis_path, &basis)?;

    // The published table is in monomials, so it is compared with the
    // truncated-sum derivation at the same band limit.
    let reference = if cfg.basis.mode == BaseMode::TruncatedSum {
        basis.clone()
    } else {
        derive(cfg, cfg.basis.n_max, BaseMode::TruncatedSum)?
    };
    let diffs = audit(&reference).unwrap_or_default();
    let mut csv = String::from("n,l,max_coeff_diff,max_value_diff,exact\n");
    for d in &diffs {
        let _ = writeln!(csv, "{},{},{:.16e},{:.16e},{}", d.n, d.l, d.max_coeff_diff, d.max_value_diff, d.exact());
    }
    write_text(&cfg.out.join("appendix_audit.csv"), &csv)?;

    let exact_entries = diffs.iter().filter(|d| d.exact()).count();
    let mut text = String::new();
    let _ = writeln!(text, "basis: {}", basis.id());
    let _ = writeln!(text, "elements: {}", basis.radials().len());
    let _ = writeln!(text, "max same-degree residual: {:.3e}", report.same_degree);
    let _ = writeln!(text, "max cross-degree inner product: {:.3e}", report.cross_degree);
    let _ = writeln!(text, "table entries audited: {} ({} exact)", diffs.len(), exact_entries);
    for d in &diffs {
        let _ = writeln!(text, "  Q_{}{}: max coeff diff {:.3e}, max value diff {:.3e}", d.n, d.l, d.max_coeff_diff, d.max_value_diff);
    }
    write_text(&cfg.out.join("basis_report.txt"), &text)?;
    println!(
        "derived {} in {:.1} ms; same-degree residual {:.3e}",
        basis.id(),
        elapsed.as_secs_f64() * 1e3,
        report.same_degree
    );
    Ok(BasisSummary {
        basis_path,
        same_degree_residual: report.same_degree,
        cross_degree_residual: report.cross_degree,
        audited_entries: diffs.len(),
        exact_entries,
    })
}

pub fn bin(cfg: &RunConfig, input: &Path) -> Result<BallGrid, CliError> {
    let cloud = read_point_cloud(input)?;
    let grid = bin_point_cloud(&normalize(&cloud)?, cfg.grid)?;
    save_json(&cfg.out.join("grid.json"), &grid)?;
    println!("binned {} points into {:?}", grid.total_occupancy(), grid.dims);
    Ok(grid)
}

pub fn transform(cfg: &RunConfig, grid_path: &Path, basis_args: &BasisArgs) -> Result<MomentsDocument, CliError> {
    let grid: BallGrid = load_json(grid_path)?;
    grid.validate()?;
    let basis = resolve_basis(cfg, basis_args)?;
    let tensor = forward_moments(&grid, &basis, None)?;
    let doc = MomentsDocument {
        basis_id: basis.id(),
        dims: grid.dims,
        tensor,
    };
    save_json(&cfg.out.join("moments.json"), &doc)?;
    println!("wrote {} moments against {}", SpectralTensor::count(basis.n_max()), basis.id());
    Ok(doc)
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelSource {
    File(PathBuf),
    Zero,
    GaussianCap,
}

pub fn convolve(
    cfg: &RunConfig,
    moments_path: &Path,
    basis_args: &BasisArgs,
    kernel: KernelSource,
    variant: VariantArg,
) -> Result<bcs_core::convolution::ConvField, CliError> {
    let doc: MomentsDocument = load_json(moments_path)?;
    let mut args = basis_args.clone();
    if args.basis.is_none() && args.n_max.is_none() {
        args.n_max = Some(doc.tensor.n_max());
    }
    let basis = resolve_basis(cfg, &args)?;
    let spec = match kernel {
        KernelSource::File(p) => load_json::<KernelSpectrum>(&p)?,
        KernelSource::Zero => KernelSpectrum::zeros(basis.n_max()),
        KernelSource::GaussianCap => {
            let k = cfg.kernel;
            kernel_spectrum(&gaussian_cap(cfg.grid, k.kappa_phi, k.kappa_r, k.r0), &basis)?
        }
    };
    let lattice = QueryLattice::bin_centers(cfg.lattice.nr, cfg.lattice.nalpha, cfg.lattice.nbeta);
    let field = match variant {
        VariantArg::Blended => blended_conv(&doc.tensor, &spec, &basis, &lattice)?,
        VariantArg::RotationOnly => rotation_only_conv(&doc.tensor, &spec, &basis, &lattice)?,
    };
    save_json(&cfg.out.join("conv_field.json"), &field)?;
    println!("convolved over {} queries ({})", lattice.len(), field.provenance.variant);
    Ok(field)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub final_loss: f64,
    pub seconds: f64,
}

/// The synthetic train and test splits of a run.
pub fn synthetic_splits(cfg: &RunConfig) -> Result<(bcs_core::learn::Dataset, bcs_core::learn::Dataset), CliError> {
    let d = &cfg.dataset;
    let train_set = make_synthetic_dataset(&d.classes, d.train_per_class, d.jitter, cfg.seed)?;
    let test_set = make_synthetic_dataset(&d.classes, d.test_per_class.max(1), d.jitter, cfg.seed.wrapping_add(TEST_SPLIT_SEED_OFFSET))?;
    Ok((train_set, test_set))
}

pub fn train_cmd(cfg: &RunConfig) -> Result<TrainSummary, CliError> {
    cfg.validate()?;
    let start = Instant::now();
    let basis = derive(cfg, cfg.basis.n_max, cfg.basis.mode)?;
    let network = Network::new(&basis, cfg.network.clone())?;
    let (train_set, test_set) = synthetic_splits(cfg)?;
    let train_data = network.prepare_all(&train_set.clouds)?;
    let test_data = network.prepare_all(&test_set.clouds)?;
    let mut tc = cfg.train.clone();
    tc.seed = cfg.seed;
    let outcome = train(&network, &train_data, &tc)?;
    let train_accuracy = network.accuracy(&outcome.params, &train_data)?;
    let test_accuracy = if cfg.dataset.test_per_class > 0 {
        network.accuracy(&outcome.params, &test_data)?
    } else {
        f64::NAN
    };
    let seconds = start.elapsed().as_secs_f64();
    let final_loss = outcome.history.records.last().map_or(f64::NAN, |r| r.loss);

    let checkpoint = cfg.out.join("checkpoint.json");
    save_checkpoint(&checkpoint, &Checkpoint::new(&basis, cfg.network.clone(), train_set.class_names.clone(), outcome.params))?;
    write_history_csv(&cfg.out.join("history.csv"), &outcome.history)?;
    let mut text = String::new();
    let _ = writeln!(text, "basis: {}", basis.id());
    let _ = writeln!(text, "classes: {}", train_set.class_names.join(", "));
    let _ = writeln!(text, "train samples: {}", train_data.len());
    let _ = writeln!(text, "test samples: {}", test_data.len());
    let _ = writeln!(text, "steps: {}", outcome.history.records.len());
    let _ = writeln!(text, "final batch loss: {final_loss:.6}");
    let _ = writeln!(text, "train accuracy: {train_accuracy:.4}");
    let _ = writeln!(text, "test accuracy: {test_accuracy:.4}");
    write_text(&cfg.out.join("train_report.txt"), &text)?;
    println!("trained in {seconds:.1} s; train accuracy {train_accuracy:.3}, test accuracy {test_accuracy:.3}");
    Ok(TrainSummary {
        checkpoint,
        train_accuracy,
        test_accuracy,
        final_loss,
        seconds,
    })
}

fn jittered(cloud: &PointCloud, sigma: f64, rng: &mut ChaCha8Rng) -> Result<PointCloud, CliError> {
    let noise = Normal::new(0.0, sigma).map_err(|e| CliError::Input(format!("query jitter: {e}")))?;
    let mut out = cloud.clone();
    for p in &mut out.points {
        for v in p.iter_mut() {
            *v += noise.sample(rng);
        }
    }
    Ok(out)
}

/// The jittered-copy queries of a gallery, drawn from the run seed.
pub fn jittered_copies(cfg: &RunConfig, clouds: &[PointCloud]) -> Result<Vec<PointCloud>, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(QUERY_JITTER_SEED_OFFSET));
    clouds.iter().map(|c| jittered(c, cfg.retrieval.query_jitter, &mut rng)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalSummary {
    pub rows: Vec<(String, Evaluation)>,
}

impl RetrievalSummary {
    pub fn get(&self, protocol: &str, metric: bcs_core::retrieval::Metric) -> Option<&Evaluation> {
        self.rows.iter().find(|(p, e)| p == protocol && e.metric == metric).map(|(_, e)| e)
    }
}

pub fn retrieve(cfg: &RunConfig, checkpoint: &Path, inputs: &[PathBuf]) -> Result<RetrievalSummary, CliError> {
    let ck = load_checkpoint(checkpoint)?;
    let basis = BasisSet::from_document(ck.basis.clone())?;
    let network = Network::new(&basis, ck.network.clone())?;
    let (clouds, ids, labelled): (Vec<PointCloud>, Vec<String>, bool) = if inputs.is_empty() {
        let (_, test_set) = synthetic_splits(cfg)?;
        let ids = (0..test_set.clouds.len()).map(|i| format!("test-{i}")).collect();
        (test_set.clouds, ids, true)
    } else {
        let mut clouds = Vec::with_capacity(inputs.len());
        for p in inputs {
            clouds.push(read_point_cloud(p)?);
        }
        let ids = inputs.iter().map(|p| p.display().to_string()).collect();
        (clouds, ids, false)
    };
    let samples: Vec<PreparedSample> = network.prepare_all(&clouds)?;
    let (reducer, gallery) = build_gallery(&network, &ck.params, &samples, &ids, cfg.retrieval.dim)?;

    let noisy = jittered_copies(cfg, &clouds)?;
    let noisy_ids: Vec<String> = ids.iter().map(|i| format!("{i}~jitter")).collect();
    let queries = describe_batch(&network, &ck.params, &network.prepare_all(&noisy)?, &noisy_ids, &reducer)?;

    let by_identity = identity_labelled(&gallery);
    let queries_by_identity = identity_labelled(&queries);
    let mut rows = Vec::new();
    for &m in &cfg.retrieval.metrics {
        rows.push(("self".to_string(), evaluate(&by_identity, &by_identity, m, false)?));
        rows.push(("jittered-copy".to_string(), evaluate(&queries_by_identity, &by_identity, m, false)?));
        if labelled {
            rows.push(("class".to_string(), evaluate(&gallery, &gallery, m, true)?));
        }
    }
    save_gallery(&cfg.out.join("gallery.json"), &Gallery::new(reducer, gallery))?;
    write_evaluation_csv(&cfg.out.join("evaluation.csv"), &rows)?;
    let mut text = String::new();
    let _ = writeln!(text, "gallery size: {}", ids.len());
    let _ = writeln!(text, "descriptor dimension: {}", cfg.retrieval.dim);
    for (p, e) in &rows {
        let _ = writeln!(text, "{p:>13} {:>13}: nn accuracy {:.4}, mAP {:.4}", e.metric.name(), e.nn_accuracy, e.map);
    }
    write_text(&cfg.out.join("retrieve_report.txt"), &text)?;
    print!("{text}");
    Ok(RetrievalSummary { rows })
}

/// Uniform points in the ball of radius 0.9.
pub fn random_ball_cloud(points: usize, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(points);
    while out.len() < points {
        let p = [0, 1, 2].map(|_| rng.random_range(-0.9..0.9));
        if p.iter().map(|v| v * v).sum::<f64>() <= 0.81 {
            out.push(p);
        }
    }
    PointCloud::from_points(out)
}

pub fn bench(cfg: &RunConfig) -> Result<Vec<BenchRow>, CliError> {
    let k = cfg.kernel;
    let grids: Vec<(usize, BallGrid)> = cfg
        .bench
        .points
        .iter()
        .map(|&p| {
            let cloud = random_ball_cloud(p.max(2), cfg.seed.wrapping_add(BENCH_SEED_OFFSET));
            Ok((p, bin_point_cloud(&normalize(&cloud)?, cfg.grid)?))
        })
        .collect::<Result<_, CliError>>()?;
    let mut rows = Vec::new();
    for &n_max in &cfg.bench.n_max {
        let basis = derive(cfg, n_max, BaseMode::Exponential)?;
        let spec = kernel_spectrum(&gaussian_cap(cfg.grid, k.kappa_phi, k.kappa_r, k.r0), &basis)?;
        for &s in &cfg.bench.lattice {
            let lattice = QueryLattice::bin_centers(s, s, s);
            for (points, grid) in &grids {
                let tensor = forward_moments(grid, &basis, None)?;
                let (_, counts) = instrumented_conv(&tensor, &spec, &basis, &lattice)?;
                let start = Instant::now();
                blended_conv(&tensor, &spec, &basis, &lattice)?;
                let wall_ns = start.elapsed().as_nanos();
                rows.push(BenchRow {
                    n_max,
                    lattice: lattice.len(),
                    points: *points,
                    counts,
                    wall_ns,
                });
            }
        }
    }
    write_bench_csv(&cfg.out.join("bench.csv"), &rows)?;
    println!("wrote {} bench rows", rows.len());
    Ok(rows)
}
