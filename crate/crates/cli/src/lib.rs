//! Batch front end for the `bcs-core` pipeline.
//!
//! Exit codes: 0 on success, 1 for input and configuration errors, 2 for
//! numerical failures (degenerate bases, non-finite values, divergence).

use std::path::PathBuf;

use bcs_core::basis::{BaseMode, BasisError};
use bcs_core::convolution::ConvError;
use bcs_core::io::IoError;
use bcs_core::learn::LearnError;
use bcs_core::retrieval::RetrievalError;
use bcs_core::transform::TransformError;
use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

pub mod commands;
pub mod config;

pub use config::RunConfig;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("numerical error: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<TransformError> for CliError {
    fn from(e: TransformError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<BasisError> for CliError {
    fn from(e: BasisError) -> Self {
        match e {
            BasisError::Degenerate { .. } | BasisError::NonFinite { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<ConvError> for CliError {
    fn from(e: ConvError) -> Self {
        match e {
            ConvError::NonFinite { .. } => CliError::Numerical(e.to_string()),
            ConvError::Transform(t) => t.into(),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<LearnError> for CliError {
    fn from(e: LearnError) -> Self {
        match e {
            LearnError::NonFinite { .. } | LearnError::Diverged { .. } => CliError::Numerical(e.to_string()),
            LearnError::Transform(t) => t.into(),
            LearnError::Conv(c) => c.into(),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<RetrievalError> for CliError {
    fn from(e: RetrievalError) -> Self {
        match e {
            RetrievalError::ZeroNorm | RetrievalError::NonFinite(_) => CliError::Numerical(e.to_string()),
            RetrievalError::Learn(l) => l.into(),
            _ => CliError::Input(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "bcs", version, about = "Spectral shape analysis with blended roto-translational convolution")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Exponential,
    TruncatedSum,
}

impl From<ModeArg> for BaseMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Exponential => BaseMode::Exponential,
            ModeArg::TruncatedSum => BaseMode::TruncatedSum,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Blended,
    RotationOnly,
}

/// Band limit and mode overrides shared by the spectral commands.
#[derive(Debug, Clone, Args)]
pub struct BasisArgs {
    /// Precomputed basis file; derived from the configuration when absent.
    #[arg(long)]
    pub basis: Option<PathBuf>,
    #[arg(long)]
    pub n_max: Option<usize>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Orthogonalize the radial family and report residuals.
    DeriveBasis {
        #[arg(long)]
        n_max: Option<usize>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// Normalize a point cloud (xyz or OFF) and bin it into a ball grid.
    Bin {
        input: PathBuf,
        /// Bin counts as `NR,NTHETA,NPHI`.
        #[arg(long, value_parser = parse_dims)]
        dims: Option<[usize; 3]>,
    },
    /// Spectral moments of a ball grid.
    Transform {
        grid: PathBuf,
        #[command(flatten)]
        basis: BasisArgs,
    },
    /// Convolve a moments file with a zonal kernel over the query lattice.
    Convolve {
        moments: PathBuf,
        #[command(flatten)]
        basis: BasisArgs,
        /// Kernel spectrum file; the configured Gaussian cap when absent.
        #[arg(long, conflicts_with = "zero_kernel")]
        kernel: Option<PathBuf>,
        #[arg(long)]
        zero_kernel: bool,
        #[arg(long, value_enum, default_value = "blended")]
        variant: VariantArg,
    },
    /// Train the two-layer network on the synthetic dataset.
    Train {
        #[arg(long)]
        iters_polynomial: Option<usize>,
        #[arg(long)]
        iters_kernel: Option<usize>,
        #[arg(long)]
        n_max: Option<usize>,
    },
    /// Build a descriptor gallery and evaluate retrieval.
    Retrieve {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Gallery point clouds; the synthetic test split when empty.
        inputs: Vec<PathBuf>,
        #[arg(long)]
        dim: Option<usize>,
    },
    /// Operation counts and wall time of the convolution over a sweep.
    Bench {
        /// Comma-separated band limits.
        #[arg(long, value_delimiter = ',')]
        n_max: Option<Vec<usize>>,
        /// Comma-separated lattice edge lengths.
        #[arg(long, value_delimiter = ',')]
        lattice: Option<Vec<usize>>,
        /// Comma-separated point-cloud sizes.
        #[arg(long, value_delimiter = ',')]
        points: Option<Vec<usize>>,
    },
}

fn parse_dims(s: &str) -> Result<[usize; 3], String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|_| format!("invalid dimension `{t}`")))
        .collect::<Result<_, _>>()?;
    <[usize; 3]>::try_from(v).map_err(|_| "expected NR,NTHETA,NPHI".to_string())
}

/// Layers defaults, the config file and global flags; precedence
/// flags > file > defaults.
pub fn resolve_config(global: &GlobalArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &global.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &global.out {
        cfg.out = out.clone();
    }
    if let Some(t) = global.threads {
        cfg.threads = Some(t);
    }
    Ok(cfg)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = resolve_config(&cli.global)?;
    cfg.validate()?;
    if let Some(n) = cfg.threads {
        // A pool may already exist when called repeatedly in one process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    commands::dispatch(cli.command, cfg)
}

/// Parses `args` and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_code_mapping() {
        assert_eq!(CliError::from(TransformError::EmptyCloud).exit_code(), 1);
        assert_eq!(CliError::from(BasisError::Degenerate { n: 1, l: 0, norm: 0.0 }).exit_code(), 2);
        assert_eq!(CliError::from(ConvError::BandLimit("x".into())).exit_code(), 1);
        assert_eq!(CliError::from(LearnError::Conv(ConvError::NonFinite { index: 0 })).exit_code(), 2);
        assert_eq!(CliError::from(RetrievalError::ZeroNorm).exit_code(), 2);
    }

    #[test]
    fn flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "seed = 3\nout = \"from-file\"\n").unwrap();
        let cli = Cli::try_parse_from(["bcs", "--config", path.to_str().unwrap(), "--seed", "8", "derive-basis"]).unwrap();
        let cfg = resolve_config(&cli.global).unwrap();
        assert_eq!(cfg.seed, 8);
        assert_eq!(cfg.out, PathBuf::from("from-file"));
    }

    #[test]
    fn dims_parser() {
        assert_eq!(parse_dims("25,36,18").unwrap(), [25, 36, 18]);
        assert!(parse_dims("25,36").is_err());
        assert!(parse_dims("a,b,c").is_err());
    }
}
