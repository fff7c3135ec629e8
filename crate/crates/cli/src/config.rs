//! Run configuration: defaults, TOML file, then command-line overrides.

use std::path::{Path, PathBuf};

use bcs_core::basis::BaseMode;
use bcs_core::learn::{NetworkConfig, ShapeClass, TrainConfig};
use bcs_core::quadrature::GaussLegendre;
use bcs_core::retrieval::{Metric, DEFAULT_DIM};
use bcs_core::transform::GridDims;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasisConfig {
    pub n_max: usize,
    pub mode: BaseMode,
    pub quadrature_nodes: usize,
}

impl Default for BasisConfig {
    fn default() -> Self {
        Self {
            n_max: 5,
            mode: BaseMode::Exponential,
            quadrature_nodes: GaussLegendre::DEFAULT_NODES,
        }
    }
}

/// Query lattice of the `convolve` command: bin-centred `r'` levels times
/// `(α, β)` angles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatticeConfig {
    pub nr: usize,
    pub nalpha: usize,
    pub nbeta: usize,
}

impl Default for LatticeConfig {
    fn default() -> Self {
        Self { nr: 8, nalpha: 8, nbeta: 8 }
    }
}

/// Default zonal kernel `e^{−κ_φ φ²} e^{−κ_r (r − r₀)²}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelConfig {
    pub kappa_phi: f64,
    pub kappa_r: f64,
    pub r0: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            kappa_phi: 4.0,
            kappa_r: 30.0,
            r0: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub classes: Vec<ShapeClass>,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub jitter: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            classes: vec![ShapeClass::SphereShell, ShapeClass::CubeSurface, ShapeClass::Torus],
            train_per_class: 100,
            test_per_class: 30,
            jitter: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub dim: usize,
    pub metrics: Vec<Metric>,
    /// Noise added to gallery clouds to form the jittered-copy queries.
    pub query_jitter: f64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            dim: DEFAULT_DIM,
            metrics: Metric::ALL.to_vec(),
            query_jitter: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub n_max: Vec<usize>,
    /// Cube edge `s` of an `s × s × s` query lattice.
    pub lattice: Vec<usize>,
    pub points: Vec<usize>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            n_max: vec![1, 2, 3, 4, 5, 6],
            lattice: vec![4, 8],
            points: vec![1_000, 10_000, 100_000],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Source of every random draw: datasets, initialisation, batches.
    pub seed: u64,
    pub out: PathBuf,
    pub threads: Option<usize>,
    pub basis: BasisConfig,
    pub grid: GridDims,
    pub lattice: LatticeConfig,
    pub kernel: KernelConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub dataset: DatasetConfig,
    pub retrieval: RetrievalConfig,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            threads: None,
            basis: BasisConfig::default(),
            grid: GridDims::DEFAULT,
            lattice: LatticeConfig::default(),
            kernel: KernelConfig::default(),
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
            dataset: DatasetConfig::default(),
            retrieval: RetrievalConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Input(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Input(format!("config: {m}")));
        let positive = |d: GridDims| d.nr > 0 && d.ntheta > 0 && d.nphi > 0;
        if !positive(self.grid) || !positive(self.network.input_dims) || !positive(self.network.lattice) {
            return bad("grid dimensions must be positive".into());
        }
        if self.lattice.nr == 0 || self.lattice.nalpha == 0 || self.lattice.nbeta == 0 {
            return bad("lattice dimensions must be positive".into());
        }
        if self.basis.quadrature_nodes == 0 {
            return bad("quadrature needs at least one node".into());
        }
        if self.threads == Some(0) {
            return bad("threads must be positive".into());
        }
        if self.retrieval.dim == 0 {
            return bad("descriptor dimension must be positive".into());
        }
        if self.dataset.classes.len() < 2 || self.dataset.train_per_class == 0 {
            return bad("dataset needs two or more classes and a nonempty training split".into());
        }
        if self.network.classes != self.dataset.classes.len() {
            return bad(format!(
                "network.classes = {} but the dataset lists {} classes",
                self.network.classes,
                self.dataset.classes.len()
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        cfg.validate().unwrap();
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg = RunConfig::from_toml("seed = 9\n[basis]\nn_max = 3\n").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.basis.n_max, 3);
        assert_eq!(cfg.basis.mode, BaseMode::Exponential);
        assert_eq!(cfg.grid, GridDims::DEFAULT);
    }

    #[test]
    fn unknown_keys_and_bad_dims_rejected() {
        assert!(RunConfig::from_toml("sede = 1\n").is_err());
        let cfg = RunConfig::from_toml("[grid]\nnr = 0\nntheta = 4\nnphi = 4\n").unwrap();
        assert!(cfg.validate().is_err());
    }
}
