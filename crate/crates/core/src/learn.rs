//! The two-layer blended-convolution network, its hand-written reverse pass,
//! the two-phase Adam schedule and the synthetic shape dataset.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{radial_count, BasisSet, MixingCoefficients};
use crate::convolution::{ConvError, ConvPlan, KernelSpectrum, QueryLattice};
use crate::transform::{bin_point_cloud, normalize, BallGrid, GridDims, LatentProjection, MomentPlan, PointCloud, SpectralTensor, TransformError};

/// Training loss above which a run is declared divergent.
pub const DIVERGENCE_LOSS: f64 = 1e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("non-finite gradient in parameter block `{block}`")]
    NonFinite { block: String },
    #[error("training diverged at step {step} (loss {loss})")]
    Diverged { step: usize, loss: f64, history: TrainHistory },
    #[error("empty batch")]
    EmptyBatch,
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Conv(#[from] ConvError),
}

/// Stacked per-kernel fields, indexed `[channel][r'][α][β]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub dims: GridDims,
    pub values: Vec<f64>,
}

impl FeatureMap {
    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.dims.len();
        &self.values[c * n..(c + 1) * n]
    }
}

struct NormCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

fn gn_forward(x: &[f64], channels: usize, groups: usize, eps: f64, scale: &[f64], shift: &[f64]) -> (Vec<f64>, NormCache) {
    let size = x.len() / channels;
    let per = channels / groups;
    let span = per * size;
    let mut xhat = vec![0.0; x.len()];
    let mut inv_std = Vec::with_capacity(groups);
    for g in 0..groups {
        let chunk = &x[g * span..(g + 1) * span];
        let mean = chunk.iter().sum::<f64>() / span as f64;
        let var = chunk.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / span as f64;
        let s = 1.0 / (var + eps).sqrt();
        for (o, v) in xhat[g * span..(g + 1) * span].iter_mut().zip(chunk) {
            *o = (v - mean) * s;
        }
        inv_std.push(s);
    }
    let mut y = xhat.clone();
    for c in 0..channels {
        for v in &mut y[c * size..(c + 1) * size] {
            *v = *v * scale[c] + shift[c];
        }
    }
    (y, NormCache { xhat, inv_std })
}

/// Returns `(∂x, ∂scale, ∂shift)`.
fn gn_backward(gy: &[f64], cache: &NormCache, channels: usize, groups: usize, scale: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let size = gy.len() / channels;
    let per = channels / groups;
    let span = per * size;
    let mut gscale = vec![0.0; channels];
    let mut gshift = vec![0.0; channels];
    let mut gxhat = vec![0.0; gy.len()];
    for c in 0..channels {
        for i in c * size..(c + 1) * size {
            gscale[c] += gy[i] * cache.xhat[i];
            gshift[c] += gy[i];
            gxhat[i] = gy[i] * scale[c];
        }
    }
    let mut gx = vec![0.0; gy.len()];
    for g in 0..groups {
        let r = g * span..(g + 1) * span;
        let sum: f64 = gxhat[r.clone()].iter().sum();
        let dot: f64 = gxhat[r.clone()].iter().zip(&cache.xhat[r.clone()]).map(|(a, b)| a * b).sum();
        let s = cache.inv_std[g] / span as f64;
        for i in r {
            gx[i] = s * (span as f64 * gxhat[i] - sum - cache.xhat[i] * dot);
        }
    }
    (gx, gscale, gshift)
}

/// Group normalization with per-channel affine parameters.
pub fn group_norm(features: &FeatureMap, groups: usize, eps: f64, scale: &[f64], shift: &[f64]) -> Result<FeatureMap, LearnError> {
    let c = features.channels;
    if groups == 0 || c % groups != 0 {
        return Err(LearnError::Config(format!("{c} channels not divisible into {groups} groups")));
    }
    if scale.len() != c || shift.len() != c || features.values.len() != c * features.dims.len() {
        return Err(LearnError::Config("group-norm parameter shape mismatch".into()));
    }
    let (values, _) = gn_forward(&features.values, c, groups, eps, scale, shift);
    Ok(FeatureMap {
        channels: c,
        dims: features.dims,
        values,
    })
}

/// Numerically stable softmax cross-entropy.
pub fn loss(logits: &[f64], label: usize) -> f64 {
    loss_and_grad(logits, label).0
}

/// Loss and its gradient `softmax − onehot`.
pub fn loss_and_grad(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let lse = max + sum.ln();
    let mut grad: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    grad[label] -= 1.0;
    ((lse - logits[label]).max(0.0), grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelVariant {
    #[default]
    RotoTranslational,
    RotationOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub input_dims: GridDims,
    pub lattice: GridDims,
    pub layer1_kernels: usize,
    pub layer2_kernels: usize,
    pub groups1: usize,
    pub groups2: usize,
    pub classes: usize,
    pub gn_eps: f64,
    pub variant: KernelVariant,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            input_dims: GridDims::DEFAULT,
            lattice: GridDims::new(8, 8, 8),
            layer1_kernels: 4,
            layer2_kernels: 16,
            groups1: 4,
            groups2: 8,
            classes: 3,
            gn_eps: 1e-5,
            variant: KernelVariant::RotoTranslational,
        }
    }
}

impl NetworkConfig {
    pub fn features(&self) -> usize {
        self.layer2_kernels * self.lattice.len()
    }

    fn validate(&self) -> Result<(), LearnError> {
        let bad = |m: &str| Err(LearnError::Config(m.into()));
        self.input_dims.validate()?;
        self.lattice.validate()?;
        if self.layer1_kernels == 0 || self.layer2_kernels % self.layer1_kernels != 0 {
            return bad("layer-2 kernel count must be a positive multiple of the layer-1 count");
        }
        if self.groups1 == 0 || self.layer1_kernels % self.groups1 != 0 {
            return bad("layer-1 kernels not divisible into groups");
        }
        if self.groups2 == 0 || self.layer2_kernels % self.groups2 != 0 {
            return bad("layer-2 kernels not divisible into groups");
        }
        if self.classes < 2 {
            return bad("need at least two classes");
        }
        if self.gn_eps <= 0.0 {
            return bad("group-norm eps must be positive");
        }
        Ok(())
    }
}

/// Which parameters an update touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamGroup {
    Projection,
    Network,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub projection_weights: MixingCoefficients,
    pub layer1_kernels: Vec<KernelSpectrum>,
    pub layer2_kernels: Vec<KernelSpectrum>,
    pub gn1_scale: Vec<f64>,
    pub gn1_shift: Vec<f64>,
    pub gn2_scale: Vec<f64>,
    pub gn2_shift: Vec<f64>,
    /// Row-major `classes × features`.
    pub fc_weights: Vec<f64>,
    pub fc_bias: Vec<f64>,
}

impl NetworkParams {
    /// Kernels ~ N(0, 1/√terms), fc ~ N(0, 0.1/√features), W = analytic C.
    pub fn init(network: &Network, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with(network, &mut rng)
    }

    fn init_with(network: &Network, rng: &mut ChaCha8Rng) -> Self {
        let cfg = &network.config;
        let n_max = network.basis.n_max();
        let terms = radial_count(n_max);
        let kstd = 1.0 / (terms as f64).sqrt();
        let kernel = |rng: &mut ChaCha8Rng| {
            let v = (0..terms).map(|_| kstd * rng.sample::<f64, _>(StandardNormal)).collect();
            KernelSpectrum::from_moments(n_max, v).expect("length matches")
        };
        let layer1_kernels = (0..cfg.layer1_kernels).map(|_| kernel(rng)).collect();
        let layer2_kernels = (0..cfg.layer2_kernels).map(|_| kernel(rng)).collect();
        let feats = cfg.features();
        let fc = Normal::new(0.0, 0.1 / (feats as f64).sqrt()).expect("positive stddev");
        let fc_weights = (0..cfg.classes * feats).map(|_| fc.sample(rng)).collect();
        Self {
            projection_weights: network.basis.mixing().clone(),
            layer1_kernels,
            layer2_kernels,
            gn1_scale: vec![1.0; cfg.layer1_kernels],
            gn1_shift: vec![0.0; cfg.layer1_kernels],
            gn2_scale: vec![1.0; cfg.layer2_kernels],
            gn2_shift: vec![0.0; cfg.layer2_kernels],
            fc_weights,
            fc_bias: vec![0.0; cfg.classes],
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_mut(&mut |_, _, s| s.fill(0.0));
        z
    }

    /// Visits every parameter block in storage order.
    pub fn visit(&self, f: &mut dyn FnMut(&'static str, ParamGroup, &[f64])) {
        f("projection_weights", ParamGroup::Projection, self.projection_weights.as_slice());
        for k in &self.layer1_kernels {
            f("layer1_kernels", ParamGroup::Network, &k.moments);
        }
        for k in &self.layer2_kernels {
            f("layer2_kernels", ParamGroup::Network, &k.moments);
        }
        f("gn1_scale", ParamGroup::Network, &self.gn1_scale);
        f("gn1_shift", ParamGroup::Network, &self.gn1_shift);
        f("gn2_scale", ParamGroup::Network, &self.gn2_scale);
        f("gn2_shift", ParamGroup::Network, &self.gn2_shift);
        f("fc_weights", ParamGroup::Network, &self.fc_weights);
        f("fc_bias", ParamGroup::Network, &self.fc_bias);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&'static str, ParamGroup, &mut [f64])) {
        f("projection_weights", ParamGroup::Projection, self.projection_weights.as_mut_slice());
        for k in &mut self.layer1_kernels {
            f("layer1_kernels", ParamGroup::Network, &mut k.moments);
        }
        for k in &mut self.layer2_kernels {
            f("layer2_kernels", ParamGroup::Network, &mut k.moments);
        }
        f("gn1_scale", ParamGroup::Network, &mut self.gn1_scale);
        f("gn1_shift", ParamGroup::Network, &mut self.gn1_shift);
        f("gn2_scale", ParamGroup::Network, &mut self.gn2_scale);
        f("gn2_shift", ParamGroup::Network, &mut self.gn2_shift);
        f("fc_weights", ParamGroup::Network, &mut self.fc_weights);
        f("fc_bias", ParamGroup::Network, &mut self.fc_bias);
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit(&mut |_, _, s| out.extend_from_slice(s));
        out
    }

    pub fn assign_flat(&mut self, flat: &[f64]) {
        let mut pos = 0;
        self.visit_mut(&mut |_, _, s| {
            s.copy_from_slice(&flat[pos..pos + s.len()]);
            pos += s.len();
        });
        // The (0, 0) kernel moment is identically zero by convention.
        for k in self.layer1_kernels.iter_mut().chain(&mut self.layer2_kernels) {
            k.moments[0] = 0.0;
        }
    }

    /// `(name, group, flat range)` for every block, merging repeated names.
    pub fn layout(&self) -> Vec<(&'static str, ParamGroup, std::ops::Range<usize>)> {
        let mut out: Vec<(&'static str, ParamGroup, std::ops::Range<usize>)> = Vec::new();
        let mut pos = 0;
        self.visit(&mut |name, group, s| {
            match out.last_mut() {
                Some(last) if last.0 == name => last.2.end += s.len(),
                _ => out.push((name, group, pos..pos + s.len())),
            }
            pos += s.len();
        });
        out
    }

    fn add_scaled(&mut self, other: &NetworkParams, s: f64) {
        let flat = other.to_flat();
        let mut pos = 0;
        self.visit_mut(&mut |_, _, dst| {
            for (d, v) in dst.iter_mut().zip(&flat[pos..]) {
                *d += s * v;
            }
            pos += dst.len();
        });
    }

    /// Names the first block holding a non-finite value.
    pub fn check_finite(&self) -> Result<(), LearnError> {
        let mut bad = None;
        self.visit(&mut |name, _, s| {
            if bad.is_none() && s.iter().any(|v| !v.is_finite()) {
                bad = Some(name);
            }
        });
        match bad {
            Some(block) => Err(LearnError::NonFinite { block: block.into() }),
            None => Ok(()),
        }
    }
}

/// A grid ready for the network: its angular coefficients are fixed per input.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSample {
    pub angular: Vec<Complex64>,
    pub label: usize,
}

/// Precomputed plans for one basis and network configuration.
#[derive(Debug, Clone)]
pub struct Network {
    config: NetworkConfig,
    basis: BasisSet,
    input_plan: MomentPlan,
    input_latent: LatentProjection,
    conv1: ConvPlan,
    lattice_plan: MomentPlan,
    lattice_latent: LatentProjection,
    conv2: ConvPlan,
}

/// Per-parameter-set quantities shared by every sample of a batch.
struct Shared {
    v1: Vec<Vec<f64>>,
    v2: Vec<Vec<f64>>,
    h1: Vec<Vec<f64>>,
    h2: Vec<Vec<f64>>,
}

struct Trace {
    omega1: SpectralTensor,
    n1: NormCache,
    y1: Vec<f64>,
    a2: Vec<Vec<Complex64>>,
    omega2: Vec<SpectralTensor>,
    n2: NormCache,
    y2: Vec<f64>,
    z2: Vec<f64>,
    logits: Vec<f64>,
}

impl Network {
    pub fn new(basis: &BasisSet, config: NetworkConfig) -> Result<Self, LearnError> {
        config.validate()?;
        let n_max = basis.n_max();
        let input_plan = MomentPlan::new(config.input_dims, n_max)?;
        let input_latent = LatentProjection::new(&input_plan, n_max, basis.mode());
        let l = config.lattice;
        let lattice = QueryLattice::bin_centers(l.nr, l.ntheta, l.nphi);
        let (conv1, conv2) = match config.variant {
            KernelVariant::RotoTranslational => (ConvPlan::blended(basis, &lattice)?, ConvPlan::blended(basis, &lattice)?),
            KernelVariant::RotationOnly => (ConvPlan::rotation_only(basis, &lattice)?, ConvPlan::rotation_only(basis, &lattice)?),
        };
        let lattice_plan = MomentPlan::new(l, n_max)?;
        let lattice_latent = LatentProjection::new(&lattice_plan, n_max, basis.mode());
        Ok(Self {
            config,
            basis: basis.clone(),
            input_plan,
            input_latent,
            conv1,
            lattice_plan,
            lattice_latent,
            conv2,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn basis(&self) -> &BasisSet {
        &self.basis
    }

    pub fn prepare_grid(&self, grid: &BallGrid, label: usize) -> Result<PreparedSample, LearnError> {
        grid.validate()?;
        if grid.dims != self.config.input_dims {
            return Err(LearnError::Config(format!(
                "grid {:?} does not match network input {:?}",
                grid.dims, self.config.input_dims
            )));
        }
        if label >= self.config.classes {
            return Err(LearnError::Config(format!("label {label} outside {} classes", self.config.classes)));
        }
        Ok(PreparedSample {
            angular: self.input_plan.angular(&grid.values),
            label,
        })
    }

    /// Normalizes, bins and prepares a labelled point cloud.
    pub fn prepare_cloud(&self, cloud: &PointCloud) -> Result<PreparedSample, LearnError> {
        let grid = bin_point_cloud(&normalize(cloud)?, self.config.input_dims)?;
        self.prepare_grid(&grid, cloud.label.unwrap_or(0))
    }

    pub fn prepare_all(&self, clouds: &[PointCloud]) -> Result<Vec<PreparedSample>, LearnError> {
        clouds.par_iter().map(|c| self.prepare_cloud(c)).collect()
    }

    fn check_params(&self, p: &NetworkParams) -> Result<(), LearnError> {
        let c = &self.config;
        let n = self.basis.n_max();
        let ok = p.projection_weights.n_max() == n
            && p.layer1_kernels.len() == c.layer1_kernels
            && p.layer2_kernels.len() == c.layer2_kernels
            && p.layer1_kernels.iter().chain(&p.layer2_kernels).all(|k| k.n_max == n && k.moments.len() == radial_count(n))
            && p.gn1_scale.len() == c.layer1_kernels
            && p.gn1_shift.len() == c.layer1_kernels
            && p.gn2_scale.len() == c.layer2_kernels
            && p.gn2_shift.len() == c.layer2_kernels
            && p.fc_weights.len() == c.classes * c.features()
            && p.fc_bias.len() == c.classes;
        if ok {
            Ok(())
        } else {
            Err(LearnError::Config("parameter shapes do not match the network".into()))
        }
    }

    fn shared(&self, p: &NetworkParams) -> Shared {
        Shared {
            v1: self.input_latent.radial(&p.projection_weights),
            v2: self.lattice_latent.radial(&p.projection_weights),
            h1: p.layer1_kernels.iter().map(|k| self.conv1.kernel_transfer(k)).collect(),
            h2: p.layer2_kernels.iter().map(|k| self.conv2.kernel_transfer(k)).collect(),
        }
    }

    fn fan_in(&self) -> usize {
        self.config.layer2_kernels / self.config.layer1_kernels
    }

    fn run(&self, p: &NetworkParams, s: &Shared, sample: &PreparedSample) -> Trace {
        let c = &self.config;
        let cells = c.lattice.len();
        let omega1 = self.input_latent.forward(&s.v1, &sample.angular);
        let mut f1 = Vec::with_capacity(c.layer1_kernels * cells);
        for h in &s.h1 {
            f1.extend(self.conv1.synthesize(&self.conv1.shells(h, &omega1)));
        }
        let (y1, n1) = gn_forward(&f1, c.layer1_kernels, c.groups1, c.gn_eps, &p.gn1_scale, &p.gn1_shift);
        let mut a2 = Vec::with_capacity(c.layer1_kernels);
        let mut omega2 = Vec::with_capacity(c.layer1_kernels);
        for ch in 0..c.layer1_kernels {
            let z: Vec<f64> = y1[ch * cells..(ch + 1) * cells].iter().map(|v| v.max(0.0)).collect();
            let a = self.lattice_plan.angular(&z);
            omega2.push(self.lattice_latent.forward(&s.v2, &a));
            a2.push(a);
        }
        let mut f2 = Vec::with_capacity(c.layer2_kernels * cells);
        for (d, h) in s.h2.iter().enumerate() {
            f2.extend(self.conv2.synthesize(&self.conv2.shells(h, &omega2[d / self.fan_in()])));
        }
        let (y2, n2) = gn_forward(&f2, c.layer2_kernels, c.groups2, c.gn_eps, &p.gn2_scale, &p.gn2_shift);
        let z2: Vec<f64> = y2.iter().map(|v| v.max(0.0)).collect();
        let feats = c.features();
        let logits = (0..c.classes)
            .map(|k| {
                let row = &p.fc_weights[k * feats..(k + 1) * feats];
                p.fc_bias[k] + row.iter().zip(&z2).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect();
        Trace {
            omega1,
            n1,
            y1,
            a2,
            omega2,
            n2,
            y2,
            z2,
            logits,
        }
    }

    pub fn logits(&self, p: &NetworkParams, sample: &PreparedSample) -> Result<Vec<f64>, LearnError> {
        self.check_params(p)?;
        Ok(self.run(p, &self.shared(p), sample).logits)
    }

    /// Logits for a raw grid.
    pub fn forward(&self, p: &NetworkParams, grid: &BallGrid) -> Result<Vec<f64>, LearnError> {
        let sample = self.prepare_grid(grid, 0)?;
        self.logits(p, &sample)
    }

    /// Post-ReLU layer-2 features, flattened `[kernel][r'][α][β]`.
    pub fn features(&self, p: &NetworkParams, sample: &PreparedSample) -> Result<Vec<f64>, LearnError> {
        self.check_params(p)?;
        Ok(self.run(p, &self.shared(p), sample).z2)
    }

    pub fn features_batch(&self, p: &NetworkParams, samples: &[PreparedSample]) -> Result<Vec<Vec<f64>>, LearnError> {
        self.check_params(p)?;
        let s = self.shared(p);
        Ok(samples.par_iter().map(|x| self.run(p, &s, x).z2).collect())
    }

    pub fn predict_batch(&self, p: &NetworkParams, samples: &[PreparedSample]) -> Result<Vec<usize>, LearnError> {
        self.check_params(p)?;
        let s = self.shared(p);
        Ok(samples.par_iter().map(|x| argmax(&self.run(p, &s, x).logits)).collect())
    }

    pub fn accuracy(&self, p: &NetworkParams, samples: &[PreparedSample]) -> Result<f64, LearnError> {
        if samples.is_empty() {
            return Err(LearnError::EmptyBatch);
        }
        let pred = self.predict_batch(p, samples)?;
        let hits = pred.iter().zip(samples).filter(|(a, s)| **a == s.label).count();
        Ok(hits as f64 / samples.len() as f64)
    }

    pub fn batch_loss(&self, p: &NetworkParams, batch: &[PreparedSample]) -> Result<f64, LearnError> {
        if batch.is_empty() {
            return Err(LearnError::EmptyBatch);
        }
        self.check_params(p)?;
        let s = self.shared(p);
        let losses: Vec<f64> = batch.par_iter().map(|x| loss(&self.run(p, &s, x).logits, x.label)).collect();
        Ok(losses.iter().sum::<f64>() / batch.len() as f64)
    }

    /// Returns gradient, per-sample radial gradients for both projections, and loss.
    fn sample_backward(
        &self,
        p: &NetworkParams,
        s: &Shared,
        sample: &PreparedSample,
        want_projection: bool,
    ) -> (NetworkParams, Option<(Vec<Vec<f64>>, Vec<Vec<f64>>)>, f64) {
        let c = &self.config;
        let cells = c.lattice.len();
        let feats = c.features();
        let t = self.run(p, s, sample);
        let (l, gl) = loss_and_grad(&t.logits, sample.label);
        let mut g = p.zeros_like();

        let mut gz2 = vec![0.0; feats];
        for k in 0..c.classes {
            g.fc_bias[k] = gl[k];
            let row = &p.fc_weights[k * feats..(k + 1) * feats];
            let grow = &mut g.fc_weights[k * feats..(k + 1) * feats];
            for i in 0..feats {
                grow[i] = gl[k] * t.z2[i];
                gz2[i] += gl[k] * row[i];
            }
        }
        for (gv, y) in gz2.iter_mut().zip(&t.y2) {
            if *y <= 0.0 {
                *gv = 0.0;
            }
        }
        let (gf2, gs2, gb2) = gn_backward(&gz2, &t.n2, c.layer2_kernels, c.groups2, &p.gn2_scale);
        g.gn2_scale = gs2;
        g.gn2_shift = gb2;

        let mut gomega2: Vec<SpectralTensor> = (0..c.layer1_kernels).map(|_| SpectralTensor::zeros(self.basis.n_max())).collect();
        for d in 0..c.layer2_kernels {
            let ch = d / self.fan_in();
            let (gf, gk) = self.conv2.backward(&t.omega2[ch], &s.h2[d], &gf2[d * cells..(d + 1) * cells]);
            for (a, b) in gomega2[ch].as_mut_slice().iter_mut().zip(gf.as_slice()) {
                *a += b;
            }
            g.layer2_kernels[d].moments = gk;
        }

        let mut gv2 = want_projection.then(|| self.lattice_latent.zero_radial());
        let mut gz1 = vec![0.0; c.layer1_kernels * cells];
        for ch in 0..c.layer1_kernels {
            if let Some(gv) = gv2.as_mut() {
                self.lattice_latent.radial_grad(&t.a2[ch], &gomega2[ch], gv);
            }
            let ga = self.lattice_latent.angular_grad(&s.v2, &gomega2[ch]);
            let gz = self.lattice_plan.angular_adjoint(&ga);
            for (i, v) in gz.into_iter().enumerate() {
                if t.y1[ch * cells + i] > 0.0 {
                    gz1[ch * cells + i] = v;
                }
            }
        }
        let (gf1, gs1, gb1) = gn_backward(&gz1, &t.n1, c.layer1_kernels, c.groups1, &p.gn1_scale);
        g.gn1_scale = gs1;
        g.gn1_shift = gb1;

        let mut gomega1 = SpectralTensor::zeros(self.basis.n_max());
        for ch in 0..c.layer1_kernels {
            let (gf, gk) = self.conv1.backward(&t.omega1, &s.h1[ch], &gf1[ch * cells..(ch + 1) * cells]);
            for (a, b) in gomega1.as_mut_slice().iter_mut().zip(gf.as_slice()) {
                *a += b;
            }
            g.layer1_kernels[ch].moments = gk;
        }
        let radial = gv2.map(|gv2| {
            let mut gv1 = self.input_latent.zero_radial();
            self.input_latent.radial_grad(&sample.angular, &gomega1, &mut gv1);
            (gv1, gv2)
        });
        (g, radial, l)
    }

    /// Mean loss and its gradient over a batch, restricted to the given groups.
    ///
    /// Samples are processed in parallel and reduced in batch order, so the
    /// result does not depend on the thread count.
    pub fn gradient(&self, p: &NetworkParams, batch: &[PreparedSample], groups: &[ParamGroup]) -> Result<(f64, NetworkParams), LearnError> {
        if batch.is_empty() {
            return Err(LearnError::EmptyBatch);
        }
        self.check_params(p)?;
        let s = self.shared(p);
        let want_w = groups.contains(&ParamGroup::Projection);
        let want_net = groups.contains(&ParamGroup::Network);
        let parts: Vec<_> = batch.par_iter().map(|x| self.sample_backward(p, &s, x, want_w)).collect();
        let inv = 1.0 / batch.len() as f64;
        let mut total = p.zeros_like();
        let mut gv1 = self.input_latent.zero_radial();
        let mut gv2 = self.lattice_latent.zero_radial();
        let mut loss_sum = 0.0;
        for (g, radial, l) in &parts {
            loss_sum += l;
            if want_net {
                total.add_scaled(g, inv);
            }
            if let Some((a, b)) = radial {
                for (dst, src) in gv1.iter_mut().zip(a).chain(gv2.iter_mut().zip(b)) {
                    for (d, v) in dst.iter_mut().zip(src) {
                        *d += inv * v;
                    }
                }
            }
        }
        if want_w {
            let w = &p.projection_weights;
            let mut gw = self.input_latent.mixing_grad(w, &s.v1, gv1);
            let g2 = self.lattice_latent.mixing_grad(w, &s.v2, gv2);
            for (a, b) in gw.as_mut_slice().iter_mut().zip(g2.as_slice()) {
                *a += b;
            }
            total.projection_weights = gw;
        }
        total.check_finite()?;
        Ok((loss_sum * inv, total))
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam state over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(cfg: AdamConfig, len: usize) -> Self {
        Self {
            cfg,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    /// Updates only the indices covered by `active`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, active: &[std::ops::Range<usize>]) {
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        for r in active {
            for i in r.clone() {
                self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * grad[i];
                self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * grad[i] * grad[i];
                params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr_polynomial: f64,
    pub lr_kernel: f64,
    pub adam: AdamConfig,
    pub iters_polynomial: usize,
    pub iters_kernel: usize,
    pub seed: u64,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_polynomial: 1e-5,
            lr_kernel: 1e-2,
            adam: AdamConfig::default(),
            iters_polynomial: 500,
            iters_kernel: 2000,
            seed: 0,
            batch_size: 16,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), LearnError> {
        if !(self.lr_polynomial > 0.0 && self.lr_kernel > 0.0) {
            return Err(LearnError::Config("learning rates must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(LearnError::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Polynomial,
    Kernel,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Phase::Polynomial => "polynomial",
            Phase::Kernel => "kernel",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub step: usize,
    pub phase: Phase,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<HistoryRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    pub history: TrainHistory,
}

/// Two-phase schedule: projection weights first, then everything else.
/// Adam state is reset between phases; batches are drawn from seeded shuffles.
pub fn train(network: &Network, data: &[PreparedSample], config: &TrainConfig) -> Result<TrainOutcome, LearnError> {
    config.validate()?;
    let mut labels: Vec<usize> = data.iter().map(|s| s.label).collect();
    labels.sort_unstable();
    labels.dedup();
    if labels.len() < 2 {
        return Err(LearnError::Config("training needs at least two classes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = NetworkParams::init_with(network, &mut rng);
    let mut history = TrainHistory::default();
    let layout = params.layout();
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut step = 0;
    for (phase, iters, lr, group) in [
        (Phase::Polynomial, config.iters_polynomial, config.lr_polynomial, ParamGroup::Projection),
        (Phase::Kernel, config.iters_kernel, config.lr_kernel, ParamGroup::Network),
    ] {
        let active: Vec<_> = layout.iter().filter(|b| b.1 == group).map(|b| b.2.clone()).collect();
        let mut flat = params.to_flat();
        let mut adam = Adam::new(config.adam, flat.len());
        for _ in 0..iters {
            let mut batch = Vec::with_capacity(config.batch_size);
            while batch.len() < config.batch_size {
                if cursor == order.len() {
                    order = (0..data.len()).collect();
                    for i in (1..order.len()).rev() {
                        order.swap(i, rng.random_range(0..=i));
                    }
                    cursor = 0;
                }
                batch.push(data[order[cursor]].clone());
                cursor += 1;
            }
            let (loss, grad) = network.gradient(&params, &batch, &[group])?;
            history.records.push(HistoryRecord { step, phase, loss });
            if !loss.is_finite() || loss > DIVERGENCE_LOSS {
                return Err(LearnError::Diverged { step, loss, history });
            }
            adam.step(&mut flat, &grad.to_flat(), lr, &active);
            params.assign_flat(&flat);
            step += 1;
        }
    }
    Ok(TrainOutcome { params, history })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeClass {
    SphereShell,
    CubeSurface,
    Torus,
    /// Solid shell with radii uniform in `[0.5, 1]`.
    ThickShell,
}

impl ShapeClass {
    pub fn name(&self) -> &'static str {
        match self {
            ShapeClass::SphereShell => "sphere-shell",
            ShapeClass::CubeSurface => "cube-surface",
            ShapeClass::Torus => "torus",
            ShapeClass::ThickShell => "thick-shell",
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> [f64; 3] {
        match self {
            ShapeClass::SphereShell => unit_vector(rng),
            ShapeClass::ThickShell => {
                let u = unit_vector(rng);
                let r = rng.random_range(0.5..1.0);
                [u[0] * r, u[1] * r, u[2] * r]
            }
            ShapeClass::CubeSurface => {
                let face = rng.random_range(0..6);
                let a = rng.random_range(-1.0..1.0);
                let b = rng.random_range(-1.0..1.0);
                let s = if face % 2 == 0 { 1.0 } else { -1.0 };
                match face / 2 {
                    0 => [s, a, b],
                    1 => [a, s, b],
                    _ => [a, b, s],
                }
            }
            ShapeClass::Torus => {
                let (big, small) = (1.0, 0.4);
                loop {
                    let u = rng.random_range(0.0..std::f64::consts::TAU);
                    let v = rng.random_range(0.0..std::f64::consts::TAU);
                    // Area element ∝ (R + a cos v).
                    if rng.random_range(0.0..big + small) <= big + small * v.cos() {
                        let w = big + small * v.cos();
                        break [w * u.cos(), w * u.sin(), small * v.sin()];
                    }
                }
            }
        }
    }
}

impl std::str::FromStr for ShapeClass {
    type Err = LearnError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sphere-shell" => Ok(ShapeClass::SphereShell),
            "cube-surface" => Ok(ShapeClass::CubeSurface),
            "torus" => Ok(ShapeClass::Torus),
            "thick-shell" => Ok(ShapeClass::ThickShell),
            _ => Err(LearnError::Config(format!("unknown shape class `{s}`"))),
        }
    }
}

fn unit_vector(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-12 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

/// Uniform random rotation from a unit quaternion.
pub fn random_rotation<R: Rng>(rng: &mut R) -> [[f64; 3]; 3] {
    let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
    let tau = std::f64::consts::TAU;
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let (w, x, y, z) = (a * (tau * u2).sin(), a * (tau * u2).cos(), b * (tau * u3).sin(), b * (tau * u3).cos());
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - z * w), 2.0 * (x * z + y * w)],
        [2.0 * (x * y + z * w), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - x * w)],
        [2.0 * (x * z - y * w), 2.0 * (y * z + x * w), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// Points per synthetic cloud.
pub const SYNTHETIC_POINTS: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub class_names: Vec<String>,
    pub clouds: Vec<PointCloud>,
}

/// Samples `per_class` jittered, randomly posed clouds of every class; labels
/// follow the order of `classes`.
pub fn make_synthetic_dataset(classes: &[ShapeClass], per_class: usize, jitter: f64, seed: u64) -> Result<Dataset, LearnError> {
    if per_class == 0 || classes.is_empty() {
        return Err(LearnError::Config("need at least one class and one sample per class".into()));
    }
    let noise = Normal::new(0.0, jitter.max(0.0)).map_err(|e| LearnError::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut clouds = Vec::with_capacity(classes.len() * per_class);
    for _ in 0..per_class {
        for (label, class) in classes.iter().enumerate() {
            let rot = random_rotation(&mut rng);
            let mut points = Vec::with_capacity(SYNTHETIC_POINTS);
            for _ in 0..SYNTHETIC_POINTS {
                let mut p = class.sample(&mut rng);
                if jitter > 0.0 {
                    for v in &mut p {
                        *v += noise.sample(&mut rng);
                    }
                }
                points.push(p);
            }
            clouds.push(PointCloud::from_points(points).transformed(&rot).with_label(label));
        }
    }
    Ok(Dataset {
        class_names: classes.iter().map(|c| c.name().to_string()).collect(),
        clouds,
    })
}
