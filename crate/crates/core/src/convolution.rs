//! Blended roto-translational convolution of a ball function with a zonal kernel.
//!
//! For a query `(r', α, β)` the closed form is
//! `(4π/3) Σ gram(n, n', l) (e^{(n−l) r'} − e^{(n'−l) r'}) Ω_nlm(f) Ω_n'l0(g) Y_lm(α, β)`.
//! [`blended_conv`] evaluates it query by query through a generic scalar so the
//! same code path can be instrumented by [`instrumented_conv`]; [`ConvPlan`]
//! factorizes the sum over the lattice for training.

use std::cell::Cell;
use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{radial_count, tri, BaseMode, BasisSet};
use crate::harmonics::{lm_index, pole_rotation, sph_harm_table};
use crate::transform::{forward_moments, BallGrid, GridDims, MomentPlan, SpectralTensor, TransformError};

const PREFACTOR: f64 = 4.0 * PI / 3.0;

/// Largest θ-variation tolerated in a zonal kernel grid.
pub const ZONAL_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConvError {
    #[error("the blended convolution needs an exponential-mode basis")]
    UnsupportedMode,
    #[error("band limit mismatch: {0}")]
    BandLimit(String),
    #[error("kernel is not zonal: max θ-variation {variation:e}")]
    NotZonal { variation: f64 },
    #[error("invalid query: {0}")]
    Query(String),
    #[error("non-finite convolution value at query {index}")]
    NonFinite { index: usize },
    #[error(transparent)]
    Transform(#[from] TransformError),
}

/// Real moments `Ω_n'l0(g)` of a zonal kernel, indexed by `tri(n', l)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpectrum {
    pub n_max: usize,
    pub moments: Vec<f64>,
}

impl KernelSpectrum {
    pub fn zeros(n_max: usize) -> Self {
        Self {
            n_max,
            moments: vec![0.0; radial_count(n_max)],
        }
    }

    /// Builds a spectrum from raw values; the `(0, 0)` entry is forced to zero.
    pub fn from_moments(n_max: usize, mut moments: Vec<f64>) -> Result<Self, ConvError> {
        if moments.len() != radial_count(n_max) {
            return Err(ConvError::BandLimit(format!(
                "n_max = {n_max} needs {} kernel moments, found {}",
                radial_count(n_max),
                moments.len()
            )));
        }
        moments[0] = 0.0;
        Ok(Self { n_max, moments })
    }

    pub fn get(&self, n: usize, l: usize) -> f64 {
        self.moments[tri(n, l)]
    }

    pub fn set(&mut self, n: usize, l: usize, v: f64) {
        if (n, l) != (0, 0) {
            self.moments[tri(n, l)] = v;
        }
    }
}

/// Extracts the `m = 0` moments of a zonal kernel grid.
pub fn kernel_spectrum(kernel_grid: &BallGrid, basis: &BasisSet) -> Result<KernelSpectrum, ConvError> {
    kernel_grid.validate()?;
    let variation = theta_variation(kernel_grid);
    if variation > ZONAL_TOLERANCE {
        return Err(ConvError::NotZonal { variation });
    }
    let t = forward_moments(kernel_grid, basis, None)?;
    let scale = t.norm().max(1.0);
    for (n, l, m) in SpectralTensor::indices(basis.n_max()) {
        let v = t.get(n, l, m);
        if m != 0 && v.norm() > ZONAL_TOLERANCE * scale {
            return Err(ConvError::NotZonal { variation: v.norm() });
        }
    }
    let mut spec = KernelSpectrum::zeros(basis.n_max());
    for n in 0..=basis.n_max() {
        for l in 0..=n {
            spec.set(n, l, t.get(n, l, 0).re);
        }
    }
    Ok(spec)
}

fn theta_variation(grid: &BallGrid) -> f64 {
    let d = grid.dims;
    let mut worst: f64 = 0.0;
    for i in 0..d.nr {
        for k in 0..d.nphi {
            let first = grid.get(i, 0, k);
            for j in 1..d.ntheta {
                worst = worst.max((grid.get(i, j, k) - first).abs());
            }
        }
    }
    worst
}

/// Zonal Gaussian cap `e^{−κ_φ φ²} e^{−κ_r (r − r₀)²}` on a grid.
pub fn gaussian_cap(dims: GridDims, kappa_phi: f64, kappa_r: f64, r0: f64) -> BallGrid {
    BallGrid::from_fn(dims, |r, _, phi| (-kappa_phi * phi * phi).exp() * (-kappa_r * (r - r0) * (r - r0)).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvQuery {
    pub r_prime: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl ConvQuery {
    pub fn new(r_prime: f64, alpha: f64, beta: f64) -> Result<Self, ConvError> {
        let q = Self { r_prime, alpha, beta };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<(), ConvError> {
        if !(0.0..1.0).contains(&self.r_prime) {
            return Err(ConvError::Query(format!("r' = {} outside [0, 1)", self.r_prime)));
        }
        if !(0.0..2.0 * PI).contains(&self.alpha) {
            return Err(ConvError::Query(format!("α = {} outside [0, 2π)", self.alpha)));
        }
        if !(0.0..=PI).contains(&self.beta) {
            return Err(ConvError::Query(format!("β = {} outside [0, π]", self.beta)));
        }
        Ok(())
    }
}

/// Tensor lattice of queries: explicit translation levels times bin-centred
/// `(α, β)` angles. Values are stored level-major, then α, then β.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryLattice {
    pub r_primes: Vec<f64>,
    pub nalpha: usize,
    pub nbeta: usize,
}

impl QueryLattice {
    /// `n_r × n_α × n_β` bin centres; `r'_i = (i + ½)/n_r`.
    pub fn bin_centers(nr: usize, nalpha: usize, nbeta: usize) -> Self {
        Self {
            r_primes: (0..nr).map(|i| (i as f64 + 0.5) / nr as f64).collect(),
            nalpha,
            nbeta,
        }
    }

    pub fn with_levels(r_primes: Vec<f64>, nalpha: usize, nbeta: usize) -> Self {
        Self { r_primes, nalpha, nbeta }
    }

    pub fn len(&self) -> usize {
        self.r_primes.len() * self.nalpha * self.nbeta
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The lattice read as `(r, θ, φ)` bins.
    pub fn grid_dims(&self) -> GridDims {
        GridDims::new(self.r_primes.len(), self.nalpha, self.nbeta)
    }

    pub fn alpha(&self, j: usize) -> f64 {
        self.grid_dims().theta_center(j)
    }

    pub fn beta(&self, k: usize) -> f64 {
        self.grid_dims().phi_center(k)
    }

    pub fn queries(&self) -> Vec<ConvQuery> {
        let mut out = Vec::with_capacity(self.len());
        for &r_prime in &self.r_primes {
            for j in 0..self.nalpha {
                for k in 0..self.nbeta {
                    out.push(ConvQuery {
                        r_prime,
                        alpha: self.alpha(j),
                        beta: self.beta(k),
                    });
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), ConvError> {
        if self.is_empty() {
            return Err(ConvError::Query("empty lattice".into()));
        }
        for &r in &self.r_primes {
            if !(0.0..1.0).contains(&r) {
                return Err(ConvError::Query(format!("r' = {r} outside [0, 1)")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvProvenance {
    pub basis_id: String,
    pub n_max: usize,
    pub mode: BaseMode,
    pub variant: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvField {
    pub lattice: QueryLattice,
    pub values: Vec<f64>,
    pub provenance: ConvProvenance,
}

impl ConvField {
    pub fn get(&self, level: usize, j: usize, k: usize) -> f64 {
        self.values[self.lattice.grid_dims().index(level, j, k)]
    }

    /// Lattice index `(level, α, β)` of the largest value; ties keep the first.
    pub fn argmax(&self) -> (usize, usize, usize) {
        let d = self.lattice.grid_dims();
        let mut best = (0, f64::NEG_INFINITY);
        for (i, &v) in self.values.iter().enumerate() {
            if v > best.1 {
                best = (i, v);
            }
        }
        let i = best.0;
        (i / (d.ntheta * d.nphi), (i / d.nphi) % d.ntheta, i % d.nphi)
    }

    /// The field re-read as a ball grid over its lattice.
    pub fn to_grid(&self) -> BallGrid {
        let dims = self.lattice.grid_dims();
        BallGrid {
            dims,
            values: self.values.clone(),
            occupancy: vec![0; dims.len()],
        }
    }
}

/// Arithmetic needed by one query evaluation.
pub trait Scalar: Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> {
    fn constant(v: f64) -> Self;
    fn exp(self) -> Self;
    /// Real and imaginary parts of one special-function evaluation.
    fn special(v: Complex64) -> (Self, Self);
    fn value(self) -> f64;
}

impl Scalar for f64 {
    #[inline]
    fn constant(v: f64) -> Self {
        v
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn special(v: Complex64) -> (Self, Self) {
        (v.re, v.im)
    }
    #[inline]
    fn value(self) -> f64 {
        self
    }
}

/// Operation counts of a convolution evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounts {
    pub multiplies: u64,
    pub adds: u64,
    pub transcendentals: u64,
}

thread_local! {
    static COUNTS: Cell<OpCounts> = const { Cell::new(OpCounts { multiplies: 0, adds: 0, transcendentals: 0 }) };
}

fn bump(f: impl FnOnce(&mut OpCounts)) {
    COUNTS.with(|c| {
        let mut v = c.get();
        f(&mut v);
        c.set(v);
    });
}

/// `f64` that tallies every arithmetic operation in a thread-local counter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Counted(pub f64);

impl Add for Counted {
    type Output = Counted;
    fn add(self, o: Counted) -> Counted {
        bump(|c| c.adds += 1);
        Counted(self.0 + o.0)
    }
}

impl Sub for Counted {
    type Output = Counted;
    fn sub(self, o: Counted) -> Counted {
        bump(|c| c.adds += 1);
        Counted(self.0 - o.0)
    }
}

impl Mul for Counted {
    type Output = Counted;
    fn mul(self, o: Counted) -> Counted {
        bump(|c| c.multiplies += 1);
        Counted(self.0 * o.0)
    }
}

impl Scalar for Counted {
    fn constant(v: f64) -> Self {
        Counted(v)
    }
    fn exp(self) -> Self {
        bump(|c| c.transcendentals += 1);
        Counted(self.0.exp())
    }
    fn special(v: Complex64) -> (Self, Self) {
        bump(|c| c.transcendentals += 1);
        (Counted(v.re), Counted(v.im))
    }
    fn value(self) -> f64 {
        self.0
    }
}

/// One query of the blended convolution.
pub fn conv_query<S: Scalar>(f: &SpectralTensor, g: &KernelSpectrum, basis: &BasisSet, q: &ConvQuery) -> S {
    let n_max = basis.n_max();
    if n_max == 0 {
        return S::constant(0.0);
    }
    let mut e = vec![S::constant(1.0)];
    for j in 1..=n_max {
        e.push(S::constant(j as f64 * q.r_prime).exp());
    }
    let y: Vec<(S, S)> = sph_harm_table(n_max, q.alpha, q.beta)
        .into_iter()
        .map(S::special)
        .collect();
    let mut acc = S::constant(0.0);
    for n in 1..=n_max {
        for l in 0..=n {
            let mut h = S::constant(0.0);
            for np in l..=n_max {
                if np == n || (np, l) == (0, 0) {
                    continue;
                }
                let d = e[n - l] - e[np - l];
                h = h + S::constant(basis.gram(n, np, l)) * d * S::constant(g.get(np, l));
            }
            for m in -(l as i64)..=l as i64 {
                let w = f.get(n, l, m);
                let (yr, yi) = y[lm_index(l, m)];
                let re = S::constant(w.re) * yr - S::constant(w.im) * yi;
                acc = acc + re * h;
            }
        }
    }
    acc * S::constant(PREFACTOR)
}

fn check_inputs(f: &SpectralTensor, g: &KernelSpectrum, basis: &BasisSet) -> Result<(), ConvError> {
    if basis.mode() != BaseMode::Exponential {
        return Err(ConvError::UnsupportedMode);
    }
    if f.n_max() != basis.n_max() || g.n_max != basis.n_max() {
        return Err(ConvError::BandLimit(format!(
            "input {}, kernel {}, basis {}",
            f.n_max(),
            g.n_max,
            basis.n_max()
        )));
    }
    Ok(())
}

fn provenance(basis: &BasisSet, variant: &str) -> ConvProvenance {
    ConvProvenance {
        basis_id: basis.id(),
        n_max: basis.n_max(),
        mode: basis.mode(),
        variant: variant.into(),
    }
}

fn finite(values: Vec<f64>) -> Result<Vec<f64>, ConvError> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(ConvError::NonFinite { index }),
        None => Ok(values),
    }
}

/// Evaluates the blended convolution on every lattice query.
pub fn blended_conv(f: &SpectralTensor, g: &KernelSpectrum, basis: &BasisSet, lattice: &QueryLattice) -> Result<ConvField, ConvError> {
    check_inputs(f, g, basis)?;
    lattice.validate()?;
    let values: Vec<f64> = lattice
        .queries()
        .par_iter()
        .map(|q| conv_query::<f64>(f, g, basis, q))
        .collect();
    Ok(ConvField {
        lattice: lattice.clone(),
        values: finite(values)?,
        provenance: provenance(basis, "blended"),
    })
}

/// Runs the per-query evaluation with counting arithmetic on the current thread.
pub fn instrumented_conv(
    f: &SpectralTensor,
    g: &KernelSpectrum,
    basis: &BasisSet,
    lattice: &QueryLattice,
) -> Result<(Vec<f64>, OpCounts), ConvError> {
    check_inputs(f, g, basis)?;
    lattice.validate()?;
    COUNTS.with(|c| c.set(OpCounts::default()));
    let values = lattice
        .queries()
        .iter()
        .map(|q| conv_query::<Counted>(f, g, basis, q).value())
        .collect();
    Ok((values, COUNTS.with(|c| c.get())))
}

/// Closed-form operation count of [`blended_conv`] over `queries` lattice points.
pub fn flop_count(n_max: usize, queries: usize) -> OpCounts {
    if n_max == 0 {
        return OpCounts::default();
    }
    let (mut terms, mut orders) = (0u64, 0u64);
    for n in 1..=n_max {
        for l in 0..=n {
            terms += (n_max - l - usize::from(l == 0)) as u64;
        }
        orders += ((n + 1) * (n + 1)) as u64;
    }
    let q = queries as u64;
    let dim = (n_max + 1) as u64;
    OpCounts {
        multiplies: (2 * terms + 3 * orders + 1) * q,
        adds: (2 * terms + 2 * orders) * q,
        transcendentals: (n_max as u64 + dim * dim) * q,
    }
}

/// Rotation-only ablation: `(4π/3) Σ Ω_nlm(f) Ω_nl0(g) / ‖Q_nl‖² Y_lm(α, β)`.
/// Every translation level of the lattice carries the same angular field.
pub fn rotation_only_conv(f: &SpectralTensor, g: &KernelSpectrum, basis: &BasisSet, lattice: &QueryLattice) -> Result<ConvField, ConvError> {
    check_inputs(f, g, basis)?;
    lattice.validate()?;
    let plan = ConvPlan::rotation_only(basis, lattice)?;
    Ok(ConvField {
        lattice: lattice.clone(),
        values: finite(plan.field(f, g))?,
        provenance: provenance(basis, "rotation-only"),
    })
}

/// Direct evaluation of `∫ f(x) g(τ⁻¹x at radius r + r') r² sin φ dφ dθ dr`
/// on the midpoint nodes of `f_grid`, with trilinear sampling of `g_grid`.
pub fn spatial_conv_oracle(f_grid: &BallGrid, g_grid: &BallGrid, query: &ConvQuery) -> Result<f64, ConvError> {
    f_grid.validate()?;
    g_grid.validate()?;
    query.validate()?;
    let variation = theta_variation(g_grid);
    if variation > ZONAL_TOLERANCE {
        return Err(ConvError::NotZonal { variation });
    }
    let d = f_grid.dims;
    let rot = pole_rotation(query.alpha, query.beta);
    let dv = d.cell_volume();
    let mut acc = 0.0;
    for j in 0..d.ntheta {
        let theta = d.theta_center(j);
        for k in 0..d.nphi {
            let phi = d.phi_center(k);
            let x = crate::harmonics::direction(theta, phi);
            // τ⁻¹ = τᵀ
            let mut y = [0.0; 3];
            for (a, ya) in y.iter_mut().enumerate() {
                *ya = rot[0][a] * x[0] + rot[1][a] * x[1] + rot[2][a] * x[2];
            }
            let (t2, p2) = crate::harmonics::angles_of(y);
            let w = phi.sin() * dv;
            for i in 0..d.nr {
                let v = f_grid.get(i, j, k);
                if v == 0.0 {
                    continue;
                }
                let r = d.r_center(i);
                acc += v * sample_trilinear(g_grid, r + query.r_prime, t2, p2) * r * r * w;
            }
        }
    }
    Ok(acc)
}

/// Trilinear interpolation on bin centres; θ wraps, `r` and `φ` clamp to the
/// outermost centres, and radii at or beyond 1 sample to 0.
pub fn sample_trilinear(grid: &BallGrid, r: f64, theta: f64, phi: f64) -> f64 {
    if !(0.0..1.0).contains(&r) {
        return 0.0;
    }
    let d = grid.dims;
    let clamp_axis = |u: f64, n: usize| -> (usize, usize, f64) {
        if n == 1 || u <= 0.0 {
            return (0, 0, 0.0);
        }
        let top = (n - 1) as f64;
        if u >= top {
            return (n - 1, n - 1, 0.0);
        }
        let i0 = u.floor() as usize;
        (i0, i0 + 1, u - i0 as f64)
    };
    let (r0, r1, fr) = clamp_axis(r * d.nr as f64 - 0.5, d.nr);
    let (p0, p1, fp) = clamp_axis(phi / PI * d.nphi as f64 - 0.5, d.nphi);
    let u = (theta / (2.0 * PI) * d.ntheta as f64 - 0.5).rem_euclid(d.ntheta as f64);
    let t0 = (u.floor() as usize) % d.ntheta;
    let t1 = (t0 + 1) % d.ntheta;
    let ft = u - u.floor();
    let mut acc = 0.0;
    for (ri, wr) in [(r0, 1.0 - fr), (r1, fr)] {
        for (ti, wt) in [(t0, 1.0 - ft), (t1, ft)] {
            for (pi, wp) in [(p0, 1.0 - fp), (p1, fp)] {
                let w = wr * wt * wp;
                if w != 0.0 {
                    acc += w * grid.get(ri, ti, pi);
                }
            }
        }
    }
    acc
}

/// Factorized evaluation of a convolution variant over a fixed lattice.
///
/// `E[level][n][n'][l]` holds every factor that depends on the basis and the
/// translation level, so a field is `Re Σ_lm (Σ_n (Σ_n' E g_n'l) Ω_nlm) Y_lm`.
#[derive(Debug, Clone)]
pub struct ConvPlan {
    n_max: usize,
    levels: usize,
    transfer: Vec<f64>,
    synth: MomentPlan,
}

impl ConvPlan {
    fn tidx(&self, level: usize, n: usize, np: usize, l: usize) -> usize {
        let d = self.n_max + 1;
        ((level * d + n) * d + np) * d + l
    }

    fn empty(basis: &BasisSet, lattice: &QueryLattice) -> Result<Self, ConvError> {
        if basis.mode() != BaseMode::Exponential {
            return Err(ConvError::UnsupportedMode);
        }
        lattice.validate()?;
        let d = basis.n_max() + 1;
        let levels = lattice.r_primes.len();
        Ok(Self {
            n_max: basis.n_max(),
            levels,
            transfer: vec![0.0; levels * d * d * d],
            synth: MomentPlan::new(lattice.grid_dims(), basis.n_max())?,
        })
    }

    pub fn blended(basis: &BasisSet, lattice: &QueryLattice) -> Result<Self, ConvError> {
        let mut p = Self::empty(basis, lattice)?;
        for (level, &rp) in lattice.r_primes.iter().enumerate() {
            for n in 1..=p.n_max {
                for l in 0..=n {
                    let a = ((n - l) as f64 * rp).exp();
                    for np in l..=p.n_max {
                        if np == n || (np, l) == (0, 0) {
                            continue;
                        }
                        let b = ((np - l) as f64 * rp).exp();
                        let i = p.tidx(level, n, np, l);
                        p.transfer[i] = PREFACTOR * basis.gram(n, np, l) * (a - b);
                    }
                }
            }
        }
        Ok(p)
    }

    pub fn rotation_only(basis: &BasisSet, lattice: &QueryLattice) -> Result<Self, ConvError> {
        let mut p = Self::empty(basis, lattice)?;
        for level in 0..p.levels {
            for n in 1..=p.n_max {
                for l in 0..=n {
                    let i = p.tidx(level, n, n, l);
                    p.transfer[i] = PREFACTOR / basis.norm(n, l);
                }
            }
        }
        Ok(p)
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn dims(&self) -> GridDims {
        self.synth.dims()
    }

    /// `H[level][tri(n, l)] = Σ_n' E g_n'l`
    pub fn kernel_transfer(&self, g: &KernelSpectrum) -> Vec<f64> {
        let rc = radial_count(self.n_max);
        let mut h = vec![0.0; self.levels * rc];
        for level in 0..self.levels {
            for n in 0..=self.n_max {
                for l in 0..=n {
                    let mut acc = 0.0;
                    for np in l..=self.n_max {
                        acc += self.transfer[self.tidx(level, n, np, l)] * g.get(np, l);
                    }
                    h[level * rc + tri(n, l)] = acc;
                }
            }
        }
        h
    }

    fn lm(&self) -> usize {
        (self.n_max + 1) * (self.n_max + 1)
    }

    /// `S[level][lm] = Σ_n H[level][n, l] Ω_nlm`
    pub fn shells(&self, h: &[f64], f: &SpectralTensor) -> Vec<Complex64> {
        let rc = radial_count(self.n_max);
        let lm = self.lm();
        let mut s = vec![Complex64::new(0.0, 0.0); self.levels * lm];
        for level in 0..self.levels {
            for (n, l, m) in SpectralTensor::indices(self.n_max) {
                s[level * lm + lm_index(l, m)] += f.get(n, l, m) * h[level * rc + tri(n, l)];
            }
        }
        s
    }

    pub fn synthesize(&self, shells: &[Complex64]) -> Vec<f64> {
        self.synth.synthesize(shells)
    }

    pub fn field(&self, f: &SpectralTensor, g: &KernelSpectrum) -> Vec<f64> {
        self.synthesize(&self.shells(&self.kernel_transfer(g), f))
    }

    /// Gradients of a real loss w.r.t. the input moments and the kernel, given
    /// the loss gradient on the field values.
    pub fn backward(&self, f: &SpectralTensor, h: &[f64], grad_field: &[f64]) -> (SpectralTensor, Vec<f64>) {
        let rc = radial_count(self.n_max);
        let lm = self.lm();
        let gs = self.synth.synthesize_adjoint(grad_field);
        let mut gf = SpectralTensor::zeros(self.n_max);
        let mut gh = vec![0.0; self.levels * rc];
        for level in 0..self.levels {
            for (n, l, m) in SpectralTensor::indices(self.n_max) {
                let g = gs[level * lm + lm_index(l, m)];
                let w = f.get(n, l, m);
                let i = SpectralTensor::index(n, l, m);
                gf.as_mut_slice()[i] += g * h[level * rc + tri(n, l)];
                gh[level * rc + tri(n, l)] += g.re * w.re + g.im * w.im;
            }
        }
        let mut gk = vec![0.0; rc];
        for level in 0..self.levels {
            for n in 0..=self.n_max {
                for l in 0..=n {
                    let ghv = gh[level * rc + tri(n, l)];
                    if ghv == 0.0 {
                        continue;
                    }
                    for np in l..=self.n_max {
                        gk[tri(np, l)] += self.transfer[self.tidx(level, n, np, l)] * ghv;
                    }
                }
            }
        }
        gk[0] = 0.0;
        (gf, gk)
    }
}
