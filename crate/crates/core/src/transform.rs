//! Point clouds, the binned ball grid and the spatial ↔ spectral transforms.
//!
//! Moments are a midpoint Riemann sum over the bin lattice:
//! `Ω_nlm = Σ_bins v · conj(Q_nl(r) Y_lm(θ, φ)) · r² sin φ · Δr Δθ Δφ`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{radial_values, tri, BaseMode, BasisSet, MixingCoefficients};
use crate::harmonics::lm_index;

/// Largest radius after [`normalize`].
pub const NORMALIZED_RADIUS: f64 = 0.95;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransformError {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("point cloud is degenerate: all points coincide")]
    DegenerateCloud,
    #[error("point {index} has non-finite coordinates")]
    NonFinite { index: usize },
    #[error("point {index} lies outside the unit ball (|p| = {radius})")]
    OutsideBall { index: usize, radius: f64 },
    #[error("grid dimensions must be positive, got {0:?}")]
    BadDims(GridDims),
    #[error("dimension mismatch: {0}")]
    Mismatch(String),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
    /// Per-point texture; same length as `points`.
    pub textures: Vec<f64>,
    pub label: Option<usize>,
}

impl PointCloud {
    /// Cloud with uniform texture 1.0.
    pub fn from_points(points: Vec<[f64; 3]>) -> Self {
        let textures = vec![1.0; points.len()];
        Self {
            points,
            textures,
            label: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = Some(label);
        self
    }

    /// Applies the 3×3 matrix `m` to every point.
    pub fn transformed(&self, m: &[[f64; 3]; 3]) -> Self {
        let points = self
            .points
            .iter()
            .map(|p| {
                let mut q = [0.0; 3];
                for (i, qi) in q.iter_mut().enumerate() {
                    *qi = m[i][0] * p[0] + m[i][1] * p[1] + m[i][2] * p[2];
                }
                q
            })
            .collect();
        Self {
            points,
            textures: self.textures.clone(),
            label: self.label,
        }
    }
}

fn norm3(p: &[f64; 3]) -> f64 {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}

/// Centers the cloud at its centroid and scales it so the farthest point sits
/// at radius [`NORMALIZED_RADIUS`].
pub fn normalize(cloud: &PointCloud) -> Result<PointCloud, TransformError> {
    if cloud.is_empty() {
        return Err(TransformError::EmptyCloud);
    }
    let mut c = [0.0; 3];
    for (i, p) in cloud.points.iter().enumerate() {
        if !p.iter().all(|v| v.is_finite()) {
            return Err(TransformError::NonFinite { index: i });
        }
        for k in 0..3 {
            c[k] += p[k];
        }
    }
    let inv = 1.0 / cloud.len() as f64;
    for v in &mut c {
        *v *= inv;
    }
    let centered: Vec<[f64; 3]> = cloud
        .points
        .iter()
        .map(|p| [p[0] - c[0], p[1] - c[1], p[2] - c[2]])
        .collect();
    let extent = centered.iter().map(norm3).fold(0.0, f64::max);
    let scale_ref = cloud
        .points
        .iter()
        .map(norm3)
        .fold(0.0, f64::max)
        .max(1.0);
    if extent <= 1e-12 * scale_ref {
        return Err(TransformError::DegenerateCloud);
    }
    let s = NORMALIZED_RADIUS / extent;
    Ok(PointCloud {
        points: centered.into_iter().map(|p| [p[0] * s, p[1] * s, p[2] * s]).collect(),
        textures: cloud.textures.clone(),
        label: cloud.label,
    })
}

/// Bin counts along `(r, θ, φ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridDims {
    pub nr: usize,
    pub ntheta: usize,
    pub nphi: usize,
}

impl GridDims {
    /// The 25 × 36 × 18 lattice used for input shapes.
    pub const DEFAULT: GridDims = GridDims {
        nr: 25,
        ntheta: 36,
        nphi: 18,
    };

    pub fn new(nr: usize, ntheta: usize, nphi: usize) -> Self {
        Self { nr, ntheta, nphi }
    }

    pub fn len(&self) -> usize {
        self.nr * self.ntheta * self.nphi
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<(), TransformError> {
        if self.nr == 0 || self.ntheta == 0 || self.nphi == 0 {
            return Err(TransformError::BadDims(*self));
        }
        Ok(())
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.ntheta + j) * self.nphi + k
    }

    pub fn r_center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) / self.nr as f64
    }

    pub fn theta_center(&self, j: usize) -> f64 {
        2.0 * PI * (j as f64 + 0.5) / self.ntheta as f64
    }

    pub fn phi_center(&self, k: usize) -> f64 {
        PI * (k as f64 + 0.5) / self.nphi as f64
    }

    pub fn radii(&self) -> Vec<f64> {
        (0..self.nr).map(|i| self.r_center(i)).collect()
    }

    /// `Δr Δθ Δφ`
    pub fn cell_volume(&self) -> f64 {
        (1.0 / self.nr as f64) * (2.0 * PI / self.ntheta as f64) * (PI / self.nphi as f64)
    }
}

impl Default for GridDims {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// Real texture values on the `(r, θ, φ)` bin lattice, row-major in that order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallGrid {
    pub dims: GridDims,
    pub values: Vec<f64>,
    pub occupancy: Vec<u32>,
}

impl BallGrid {
    pub fn zeros(dims: GridDims) -> Self {
        Self {
            dims,
            values: vec![0.0; dims.len()],
            occupancy: vec![0; dims.len()],
        }
    }

    /// Grid sampled from `f(r, θ, φ)` at bin centres, with zero occupancy.
    pub fn from_fn<F: FnMut(f64, f64, f64) -> f64>(dims: GridDims, mut f: F) -> Self {
        let mut g = Self::zeros(dims);
        for i in 0..dims.nr {
            let r = dims.r_center(i);
            for j in 0..dims.ntheta {
                let t = dims.theta_center(j);
                for k in 0..dims.nphi {
                    g.values[dims.index(i, j, k)] = f(r, t, dims.phi_center(k));
                }
            }
        }
        g
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.dims.index(i, j, k)]
    }

    pub fn total_occupancy(&self) -> u64 {
        self.occupancy.iter().map(|&c| c as u64).sum()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            dims: self.dims,
            values: self.values.iter().map(|v| v * s).collect(),
            occupancy: self.occupancy.clone(),
        }
    }

    /// `√(Σ v² r² sin φ ΔrΔθΔφ)`
    pub fn l2_norm(&self) -> f64 {
        self.weighted_dot(self).sqrt()
    }

    pub fn weighted_dot(&self, other: &BallGrid) -> f64 {
        let d = self.dims;
        let dv = d.cell_volume();
        let mut acc = 0.0;
        for i in 0..d.nr {
            let r = d.r_center(i);
            for j in 0..d.ntheta {
                for k in 0..d.nphi {
                    let w = r * r * d.phi_center(k).sin() * dv;
                    let idx = d.index(i, j, k);
                    acc += self.values[idx] * other.values[idx] * w;
                }
            }
        }
        acc
    }

    pub fn validate(&self) -> Result<(), TransformError> {
        self.dims.validate()?;
        if self.values.len() != self.dims.len() || self.occupancy.len() != self.dims.len() {
            return Err(TransformError::Mismatch(format!(
                "grid {:?} expects {} values",
                self.dims,
                self.dims.len()
            )));
        }
        Ok(())
    }
}

fn bin_of(dims: &GridDims, p: &[f64; 3]) -> (usize, usize, usize) {
    let r = norm3(p);
    let (theta, phi) = crate::harmonics::angles_of(*p);
    let clampi = |x: f64, n: usize| (x.floor().max(0.0) as usize).min(n - 1);
    (
        clampi(r * dims.nr as f64, dims.nr),
        clampi(theta / (2.0 * PI) * dims.ntheta as f64, dims.ntheta),
        clampi(phi / PI * dims.nphi as f64, dims.nphi),
    )
}

/// Assigns every point to its `(r, θ, φ)` bin; bin value is the mean texture.
pub fn bin_point_cloud(cloud: &PointCloud, dims: GridDims) -> Result<BallGrid, TransformError> {
    dims.validate()?;
    if cloud.textures.len() != cloud.points.len() {
        return Err(TransformError::Mismatch(format!(
            "{} points but {} textures",
            cloud.points.len(),
            cloud.textures.len()
        )));
    }
    let mut grid = BallGrid::zeros(dims);
    for (index, (p, &c)) in cloud.points.iter().zip(&cloud.textures).enumerate() {
        if !p.iter().all(|v| v.is_finite()) {
            return Err(TransformError::NonFinite { index });
        }
        let radius = norm3(p);
        if radius >= 1.0 {
            return Err(TransformError::OutsideBall { index, radius });
        }
        let (i, j, k) = bin_of(&dims, p);
        let idx = dims.index(i, j, k);
        grid.values[idx] += c;
        grid.occupancy[idx] += 1;
    }
    for (v, &n) in grid.values.iter_mut().zip(&grid.occupancy) {
        if n > 0 {
            *v /= n as f64;
        }
    }
    Ok(grid)
}

/// Complex moments `Ω_nlm` for `0 ≤ l ≤ n ≤ n_max`, `|m| ≤ l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralTensor {
    n_max: usize,
    moments: Vec<Complex64>,
}

impl SpectralTensor {
    pub fn zeros(n_max: usize) -> Self {
        Self {
            n_max,
            moments: vec![Complex64::new(0.0, 0.0); Self::count(n_max)],
        }
    }

    /// `Σ_{n ≤ n_max} (n+1)²`
    pub fn count(n_max: usize) -> usize {
        (n_max + 1) * (n_max + 2) * (2 * n_max + 3) / 6
    }

    #[inline]
    pub fn index(n: usize, l: usize, m: i64) -> usize {
        n * (n + 1) * (2 * n + 1) / 6 + lm_index(l, m)
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn get(&self, n: usize, l: usize, m: i64) -> Complex64 {
        self.moments[Self::index(n, l, m)]
    }

    pub fn set(&mut self, n: usize, l: usize, m: i64, v: Complex64) {
        self.moments[Self::index(n, l, m)] = v;
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.moments
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.moments
    }

    pub fn from_moments(n_max: usize, moments: Vec<Complex64>) -> Result<Self, TransformError> {
        if moments.len() != Self::count(n_max) {
            return Err(TransformError::Mismatch(format!(
                "n_max = {n_max} needs {} moments, found {}",
                Self::count(n_max),
                moments.len()
            )));
        }
        Ok(Self { n_max, moments })
    }

    /// Iterates `(n, l, m)` in storage order.
    pub fn indices(n_max: usize) -> impl Iterator<Item = (usize, usize, i64)> {
        (0..=n_max).flat_map(|n| (0..=n).flat_map(move |l| (-(l as i64)..=l as i64).map(move |m| (n, l, m))))
    }

    /// Largest deviation from `Ω_{n,l,−m} = (−1)^m conj(Ω_nlm)`.
    pub fn conjugate_symmetry_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (n, l, m) in Self::indices(self.n_max).filter(|&(_, _, m)| m > 0) {
            let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
            let d = self.get(n, l, -m) - self.get(n, l, m).conj() * sign;
            worst = worst.max(d.norm());
        }
        worst
    }

    pub fn norm(&self) -> f64 {
        self.moments.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// Precomputed sampling tables for one grid lattice and band limit.
///
/// `angular` maps grid values to per-shell angular coefficients
/// `A_lm(i) = Σ_{j,k} v_ijk conj(Y_lm(θ_j, φ_k)) sin φ_k Δθ Δφ`; the radial
/// stage then contracts `A` against sampled radial functions with `r_i² Δr`.
#[derive(Debug, Clone)]
pub struct MomentPlan {
    dims: GridDims,
    l_max: usize,
    /// `r_i² Δr`
    radial_weights: Vec<f64>,
    /// `(−1)^m N_lm P_l^m(cos φ_k)` for `m ≥ 0`, indexed `[k][lm_index(l, m)]`.
    legendre: Vec<Vec<f64>>,
    /// `sin φ_k Δφ`
    polar_weights: Vec<f64>,
    /// `cos(m θ_j)`, `sin(m θ_j)` indexed `[m][j]`.
    cos_table: Vec<Vec<f64>>,
    sin_table: Vec<Vec<f64>>,
    theta_step: f64,
}

impl MomentPlan {
    pub fn new(dims: GridDims, l_max: usize) -> Result<Self, TransformError> {
        dims.validate()?;
        let dr = 1.0 / dims.nr as f64;
        let radial_weights = dims.radii().iter().map(|r| r * r * dr).collect();
        let dphi = PI / dims.nphi as f64;
        let mut legendre = Vec::with_capacity(dims.nphi);
        let mut polar_weights = Vec::with_capacity(dims.nphi);
        for k in 0..dims.nphi {
            let phi = dims.phi_center(k);
            // Y_lm at θ = 0 is real for m ≥ 0.
            let y = crate::harmonics::sph_harm_table(l_max, 0.0, phi);
            legendre.push(y.iter().map(|c| c.re).collect());
            polar_weights.push(phi.sin() * dphi);
        }
        let mut cos_table = vec![vec![0.0; dims.ntheta]; l_max + 1];
        let mut sin_table = vec![vec![0.0; dims.ntheta]; l_max + 1];
        for m in 0..=l_max {
            for j in 0..dims.ntheta {
                let (s, c) = (m as f64 * dims.theta_center(j)).sin_cos();
                cos_table[m][j] = c;
                sin_table[m][j] = s;
            }
        }
        Ok(Self {
            dims,
            l_max,
            radial_weights,
            legendre,
            polar_weights,
            cos_table,
            sin_table,
            theta_step: 2.0 * PI / dims.ntheta as f64,
        })
    }

    pub fn dims(&self) -> GridDims {
        self.dims
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    pub fn radial_weights(&self) -> &[f64] {
        &self.radial_weights
    }

    fn lm_len(&self) -> usize {
        (self.l_max + 1) * (self.l_max + 1)
    }

    /// Angular coefficients, indexed `[i * (l_max+1)² + lm_index(l, m)]`.
    pub fn angular(&self, values: &[f64]) -> Vec<Complex64> {
        self.project(values, true)
    }

    /// Adjoint of [`MomentPlan::synthesize`]: `Σ_{j,k} v_ijk conj(Y_lm(θ_j, φ_k))`
    /// without quadrature weights.
    pub fn synthesize_adjoint(&self, values: &[f64]) -> Vec<Complex64> {
        self.project(values, false)
    }

    fn project(&self, values: &[f64], weighted: bool) -> Vec<Complex64> {
        let d = self.dims;
        let lm = self.lm_len();
        let mut out = vec![Complex64::new(0.0, 0.0); d.nr * lm];
        let mut dft = vec![Complex64::new(0.0, 0.0); self.l_max + 1];
        for i in 0..d.nr {
            let shell = &mut out[i * lm..(i + 1) * lm];
            for k in 0..d.nphi {
                for (m, slot) in dft.iter_mut().enumerate() {
                    let (mut re, mut im) = (0.0, 0.0);
                    for j in 0..d.ntheta {
                        let v = values[d.index(i, j, k)];
                        re += v * self.cos_table[m][j];
                        im -= v * self.sin_table[m][j];
                    }
                    *slot = Complex64::new(re, im);
                }
                let w = if weighted { self.polar_weights[k] * self.theta_step } else { 1.0 };
                let leg = &self.legendre[k];
                for m in 0..=self.l_max {
                    let dm = dft[m] * w;
                    for l in m..=self.l_max {
                        shell[lm_index(l, m as i64)] += dm * leg[lm_index(l, m as i64)];
                    }
                }
            }
            for l in 1..=self.l_max {
                for m in 1..=l as i64 {
                    let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
                    shell[lm_index(l, -m)] = shell[lm_index(l, m)].conj() * sign;
                }
            }
        }
        out
    }

    /// Adjoint of [`MomentPlan::angular`]: maps a gradient on the angular
    /// coefficients back to a gradient on grid values.
    pub fn angular_adjoint(&self, grad: &[Complex64]) -> Vec<f64> {
        let d = self.dims;
        let lm = self.lm_len();
        let mut out = vec![0.0; d.len()];
        let mut folded = vec![Complex64::new(0.0, 0.0); lm];
        let mut b = vec![Complex64::new(0.0, 0.0); self.l_max + 1];
        for i in 0..d.nr {
            let g = &grad[i * lm..(i + 1) * lm];
            folded.copy_from_slice(g);
            for l in 1..=self.l_max {
                for m in 1..=l as i64 {
                    let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
                    let neg = g[lm_index(l, -m)];
                    folded[lm_index(l, m)] += neg.conj() * sign;
                }
            }
            for k in 0..d.nphi {
                let w = self.polar_weights[k] * self.theta_step;
                let leg = &self.legendre[k];
                for (m, slot) in b.iter_mut().enumerate() {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for l in m..=self.l_max {
                        acc += folded[lm_index(l, m as i64)] * leg[lm_index(l, m as i64)];
                    }
                    *slot = acc * w;
                }
                for j in 0..d.ntheta {
                    let mut acc = 0.0;
                    for (m, bm) in b.iter().enumerate() {
                        acc += bm.re * self.cos_table[m][j] - bm.im * self.sin_table[m][j];
                    }
                    out[d.index(i, j, k)] = acc;
                }
            }
        }
        out
    }

    /// Contracts angular coefficients with radial samples `[tri(n, l)][i]`.
    pub fn moments(&self, n_max: usize, radial: &[Vec<f64>], angular: &[Complex64]) -> SpectralTensor {
        let lm = self.lm_len();
        let mut t = SpectralTensor::zeros(n_max);
        for n in 0..=n_max {
            for l in 0..=n.min(self.l_max) {
                let q = &radial[tri(n, l)];
                for m in -(l as i64)..=l as i64 {
                    let c = lm_index(l, m);
                    let mut acc = Complex64::new(0.0, 0.0);
                    for (i, (&qi, &wi)) in q.iter().zip(&self.radial_weights).enumerate() {
                        acc += angular[i * lm + c] * (qi * wi);
                    }
                    t.set(n, l, m, acc);
                }
            }
        }
        t
    }

    /// Real grid `Re Σ_lm S_lm(i) Y_lm(θ_j, φ_k)` from per-shell coefficients.
    pub fn synthesize(&self, shells: &[Complex64]) -> Vec<f64> {
        let d = self.dims;
        let lm = self.lm_len();
        let mut out = vec![0.0; d.len()];
        let mut pos = vec![Complex64::new(0.0, 0.0); self.l_max + 1];
        let mut neg = vec![Complex64::new(0.0, 0.0); self.l_max + 1];
        for i in 0..d.nr {
            let s = &shells[i * lm..(i + 1) * lm];
            for k in 0..d.nphi {
                let leg = &self.legendre[k];
                for m in 0..=self.l_max {
                    let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
                    let (mut p, mut q) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
                    for l in m..=self.l_max {
                        let pl = leg[lm_index(l, m as i64)];
                        p += s[lm_index(l, m as i64)] * pl;
                        if m > 0 {
                            q += s[lm_index(l, -(m as i64))] * (pl * sign);
                        }
                    }
                    pos[m] = p;
                    neg[m] = q;
                }
                for j in 0..d.ntheta {
                    let mut acc = 0.0;
                    for m in 0..=self.l_max {
                        let (c, sn) = (self.cos_table[m][j], self.sin_table[m][j]);
                        // Re(p e^{imθ}) + Re(q e^{−imθ})
                        acc += pos[m].re * c - pos[m].im * sn + neg[m].re * c + neg[m].im * sn;
                    }
                    out[d.index(i, j, k)] = acc;
                }
            }
        }
        out
    }
}

fn basis_radials(basis: &BasisSet, dims: &GridDims) -> Vec<Vec<f64>> {
    radial_values(basis.mixing(), basis.mode(), &dims.radii())
}

/// Moments of a grid against the frozen basis; degrees above `l_max` are zero.
pub fn forward_moments(grid: &BallGrid, basis: &BasisSet, l_max: Option<usize>) -> Result<SpectralTensor, TransformError> {
    grid.validate()?;
    let n_max = basis.n_max();
    let cap = l_max.unwrap_or(n_max).min(n_max);
    let plan = MomentPlan::new(grid.dims, cap)?;
    let radial = basis_radials(basis, &grid.dims);
    Ok(plan.moments(n_max, &radial, &plan.angular(&grid.values)))
}

/// Moments with radial factors rebuilt from trainable mixing weights.
pub fn latent_project(grid: &BallGrid, weights: &MixingCoefficients, mode: BaseMode) -> Result<SpectralTensor, TransformError> {
    grid.validate()?;
    let n_max = weights.n_max();
    let plan = MomentPlan::new(grid.dims, n_max)?;
    let radial = radial_values(weights, mode, &grid.dims.radii());
    Ok(plan.moments(n_max, &radial, &plan.angular(&grid.values)))
}

/// Band-limited synthesis `Re Σ (Ω_nlm / ‖Q_nl‖²) Q_nl(r) Y_lm(θ, φ)`.
///
/// Dividing by the squared norms makes forward-then-reconstruct a projection
/// onto the span of the basis; the degenerate `(0, 0)` element is skipped.
pub fn reconstruct(tensor: &SpectralTensor, basis: &BasisSet, dims: GridDims) -> Result<BallGrid, TransformError> {
    if tensor.n_max() > basis.n_max() {
        return Err(TransformError::Mismatch(format!(
            "tensor band limit {} exceeds basis band limit {}",
            tensor.n_max(),
            basis.n_max()
        )));
    }
    let n_max = tensor.n_max();
    let plan = MomentPlan::new(dims, n_max)?;
    let radial = basis_radials(basis, &dims);
    let lm = (n_max + 1) * (n_max + 1);
    let mut shells = vec![Complex64::new(0.0, 0.0); dims.nr * lm];
    for (n, l, m) in SpectralTensor::indices(n_max) {
        if (n, l) == (0, 0) {
            continue;
        }
        let c = tensor.get(n, l, m) / basis.norm(n, l);
        let q = &radial[tri(n, l)];
        for i in 0..dims.nr {
            shells[i * lm + lm_index(l, m)] += c * q[i];
        }
    }
    let mut grid = BallGrid::zeros(dims);
    grid.values = plan.synthesize(&shells);
    Ok(grid)
}

/// Latent projection with a cached forward pass, for gradient computation.
///
/// The angular stage is fixed per input grid; only the radial factors depend
/// on the mixing weights.
#[derive(Debug, Clone)]
pub struct LatentProjection {
    n_max: usize,
    mode: BaseMode,
    radii: Vec<f64>,
    radial_weights: Vec<f64>,
    lm: usize,
}

impl LatentProjection {
    pub fn new(plan: &MomentPlan, n_max: usize, mode: BaseMode) -> Self {
        assert!(plan.l_max() >= n_max, "plan degree below band limit");
        Self {
            n_max,
            mode,
            radii: plan.dims().radii(),
            radial_weights: plan.radial_weights().to_vec(),
            lm: (plan.l_max() + 1) * (plan.l_max() + 1),
        }
    }

    pub fn radial(&self, weights: &MixingCoefficients) -> Vec<Vec<f64>> {
        radial_values(weights, self.mode, &self.radii)
    }

    pub fn forward(&self, radial: &[Vec<f64>], angular: &[Complex64]) -> SpectralTensor {
        let mut t = SpectralTensor::zeros(self.n_max);
        for n in 0..=self.n_max {
            for l in 0..=n {
                let q = &radial[tri(n, l)];
                for m in -(l as i64)..=l as i64 {
                    let c = lm_index(l, m);
                    let mut acc = Complex64::new(0.0, 0.0);
                    for (i, (&qi, &wi)) in q.iter().zip(&self.radial_weights).enumerate() {
                        acc += angular[i * self.lm + c] * (qi * wi);
                    }
                    t.set(n, l, m, acc);
                }
            }
        }
        t
    }

    /// Accumulates the loss gradient on the sampled radial functions, given
    /// the gradient on the moments (as `∂/∂Re + i ∂/∂Im`).
    pub fn radial_grad(&self, angular: &[Complex64], grad_moments: &SpectralTensor, out: &mut [Vec<f64>]) {
        let nr = self.radii.len();
        for n in 0..=self.n_max {
            for l in 0..=n {
                let g = &mut out[tri(n, l)];
                for m in -(l as i64)..=l as i64 {
                    let gm = grad_moments.get(n, l, m);
                    if gm.re == 0.0 && gm.im == 0.0 {
                        continue;
                    }
                    let c = lm_index(l, m);
                    for i in 0..nr {
                        let a = angular[i * self.lm + c];
                        g[i] += self.radial_weights[i] * (gm.re * a.re + gm.im * a.im);
                    }
                }
            }
        }
    }

    /// Loss gradient on the angular coefficients.
    pub fn angular_grad(&self, radial: &[Vec<f64>], grad_moments: &SpectralTensor) -> Vec<Complex64> {
        let nr = self.radii.len();
        let mut out = vec![Complex64::new(0.0, 0.0); nr * self.lm];
        for n in 0..=self.n_max {
            for l in 0..=n {
                let q = &radial[tri(n, l)];
                for m in -(l as i64)..=l as i64 {
                    let gm = grad_moments.get(n, l, m);
                    let c = lm_index(l, m);
                    for i in 0..nr {
                        out[i * self.lm + c] += gm * (q[i] * self.radial_weights[i]);
                    }
                }
            }
        }
        out
    }

    /// Pulls a radial-function gradient back through the mixing recursion.
    pub fn mixing_grad(&self, weights: &MixingCoefficients, radial: &[Vec<f64>], mut grad_radial: Vec<Vec<f64>>) -> MixingCoefficients {
        let mut grad_w = MixingCoefficients::zeros(self.n_max);
        for n in (0..=self.n_max).rev() {
            for l in (0..=n).rev() {
                let gq = grad_radial[tri(n, l)].clone();
                for k in 0..n {
                    for m in 0..=k {
                        let prev = &radial[tri(k, m)];
                        let dot: f64 = gq.iter().zip(prev).map(|(a, b)| a * b).sum();
                        grad_w.set(n, l, k, m, -dot);
                        let w = weights.get(n, l, k, m);
                        if w != 0.0 {
                            for (x, &gv) in grad_radial[tri(k, m)].iter_mut().zip(&gq) {
                                *x -= w * gv;
                            }
                        }
                    }
                }
            }
        }
        grad_w
    }

    pub fn zero_radial(&self) -> Vec<Vec<f64>> {
        vec![vec![0.0; self.radii.len()]; crate::basis::radial_count(self.n_max)]
    }

    /// Gradient of a real loss w.r.t. every mixing weight, given the loss
    /// gradient on the moments.
    pub fn backward(
        &self,
        weights: &MixingCoefficients,
        radial: &[Vec<f64>],
        angular: &[Complex64],
        grad_moments: &SpectralTensor,
    ) -> MixingCoefficients {
        let mut g = self.zero_radial();
        self.radial_grad(angular, grad_moments, &mut g);
        self.mixing_grad(weights, radial, g)
    }
}
