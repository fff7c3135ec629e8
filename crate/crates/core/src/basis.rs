//! Radial function family on `[0, 1]` orthogonal under the weight `r²`.
//!
//! Every element is stored as a dense coefficient vector over a fixed set of
//! atoms. In [`BaseMode::TruncatedSum`] the atoms are the monomials `r^j`; in
//! [`BaseMode::Exponential`] they are the exponentials `e^{jr}`, i.e. each
//! element is a polynomial in `e^r`. Index `j` runs over `0..=n`.
//!
//! The base functions come in groups that are linearly dependent across `l`
//! (for instance `f_{2,1} = -2 f_{1,0}` in exponential mode), so the weighted
//! Gram–Schmidt pass is carried out within each degree `l`: `Q_nl` is made
//! orthogonal to every `Q_kl` with `k < n`. Cross-degree orthogonality of the
//! full functions `Q_nl(r) Y_lm` is supplied by the spherical harmonics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quadrature::GaussLegendre;

pub mod appendix;

/// Squared norms below this value are treated as a degenerate element.
pub const DEGENERACY_THRESHOLD: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BasisError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("degenerate basis element Q_{n}{l}: squared norm {norm:e}")]
    Degenerate { n: usize, l: usize, norm: f64 },
    #[error("non-finite integrand at r = {r}")]
    NonFinite { r: f64 },
    #[error("operation requires exponential mode")]
    UnsupportedMode,
    #[error("quadrature: {0}")]
    Quadrature(#[from] crate::quadrature::QuadratureError),
    #[error("malformed basis document: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BaseMode {
    /// `(−1)^l n Σ_{k≤n} ((n−l) r)^k / k!`
    TruncatedSum,
    /// `(−1)^l n e^{(n−l) r}`
    #[default]
    Exponential,
}

impl std::fmt::Display for BaseMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BaseMode::TruncatedSum => f.write_str("truncated-sum"),
            BaseMode::Exponential => f.write_str("exponential"),
        }
    }
}

impl std::str::FromStr for BaseMode {
    type Err = BasisError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "truncated-sum" | "truncated_sum" | "truncatedsum" | "truncated" => {
                Ok(BaseMode::TruncatedSum)
            }
            "exponential" | "exp" => Ok(BaseMode::Exponential),
            other => Err(BasisError::Domain(format!("unknown base mode `{other}`"))),
        }
    }
}

fn check_index(n: usize, l: usize) -> Result<(), BasisError> {
    if l > n {
        return Err(BasisError::Domain(format!("index l = {l} exceeds n = {n}")));
    }
    Ok(())
}

fn sign(l: usize) -> f64 {
    if l % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Evaluates the base function `f_nl(r)`.
pub fn base_function(n: usize, l: usize, r: f64, mode: BaseMode) -> Result<f64, BasisError> {
    check_index(n, l)?;
    if !(0.0..=1.0).contains(&r) {
        return Err(BasisError::Domain(format!("radius {r} outside [0, 1]")));
    }
    Ok(RadialPolynomial::base(n, l, mode).eval(r))
}

/// One radial element as coefficients over the mode's atoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialPolynomial {
    pub n: usize,
    pub l: usize,
    pub mode: BaseMode,
    pub coeffs: Vec<f64>,
}

impl RadialPolynomial {
    pub fn zero(n: usize, l: usize, mode: BaseMode) -> Self {
        Self {
            n,
            l,
            mode,
            coeffs: vec![0.0; n + 1],
        }
    }

    /// The base function `f_nl` in atom coordinates.
    pub fn base(n: usize, l: usize, mode: BaseMode) -> Self {
        let mut out = Self::zero(n, l, mode);
        let scale = sign(l) * n as f64;
        let rate = (n - l) as f64;
        match mode {
            BaseMode::TruncatedSum => {
                // ((n−l)^k / k!) with 0^0 = 1
                let mut term = 1.0;
                for (k, c) in out.coeffs.iter_mut().enumerate() {
                    if k > 0 {
                        term *= rate / k as f64;
                    }
                    *c = scale * term;
                }
            }
            BaseMode::Exponential => {
                out.coeffs[n - l] = scale;
            }
        }
        out
    }

    pub fn eval(&self, r: f64) -> f64 {
        let t = match self.mode {
            BaseMode::TruncatedSum => r,
            BaseMode::Exponential => r.exp(),
        };
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * t + c)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0.0)
    }

    /// `self -= w * other`, widening the coefficient vector when needed.
    fn sub_scaled(&mut self, w: f64, other: &RadialPolynomial) {
        if self.coeffs.len() < other.coeffs.len() {
            self.coeffs.resize(other.coeffs.len(), 0.0);
        }
        for (c, &o) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *c -= w * o;
        }
    }

    /// Exact radial shift `r ↦ r + shift` as a new element in the same atoms.
    pub fn shifted(&self, shift: f64) -> RadialPolynomial {
        let mut out = self.clone();
        match self.mode {
            BaseMode::Exponential => {
                for (j, c) in out.coeffs.iter_mut().enumerate() {
                    *c *= (j as f64 * shift).exp();
                }
            }
            BaseMode::TruncatedSum => {
                // Taylor shift: Σ_j c_j (r+s)^j = Σ_i r^i Σ_{j≥i} c_j C(j,i) s^{j−i}
                let d = self.coeffs.len();
                let mut shifted = vec![0.0; d];
                for (j, &c) in self.coeffs.iter().enumerate() {
                    let mut binom = 1.0;
                    for i in (0..=j).rev() {
                        // binom = C(j, i) walking i downward from j
                        shifted[i] += c * binom * shift.powi((j - i) as i32);
                        binom *= i as f64 / (j - i + 1) as f64;
                    }
                }
                out.coeffs = shifted;
            }
        }
        out
    }
}

/// `∫₀¹ p(r) q(r) r² dr` on the given rule.
pub fn radial_inner_product<P, Q>(quad: &GaussLegendre, p: P, q: Q) -> Result<f64, BasisError>
where
    P: Fn(f64) -> f64,
    Q: Fn(f64) -> f64,
{
    let mut acc = 0.0;
    for (&r, &w) in quad.nodes().iter().zip(quad.weights()) {
        let v = p(r) * q(r);
        if !v.is_finite() {
            return Err(BasisError::NonFinite { r });
        }
        acc += w * v * r * r;
    }
    Ok(acc)
}

fn poly_inner(quad: &GaussLegendre, a: &RadialPolynomial, b: &RadialPolynomial) -> Result<f64, BasisError> {
    radial_inner_product(quad, |r| a.eval(r), |r| b.eval(r))
}

#[inline]
pub(crate) fn tri(n: usize, l: usize) -> usize {
    n * (n + 1) / 2 + l
}

/// Number of `(n, l)` pairs with `0 ≤ l ≤ n ≤ n_max`.
pub fn radial_count(n_max: usize) -> usize {
    (n_max + 1) * (n_max + 2) / 2
}

/// Mixing weights keyed by `(n, l, k, m)` with `0 ≤ m ≤ k < n`, `l ≤ n ≤ n_max`.
///
/// Holds the analytic Gram–Schmidt coefficients of a frozen basis as well as
/// trainable weights of a latent projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingCoefficients {
    n_max: usize,
    entries: Vec<f64>,
}

impl MixingCoefficients {
    pub fn zeros(n_max: usize) -> Self {
        Self {
            n_max,
            entries: vec![0.0; Self::key_count(n_max)],
        }
    }

    pub fn key_count(n_max: usize) -> usize {
        (0..=n_max).map(|n| (n + 1) * n * (n + 1) / 2).sum()
    }

    fn offset(n: usize, l: usize) -> usize {
        let block = |n: usize| n * (n + 1) / 2;
        (0..n).map(|p| (p + 1) * block(p)).sum::<usize>() + l * block(n)
    }

    pub fn index(&self, n: usize, l: usize, k: usize, m: usize) -> Option<usize> {
        if n > self.n_max || l > n || k >= n || m > k {
            return None;
        }
        Some(Self::offset(n, l) + tri(k, m))
    }

    pub fn get(&self, n: usize, l: usize, k: usize, m: usize) -> f64 {
        self.index(n, l, k, m).map_or(0.0, |i| self.entries[i])
    }

    pub fn set(&mut self, n: usize, l: usize, k: usize, m: usize, value: f64) {
        let i = self
            .index(n, l, k, m)
            .unwrap_or_else(|| panic!("invalid mixing key ({n}, {l}, {k}, {m})"));
        self.entries[i] = value;
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.entries
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.entries
    }

    /// Keys in storage order: `n`, `l`, `k`, `m` ascending.
    pub fn keys(&self) -> impl Iterator<Item = (usize, usize, usize, usize)> {
        let n_max = self.n_max;
        (0..=n_max).flat_map(|n| {
            (0..=n).flat_map(move |l| (0..n).flat_map(move |k| (0..=k).map(move |m| (n, l, k, m))))
        })
    }

    pub fn from_entries(n_max: usize, entries: Vec<f64>) -> Result<Self, BasisError> {
        if entries.len() != Self::key_count(n_max) {
            return Err(BasisError::Malformed(format!(
                "expected {} mixing entries for n_max = {n_max}, found {}",
                Self::key_count(n_max),
                entries.len()
            )));
        }
        Ok(Self { n_max, entries })
    }
}

/// Builds `Q̂_nl = f_nl − Σ_{k<n} Σ_{m≤k} W_nlkm Q̂_km` in atom coordinates.
pub fn synthesize(mixing: &MixingCoefficients, mode: BaseMode) -> Vec<RadialPolynomial> {
    let n_max = mixing.n_max();
    let mut out: Vec<RadialPolynomial> = Vec::with_capacity(radial_count(n_max));
    for n in 0..=n_max {
        for l in 0..=n {
            let mut q = RadialPolynomial::base(n, l, mode);
            for k in 0..n {
                for m in 0..=k {
                    let w = mixing.get(n, l, k, m);
                    q.sub_scaled(w, &out[tri(k, m)]);
                }
            }
            out.push(q);
        }
    }
    out
}

/// Samples `Q̂_nl` at `points` by running the mixing recursion on values.
///
/// Returned table is indexed `[tri(n, l)][point]`. Both the frozen and the
/// latent projections evaluate their radial factors through this routine, so
/// equal mixing tables give bit-identical samples.
pub fn radial_values(mixing: &MixingCoefficients, mode: BaseMode, points: &[f64]) -> Vec<Vec<f64>> {
    let n_max = mixing.n_max();
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(radial_count(n_max));
    for n in 0..=n_max {
        for l in 0..=n {
            let base = RadialPolynomial::base(n, l, mode);
            let mut v: Vec<f64> = points.iter().map(|&r| base.eval(r)).collect();
            for k in 0..n {
                for m in 0..=k {
                    let w = mixing.get(n, l, k, m);
                    let prev = &out[tri(k, m)];
                    for (x, &p) in v.iter_mut().zip(prev) {
                        *x -= w * p;
                    }
                }
            }
            out.push(v);
        }
    }
    out
}

/// A frozen orthogonal basis up to a band limit, with the tables the
/// convolution needs.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSet {
    n_max: usize,
    mode: BaseMode,
    quadrature_nodes: usize,
    radials: Vec<RadialPolynomial>,
    mixing: MixingCoefficients,
    /// `⟨f_nl, Q_n'l⟩`, dense over `(n, n', l)`.
    gram: Vec<f64>,
    /// `‖Q_nl‖²`, indexed by `tri(n, l)`.
    norms: Vec<f64>,
}

/// Orthogonalizes the base family up to `n_max` with the default 128-node rule.
pub fn orthogonalize(n_max: usize, mode: BaseMode) -> Result<BasisSet, BasisError> {
    orthogonalize_with(n_max, mode, &GaussLegendre::default())
}

pub fn orthogonalize_with(n_max: usize, mode: BaseMode, quad: &GaussLegendre) -> Result<BasisSet, BasisError> {
    let mut mixing = MixingCoefficients::zeros(n_max);
    let mut built: Vec<RadialPolynomial> = Vec::with_capacity(radial_count(n_max));
    let mut norms = Vec::with_capacity(radial_count(n_max));
    for n in 0..=n_max {
        for l in 0..=n {
            let f = RadialPolynomial::base(n, l, mode);
            // Modified Gram–Schmidt with one reorthogonalization pass; the
            // accumulated coefficients are the classical C up to rounding.
            let mut work = f.clone();
            for _ in 0..2 {
                for k in l..n {
                    if (k, l) == (0, 0) {
                        continue;
                    }
                    let qk = &built[tri(k, l)];
                    let c = poly_inner(quad, &work, qk)? / norms[tri(k, l)];
                    work.sub_scaled(c, qk);
                    mixing.set(n, l, k, l, mixing.get(n, l, k, l) + c);
                }
            }
            // Rebuild through the shared recursion so the stored element is
            // exactly what `synthesize` produces for these coefficients.
            let mut q = f;
            for k in 0..n {
                for m in 0..=k {
                    q.sub_scaled(mixing.get(n, l, k, m), &built[tri(k, m)]);
                }
            }
            let norm = poly_inner(quad, &q, &q)?;
            if (n, l) != (0, 0) && norm < DEGENERACY_THRESHOLD {
                return Err(BasisError::Degenerate { n, l, norm });
            }
            built.push(q);
            norms.push(norm);
        }
    }
    let dim = n_max + 1;
    let mut gram = vec![0.0; dim * dim * dim];
    for n in 0..=n_max {
        for np in 0..=n_max {
            for l in 0..=n.min(np) {
                let f = RadialPolynomial::base(n, l, mode);
                gram[(n * dim + np) * dim + l] = poly_inner(quad, &f, &built[tri(np, l)])?;
            }
        }
    }
    Ok(BasisSet {
        n_max,
        mode,
        quadrature_nodes: quad.len(),
        radials: built,
        mixing,
        gram,
        norms,
    })
}

impl BasisSet {
    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn mode(&self) -> BaseMode {
        self.mode
    }

    pub fn quadrature_nodes(&self) -> usize {
        self.quadrature_nodes
    }

    pub fn quadrature(&self) -> GaussLegendre {
        GaussLegendre::new(self.quadrature_nodes).expect("stored node count is positive")
    }

    pub fn radial(&self, n: usize, l: usize) -> &RadialPolynomial {
        &self.radials[tri(n, l)]
    }

    pub fn radials(&self) -> &[RadialPolynomial] {
        &self.radials
    }

    pub fn mixing(&self) -> &MixingCoefficients {
        &self.mixing
    }

    /// `‖Q_nl‖²` under the `r²` weight.
    pub fn norm(&self, n: usize, l: usize) -> f64 {
        self.norms[tri(n, l)]
    }

    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    /// `⟨f_nl, Q_n'l⟩`; zero outside `l ≤ min(n, n')`.
    pub fn gram(&self, n: usize, n_prime: usize, l: usize) -> f64 {
        let dim = self.n_max + 1;
        if n > self.n_max || n_prime > self.n_max || l > n.min(n_prime) {
            return 0.0;
        }
        self.gram[(n * dim + n_prime) * dim + l]
    }

    pub fn gram_table(&self) -> &[f64] {
        &self.gram
    }

    /// Short identifier recorded in convolution provenance.
    pub fn id(&self) -> String {
        format!("bcs-basis/n{}/{}/q{}", self.n_max, self.mode, self.quadrature_nodes)
    }

    /// Inner product of two stored elements on the basis quadrature.
    pub fn inner(&self, a: (usize, usize), b: (usize, usize)) -> Result<f64, BasisError> {
        let quad = self.quadrature();
        poly_inner(&quad, self.radial(a.0, a.1), self.radial(b.0, b.1))
    }

    /// Largest `|⟨Q_nl, Q_n'l'⟩|` over distinct pairs, split by whether `l = l'`.
    pub fn orthogonality_residuals(&self) -> Result<OrthogonalityReport, BasisError> {
        let quad = self.quadrature();
        let mut report = OrthogonalityReport::default();
        let idx: Vec<(usize, usize)> = (0..=self.n_max).flat_map(|n| (0..=n).map(move |l| (n, l))).collect();
        for (i, &a) in idx.iter().enumerate() {
            for &b in &idx[i + 1..] {
                let v = poly_inner(&quad, self.radial(a.0, a.1), self.radial(b.0, b.1))?.abs();
                if a.1 == b.1 {
                    if v > report.same_degree {
                        report.same_degree = v;
                        report.same_degree_pair = Some((a, b));
                    }
                } else if v > report.cross_degree {
                    report.cross_degree = v;
                    report.cross_degree_pair = Some((a, b));
                }
            }
        }
        Ok(report)
    }

    pub fn to_document(&self) -> BasisDocument {
        BasisDocument {
            n_max: self.n_max,
            mode: self.mode,
            quadrature_nodes: self.quadrature_nodes,
            radials: self.radials.iter().map(|q| q.coeffs.clone()).collect(),
            mixing: self.mixing.as_slice().to_vec(),
            gram: self.gram.clone(),
            norms: self.norms.clone(),
        }
    }

    pub fn from_document(doc: BasisDocument) -> Result<Self, BasisError> {
        let n_max = doc.n_max;
        let count = radial_count(n_max);
        if doc.radials.len() != count || doc.norms.len() != count {
            return Err(BasisError::Malformed(format!(
                "expected {count} radial entries for n_max = {n_max}"
            )));
        }
        let dim = n_max + 1;
        if doc.gram.len() != dim * dim * dim {
            return Err(BasisError::Malformed("gram table has wrong size".into()));
        }
        if doc.quadrature_nodes == 0 {
            return Err(BasisError::Malformed("quadrature_nodes must be positive".into()));
        }
        let mut radials = Vec::with_capacity(count);
        let mut it = doc.radials.into_iter();
        for n in 0..=n_max {
            for l in 0..=n {
                let coeffs = it.next().expect("length checked");
                if coeffs.len() != n + 1 {
                    return Err(BasisError::Malformed(format!(
                        "Q_{n}{l} needs {} coefficients, found {}",
                        n + 1,
                        coeffs.len()
                    )));
                }
                radials.push(RadialPolynomial {
                    n,
                    l,
                    mode: doc.mode,
                    coeffs,
                });
            }
        }
        Ok(Self {
            n_max,
            mode: doc.mode,
            quadrature_nodes: doc.quadrature_nodes,
            radials,
            mixing: MixingCoefficients::from_entries(n_max, doc.mixing)?,
            gram: doc.gram,
            norms: doc.norms,
        })
    }
}

/// Persisted form of a [`BasisSet`]: dense arrays in `(n, l)` / `(n, l, k, m)` /
/// `(n, n', l)` row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisDocument {
    pub n_max: usize,
    pub mode: BaseMode,
    pub quadrature_nodes: usize,
    pub radials: Vec<Vec<f64>>,
    pub mixing: Vec<f64>,
    pub gram: Vec<f64>,
    pub norms: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct OrthogonalityReport {
    pub same_degree: f64,
    pub same_degree_pair: Option<((usize, usize), (usize, usize))>,
    pub cross_degree: f64,
    pub cross_degree_pair: Option<((usize, usize), (usize, usize))>,
}

/// Expansion of `Q_nl(r + r')` against `f_nl` and the lower `Q_km`:
/// `e^{(n−l) r'} f_nl(r) − Σ C_nlkm e^{(k−m) r'} Q_km(r)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TranslationExpansion {
    pub n: usize,
    pub l: usize,
    pub r_shift: f64,
    pub base_coeff: f64,
    /// `((k, m), coefficient on Q_km)`
    pub terms: Vec<((usize, usize), f64)>,
}

impl TranslationExpansion {
    pub fn eval(&self, basis: &BasisSet, r: f64) -> f64 {
        let f = RadialPolynomial::base(self.n, self.l, basis.mode());
        self.terms
            .iter()
            .fold(self.base_coeff * f.eval(r), |acc, &((k, m), c)| {
                acc + c * basis.radial(k, m).eval(r)
            })
    }
}

pub fn translate_radial(basis: &BasisSet, n: usize, l: usize, r_shift: f64) -> Result<TranslationExpansion, BasisError> {
    check_index(n, l)?;
    if n > basis.n_max() {
        return Err(BasisError::Domain(format!("n = {n} exceeds band limit {}", basis.n_max())));
    }
    if basis.mode() != BaseMode::Exponential {
        return Err(BasisError::UnsupportedMode);
    }
    let mut terms = Vec::new();
    for k in 0..n {
        for m in 0..=k {
            let c = basis.mixing().get(n, l, k, m);
            if c != 0.0 {
                terms.push(((k, m), -c * ((k - m) as f64 * r_shift).exp()));
            }
        }
    }
    Ok(TranslationExpansion {
        n,
        l,
        r_shift,
        base_coeff: ((n - l) as f64 * r_shift).exp(),
        terms,
    })
}

/// Closed-form value used by the blended convolution for
/// `⟨Q_nl(· + r'), Q_n'l⟩`: `⟨f_nl, Q_n'l⟩ (e^{(n−l) r'} − e^{(n'−l) r'})`.
pub fn translated_inner_product_closed_form(basis: &BasisSet, n: usize, n_prime: usize, l: usize, r_shift: f64) -> f64 {
    let a = ((n - l) as f64 * r_shift).exp();
    let b = ((n_prime - l) as f64 * r_shift).exp();
    basis.gram(n, n_prime, l) * (a - b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_function_examples() {
        for mode in [BaseMode::TruncatedSum, BaseMode::Exponential] {
            assert_eq!(base_function(0, 0, 0.7, mode).unwrap(), 0.0);
        }
        assert_eq!(base_function(1, 1, 0.5, BaseMode::TruncatedSum).unwrap(), -1.0);
        assert!((base_function(1, 0, 0.5, BaseMode::TruncatedSum).unwrap() - 1.5).abs() < 1e-15);
        let e = base_function(1, 0, 0.5, BaseMode::Exponential).unwrap();
        assert!((e - 0.5f64.exp()).abs() < 1e-15);
        assert!((e - 1.648_721_270_700_128).abs() < 1e-14);
    }

    #[test]
    fn base_function_diagonal_is_constant() {
        for n in 0..6 {
            let want = sign(n) * n as f64;
            for r in [0.0, 0.3, 1.0] {
                assert_eq!(base_function(n, n, r, BaseMode::TruncatedSum).unwrap(), want);
                assert_eq!(base_function(n, n, r, BaseMode::Exponential).unwrap(), want);
            }
        }
    }

    #[test]
    fn base_function_domain_errors() {
        assert!(matches!(base_function(1, 2, 0.5, BaseMode::Exponential), Err(BasisError::Domain(_))));
        assert!(matches!(base_function(2, 1, 1.5, BaseMode::Exponential), Err(BasisError::Domain(_))));
        assert!(matches!(base_function(2, 1, -0.1, BaseMode::TruncatedSum), Err(BasisError::Domain(_))));
    }

    #[test]
    fn inner_product_examples() {
        let q = GaussLegendre::default();
        let one = radial_inner_product(&q, |_| 1.0, |_| 1.0).unwrap();
        assert!((one - 1.0 / 3.0).abs() < 1e-15);
        let rr = radial_inner_product(&q, |r| r, |r| r).unwrap();
        assert!((rr - 0.2).abs() < 1e-15);
    }

    #[test]
    fn inner_product_reports_non_finite() {
        let q = GaussLegendre::new(8).unwrap();
        let err = radial_inner_product(&q, |r| 1.0 / (r - q.nodes()[3]), |_| 1.0).unwrap_err();
        assert_eq!(err, BasisError::NonFinite { r: q.nodes()[3] });
    }

    #[test]
    fn q00_is_zero_and_norms_positive() {
        for mode in [BaseMode::TruncatedSum, BaseMode::Exponential] {
            let b = orthogonalize(5, mode).unwrap();
            assert!(b.radial(0, 0).is_zero());
            assert_eq!(b.norm(0, 0), 0.0);
            for n in 1..=5 {
                for l in 0..=n {
                    assert!(b.norm(n, l) > 0.0, "{mode} Q_{n}{l}");
                }
            }
        }
    }

    #[test]
    fn first_degree_elements_are_bare_base_functions() {
        for mode in [BaseMode::TruncatedSum, BaseMode::Exponential] {
            let b = orthogonalize(1, mode).unwrap();
            for (n, l) in [(1, 0), (1, 1)] {
                let f = RadialPolynomial::base(n, l, mode);
                assert_eq!(b.radial(n, l).coeffs, f.coeffs);
            }
        }
    }

    #[test]
    fn same_degree_orthogonality_up_to_six() {
        for mode in [BaseMode::TruncatedSum, BaseMode::Exponential] {
            for n_max in 1..=6 {
                let rep = orthogonalize(n_max, mode).unwrap().orthogonality_residuals().unwrap();
                assert!(rep.same_degree <= 1e-9, "{mode} n_max={n_max}: {rep:?}");
            }
        }
    }

    #[test]
    fn n_max_zero_holds_only_the_zero_element() {
        let b = orthogonalize(0, BaseMode::Exponential).unwrap();
        assert_eq!(b.radials().len(), 1);
        assert!(b.radial(0, 0).is_zero());
        assert_eq!(b.orthogonality_residuals().unwrap().same_degree, 0.0);
    }

    #[test]
    fn mixing_keys_cover_storage() {
        let w = MixingCoefficients::zeros(5);
        let keys: Vec<_> = w.keys().collect();
        assert_eq!(keys.len(), w.len());
        assert_eq!(w.len(), 175);
        for (i, (n, l, k, m)) in keys.into_iter().enumerate() {
            assert_eq!(w.index(n, l, k, m), Some(i));
        }
        assert_eq!(w.index(2, 0, 2, 0), None);
        assert_eq!(w.index(2, 3, 1, 0), None);
    }

    #[test]
    fn analytic_mixing_only_within_degree() {
        let b = orthogonalize(4, BaseMode::Exponential).unwrap();
        for (n, l, k, m) in b.mixing().keys() {
            let c = b.mixing().get(n, l, k, m);
            if m != l || (k, m) == (0, 0) {
                assert_eq!(c, 0.0);
            } else {
                let want = b.gram(n, k, l) / b.norm(k, l);
                assert!((c - want).abs() <= 1e-12 * want.abs().max(1.0));
            }
        }
    }

    #[test]
    fn synthesize_reproduces_stored_radials() {
        let b = orthogonalize(5, BaseMode::TruncatedSum).unwrap();
        let s = synthesize(b.mixing(), b.mode());
        assert_eq!(s.as_slice(), b.radials());
    }

    #[test]
    fn gram_is_zero_above_diagonal() {
        let b = orthogonalize(5, BaseMode::Exponential).unwrap();
        for n in 0..=5 {
            for np in n + 1..=5 {
                for l in 0..=n {
                    let scale = b.norm(np, l).sqrt() * 1e3;
                    assert!(b.gram(n, np, l).abs() < 1e-9 * scale, "({n},{np},{l})");
                }
            }
        }
    }

    #[test]
    fn gram_table_matches_fresh_quadrature() {
        let b = orthogonalize(5, BaseMode::Exponential).unwrap();
        let q = GaussLegendre::default();
        for n in 0..=5 {
            for np in 0..=5 {
                for l in 0..=n.min(np) {
                    let f = RadialPolynomial::base(n, l, b.mode());
                    let v = poly_inner(&q, &f, b.radial(np, l)).unwrap();
                    assert!((v - b.gram(n, np, l)).abs() <= 1e-10);
                }
            }
        }
    }

    #[test]
    fn shifted_matches_pointwise_evaluation() {
        for mode in [BaseMode::TruncatedSum, BaseMode::Exponential] {
            let b = orthogonalize(5, mode).unwrap();
            for q in b.radials() {
                let s = q.shifted(0.3);
                for i in 0..=20 {
                    let r = 0.7 * i as f64 / 20.0;
                    let want = q.eval(r + 0.3);
                    assert!((s.eval(r) - want).abs() <= 1e-10 * want.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn translation_at_zero_shift_is_identity_pattern() {
        let b = orthogonalize(5, BaseMode::Exponential).unwrap();
        let t = translate_radial(&b, 4, 1, 0.0).unwrap();
        assert_eq!(t.base_coeff, 1.0);
        for &((k, m), c) in &t.terms {
            assert_eq!(c, -b.mixing().get(4, 1, k, m));
        }
        for i in 0..=10 {
            let r = i as f64 / 10.0;
            let want = b.radial(4, 1).eval(r);
            assert!((t.eval(&b, r) - want).abs() < 1e-10 * want.abs().max(1.0));
        }
    }

    #[test]
    fn translation_expansion_exact_on_single_exponential_chains() {
        // Exact whenever every referenced Q_km is a single exponential atom.
        let b = orthogonalize(5, BaseMode::Exponential).unwrap();
        for (n, l) in [(1, 0), (1, 1), (2, 0), (2, 2)] {
            let t = translate_radial(&b, n, l, 0.2).unwrap();
            for i in 0..=16 {
                let r = 0.8 * i as f64 / 16.0;
                let want = b.radial(n, l).eval(r + 0.2);
                assert!((t.eval(&b, r) - want).abs() < 1e-10 * want.abs().max(1.0), "Q_{n}{l}");
            }
        }
    }

    #[test]
    fn translation_rejects_truncated_mode() {
        let b = orthogonalize(3, BaseMode::TruncatedSum).unwrap();
        assert_eq!(translate_radial(&b, 2, 1, 0.1), Err(BasisError::UnsupportedMode));
    }

    #[test]
    fn document_round_trip() {
        let b = orthogonalize(4, BaseMode::Exponential).unwrap();
        let back = BasisSet::from_document(b.to_document()).unwrap();
        assert_eq!(back, b);
    }

    #[test]
    fn malformed_document_rejected() {
        let mut doc = orthogonalize(2, BaseMode::Exponential).unwrap().to_document();
        doc.radials[3].push(1.0);
        assert!(matches!(BasisSet::from_document(doc), Err(BasisError::Malformed(_))));
    }
}
