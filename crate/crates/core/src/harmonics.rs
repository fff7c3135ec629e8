//! Associated Legendre functions, complex spherical harmonics and the zonal
//! rotation used by the blended convolution.
//!
//! Conventions: `theta` is the azimuth in `[0, 2π)`, `phi` the polar angle in
//! `[0, π]` measured from the `+z` pole. `P_l^m` carries the Condon–Shortley
//! phase and `Y_lm` carries a second `(−1)^m`, so for `m ≥ 0`
//!
//! `Y_lm(θ, φ) = (−1)^m √((2l+1)/4π · (l−m)!/(l+m)!) P_l^m(cos φ) e^{imθ}`
//!
//! and negative orders follow `Y_{l,−m} = (−1)^m conj(Y_lm)`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest degree supported without overflow in the normalization.
pub const MAX_DEGREE: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarmonicsError {
    #[error("domain error: {0}")]
    Domain(String),
}

/// Degree/order pair with `|m| ≤ l`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AngularIndex {
    pub l: usize,
    pub m: i64,
}

impl AngularIndex {
    pub fn new(l: usize, m: i64) -> Result<Self, HarmonicsError> {
        if m.unsigned_abs() as usize > l {
            return Err(HarmonicsError::Domain(format!("|m| = {} exceeds l = {l}", m.abs())));
        }
        if l > MAX_DEGREE {
            return Err(HarmonicsError::Domain(format!("degree {l} exceeds {MAX_DEGREE}")));
        }
        Ok(Self { l, m })
    }
}

/// Flat index of `(l, m)` in tables that list `m = −l..=l` for each `l`.
#[inline]
pub fn lm_index(l: usize, m: i64) -> usize {
    (l * l) as usize + (l as i64 + m) as usize
}

/// `P_l^m(x)` with the Condon–Shortley phase, by upward recurrence in `l`.
pub fn assoc_legendre(l: usize, m: usize, x: f64) -> Result<f64, HarmonicsError> {
    if m > l {
        return Err(HarmonicsError::Domain(format!("order {m} exceeds degree {l}")));
    }
    if !(-1.0..=1.0).contains(&x) {
        return Err(HarmonicsError::Domain(format!("argument {x} outside [-1, 1]")));
    }
    Ok(legendre_unchecked(l, m, x))
}

fn legendre_unchecked(l: usize, m: usize, x: f64) -> f64 {
    // P_m^m = (−1)^m (2m−1)!! (1−x²)^{m/2}
    let s = (1.0 - x * x).max(0.0).sqrt();
    let mut pmm = 1.0;
    for i in 0..m {
        pmm *= -((2 * i + 1) as f64) * s;
    }
    if l == m {
        return pmm;
    }
    let mut pm1 = x * (2 * m + 1) as f64 * pmm;
    if l == m + 1 {
        return pm1;
    }
    let mut pm0 = pmm;
    for ll in m + 2..=l {
        let p = ((2 * ll - 1) as f64 * x * pm1 - (ll + m - 1) as f64 * pm0) / (ll - m) as f64;
        pm0 = pm1;
        pm1 = p;
    }
    pm1
}

/// `√((2l+1)/4π · (l−m)!/(l+m)!)` for `m ≥ 0`.
fn normalization(l: usize, m: usize) -> f64 {
    let mut ratio = 1.0;
    for k in (l - m + 1)..=(l + m) {
        ratio /= k as f64;
    }
    ((2 * l + 1) as f64 / (4.0 * PI) * ratio).sqrt()
}

fn sph_harm_nonneg(l: usize, m: usize, theta: f64, phi: f64) -> Complex64 {
    let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
    let amp = sign * normalization(l, m) * legendre_unchecked(l, m, phi.cos());
    Complex64::from_polar(1.0, m as f64 * theta) * amp
}

/// `Y_lm(θ, φ)`.
pub fn sph_harm(idx: AngularIndex, theta: f64, phi: f64) -> Result<Complex64, HarmonicsError> {
    if !(0.0..=PI).contains(&phi) {
        return Err(HarmonicsError::Domain(format!("polar angle {phi} outside [0, π]")));
    }
    if !(0.0..2.0 * PI).contains(&theta) {
        return Err(HarmonicsError::Domain(format!("azimuth {theta} outside [0, 2π)")));
    }
    let idx = AngularIndex::new(idx.l, idx.m)?;
    Ok(sph_harm_raw(idx.l, idx.m, theta, phi))
}

/// [`sph_harm`] without range checks; any real angles are accepted.
pub fn sph_harm_raw(l: usize, m: i64, theta: f64, phi: f64) -> Complex64 {
    let am = m.unsigned_abs() as usize;
    let y = sph_harm_nonneg(l, am, theta, phi);
    if m >= 0 {
        y
    } else if am % 2 == 0 {
        y.conj()
    } else {
        -y.conj()
    }
}

/// All `Y_lm(θ, φ)` for `l ≤ l_max`, laid out by [`lm_index`].
pub fn sph_harm_table(l_max: usize, theta: f64, phi: f64) -> Vec<Complex64> {
    let x = phi.cos();
    let mut out = vec![Complex64::new(0.0, 0.0); (l_max + 1) * (l_max + 1)];
    for m in 0..=l_max {
        let e = Complex64::from_polar(1.0, m as f64 * theta);
        let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
        for l in m..=l_max {
            let y = e * (sign * normalization(l, m) * legendre_unchecked(l, m, x));
            out[lm_index(l, m as i64)] = y;
            if m > 0 {
                out[lm_index(l, -(m as i64))] = y.conj() * sign;
            }
        }
    }
    out
}

/// Expansion of the rotated zonal harmonic `τ_(α,β) Y_l0` over `Y_{l,m''}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZonalRotation {
    pub l: usize,
    pub alpha: f64,
    pub beta: f64,
    /// Coefficients for `m'' = −l..=l`.
    pub coeffs: Vec<Complex64>,
}

impl ZonalRotation {
    pub fn coeff(&self, m: i64) -> Complex64 {
        self.coeffs[(self.l as i64 + m) as usize]
    }

    /// Evaluates `Σ c_m'' Y_{l,m''}(θ, φ)`.
    pub fn eval(&self, theta: f64, phi: f64) -> Complex64 {
        let l = self.l as i64;
        (-l..=l)
            .map(|m| self.coeff(m) * sph_harm_raw(self.l, m, theta, phi))
            .sum()
    }
}

/// Coefficients `c_m'' = √(4π/(2l+1)) conj(Y_{l,m''}(α, β))` of the zonal
/// harmonic rotated so its pole points along `(α, β)`.
pub fn rotate_zonal(l: usize, alpha: f64, beta: f64) -> Result<ZonalRotation, HarmonicsError> {
    if !(0.0..2.0 * PI).contains(&alpha) {
        return Err(HarmonicsError::Domain(format!("azimuth {alpha} outside [0, 2π)")));
    }
    if !(0.0..=PI).contains(&beta) {
        return Err(HarmonicsError::Domain(format!("polar angle {beta} outside [0, π]")));
    }
    if l > MAX_DEGREE {
        return Err(HarmonicsError::Domain(format!("degree {l} exceeds {MAX_DEGREE}")));
    }
    let scale = (4.0 * PI / (2 * l + 1) as f64).sqrt();
    let li = l as i64;
    let coeffs = (-li..=li)
        .map(|m| sph_harm_raw(l, m, alpha, beta).conj() * scale)
        .collect();
    Ok(ZonalRotation { l, alpha, beta, coeffs })
}

/// Rotation `R_z(α) R_y(β)`, which carries the `+z` pole to direction `(α, β)`.
pub fn pole_rotation(alpha: f64, beta: f64) -> [[f64; 3]; 3] {
    let (sa, ca) = alpha.sin_cos();
    let (sb, cb) = beta.sin_cos();
    [
        [ca * cb, -sa, ca * sb],
        [sa * cb, ca, sa * sb],
        [-sb, 0.0, cb],
    ]
}

/// Cartesian unit vector for azimuth `theta`, polar angle `phi`.
pub fn direction(theta: f64, phi: f64) -> [f64; 3] {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    [sp * ct, sp * st, cp]
}

/// `(θ ∈ [0, 2π), φ ∈ [0, π])` of a nonzero vector.
pub fn angles_of(v: [f64; 3]) -> (f64, f64) {
    let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if r == 0.0 {
        return (0.0, 0.0);
    }
    let phi = (v[2] / r).clamp(-1.0, 1.0).acos();
    let mut theta = v[1].atan2(v[0]);
    if theta < 0.0 {
        theta += 2.0 * PI;
    }
    if theta >= 2.0 * PI {
        theta = 0.0;
    }
    (theta, phi)
}

/// Equiangular product rule on the sphere: midpoints in both angles, Fejér
/// weights in the polar direction (these play the role of `sin φ Δφ` and
/// integrate polynomials in `cos φ` of degree `< n_phi` exactly).
#[derive(Debug, Clone, PartialEq)]
pub struct AngularGrid {
    pub thetas: Vec<f64>,
    pub phis: Vec<f64>,
    /// Polar weights, already including `sin φ`.
    pub phi_weights: Vec<f64>,
    pub theta_weight: f64,
}

impl AngularGrid {
    pub fn new(n_theta: usize, n_phi: usize) -> Self {
        let thetas = (0..n_theta)
            .map(|j| 2.0 * PI * (j as f64 + 0.5) / n_theta as f64)
            .collect();
        let phis: Vec<f64> = (0..n_phi).map(|k| PI * (k as f64 + 0.5) / n_phi as f64).collect();
        let phi_weights = phis
            .iter()
            .map(|&p| {
                let mut s = 0.0;
                for j in 1..=n_phi / 2 {
                    let jf = j as f64;
                    s += (2.0 * jf * p).cos() / (4.0 * jf * jf - 1.0);
                }
                2.0 / n_phi as f64 * (1.0 - 2.0 * s)
            })
            .collect();
        Self {
            thetas,
            phis,
            phi_weights,
            theta_weight: 2.0 * PI / n_theta as f64,
        }
    }

    /// Smallest grid meeting the `2(l_max+1) × 4(l_max+1)` sizing rule.
    pub fn for_degree(l_max: usize) -> Self {
        Self::new(4 * (l_max + 1), 2 * (l_max + 1))
    }

    pub fn integrate<F: FnMut(f64, f64) -> Complex64>(&self, mut f: F) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for (&p, &w) in self.phis.iter().zip(&self.phi_weights) {
            for &t in &self.thetas {
                acc += f(t, p) * (w * self.theta_weight);
            }
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_examples() {
        assert_eq!(assoc_legendre(0, 0, 0.3).unwrap(), 1.0);
        assert_eq!(assoc_legendre(1, 0, 0.3).unwrap(), 0.3);
        let v = assoc_legendre(1, 1, 0.5).unwrap();
        assert!((v + 0.75f64.sqrt()).abs() < 1e-15);
        assert!((v + 0.866_025_403_784_438_6).abs() < 1e-15);
    }

    #[test]
    fn legendre_domain_errors() {
        assert!(assoc_legendre(1, 2, 0.0).is_err());
        assert!(assoc_legendre(2, 1, 1.1).is_err());
    }

    #[test]
    fn sph_harm_examples() {
        let y00 = sph_harm(AngularIndex::new(0, 0).unwrap(), 1.2, 2.1).unwrap();
        assert!((y00.re - 0.5 / PI.sqrt()).abs() < 1e-15 && y00.im == 0.0);
        assert!((y00.re - 0.282_094_8).abs() < 1e-7);
        let y10 = sph_harm(AngularIndex::new(1, 0).unwrap(), 0.4, PI / 3.0).unwrap();
        assert!((y10.re - (3.0 / (4.0 * PI)).sqrt() * 0.5).abs() < 1e-15);
        assert!((y10.re - 0.244_301_3).abs() < 1e-7);
    }

    #[test]
    fn sph_harm_domain_errors() {
        assert!(AngularIndex::new(1, 2).is_err());
        let i = AngularIndex::new(2, 1).unwrap();
        assert!(sph_harm(i, 7.0, 0.1).is_err());
        assert!(sph_harm(i, 0.1, -0.1).is_err());
    }

    #[test]
    fn high_degree_stays_finite() {
        let i = AngularIndex::new(64, 64).unwrap();
        let y = sph_harm(i, 0.3, PI / 2.0).unwrap();
        assert!(y.re.is_finite() && y.im.is_finite() && y.norm() > 0.0);
        let i = AngularIndex::new(64, -37).unwrap();
        assert!(sph_harm(i, 0.3, 1.0).unwrap().norm().is_finite());
    }

    #[test]
    fn conjugation_identity() {
        for l in 0..=6usize {
            for m in 1..=l as i64 {
                for &(t, p) in &[(0.3, 0.7), (2.0, 2.5), (5.9, 0.05)] {
                    let a = sph_harm_raw(l, -m, t, p);
                    let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
                    let b = sph_harm_raw(l, m, t, p).conj() * sign;
                    assert!((a - b).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn table_matches_pointwise() {
        let t = sph_harm_table(6, 1.1, 0.9);
        for l in 0..=6usize {
            for m in -(l as i64)..=l as i64 {
                assert!((t[lm_index(l, m)] - sph_harm_raw(l, m, 1.1, 0.9)).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn identity_rotation_is_delta() {
        for l in 0..=5 {
            let z = rotate_zonal(l, 0.0, 0.0).unwrap();
            for m in -(l as i64)..=l as i64 {
                let want = if m == 0 { 1.0 } else { 0.0 };
                assert!((z.coeff(m) - Complex64::new(want, 0.0)).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn rotation_is_unitary() {
        for l in 0..=6 {
            let z = rotate_zonal(l, 1.3, 2.2).unwrap();
            let s: f64 = z.coeffs.iter().map(|c| c.norm_sqr()).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rotation_rejects_bad_angles() {
        assert!(rotate_zonal(2, 7.0, 0.0).is_err());
        assert!(rotate_zonal(2, 0.0, 4.0).is_err());
    }

    #[test]
    fn pole_rotation_carries_pole() {
        let r = pole_rotation(0.8, 1.9);
        let z = [r[0][2], r[1][2], r[2][2]];
        let d = direction(0.8, 1.9);
        for i in 0..3 {
            assert!((z[i] - d[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn fejer_weights_integrate_sphere_area() {
        let g = AngularGrid::for_degree(6);
        let a = g.integrate(|_, _| Complex64::new(1.0, 0.0));
        assert!((a.re - 4.0 * PI).abs() < 1e-12);
    }
}
