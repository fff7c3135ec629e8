//! Independent oracles: exact rational Gram–Schmidt, Rodrigues' formula and
//! brute-force spherical quadrature.

use std::f64::consts::PI;

use bcs_core::basis::{orthogonalize, BaseMode};
use bcs_core::harmonics::{assoc_legendre, rotate_zonal, sph_harm_raw, AngularGrid};
use bcs_core::Complex64;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

type Poly = Vec<BigRational>;

fn q(n: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(n))
}

fn mul(a: &Poly, b: &Poly) -> Poly {
    let mut out = vec![BigRational::zero(); a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn axpy(a: &mut Poly, w: &BigRational, b: &Poly) {
    if a.len() < b.len() {
        a.resize(b.len(), BigRational::zero());
    }
    for (x, y) in a.iter_mut().zip(b) {
        *x -= w * y;
    }
}

/// `∫₀¹ p q r² dr` exactly.
fn inner(a: &Poly, b: &Poly) -> BigRational {
    mul(a, b)
        .iter()
        .enumerate()
        .fold(BigRational::zero(), |acc, (k, c)| acc + c / q(k as i64 + 3))
}

/// `(−1)^l n Σ_{k≤n} ((n−l) r)^k / k!` with exact coefficients.
fn truncated_base(n: usize, l: usize) -> Poly {
    let sign = if l % 2 == 0 { 1 } else { -1 };
    let mut term = BigRational::one();
    (0..=n)
        .map(|k| {
            if k > 0 {
                term = &term * q((n - l) as i64) / q(k as i64);
            }
            &term * q(sign * n as i64)
        })
        .collect()
}

#[test]
fn truncated_basis_matches_exact_rational_gram_schmidt() {
    let n_max = 5;
    let basis = orthogonalize(n_max, BaseMode::TruncatedSum).unwrap();
    for l in 0..=n_max {
        let mut done: Vec<Poly> = Vec::new();
        for n in l..=n_max {
            let mut p = truncated_base(n, l);
            for (k, qk) in (l..n).zip(&done) {
                if (k, l) == (0, 0) {
                    continue;
                }
                let c = inner(&truncated_base(n, l), qk) / inner(qk, qk);
                axpy(&mut p, &c, qk);
            }
            let scale = p.iter().map(|c| c.abs()).max().unwrap().to_f64().unwrap().max(1.0);
            let got = &basis.radial(n, l).coeffs;
            for (j, want) in p.iter().enumerate() {
                let w = want.to_f64().unwrap();
                let g = got.get(j).copied().unwrap_or(0.0);
                assert!((g - w).abs() <= 1e-9 * scale, "Q_{n}{l} coeff {j}: {g} vs {w}");
            }
            done.push(p);
        }
    }
}

/// `P_l^m(x) = (−1)^m (1−x²)^{m/2} dᵐ/dxᵐ P_l(x)` with
/// `P_l = 1/(2^l l!) dˡ/dxˡ (x²−1)^l`, differentiated exactly.
fn rodrigues(l: usize, m: usize, x: f64) -> f64 {
    let mut p: Poly = vec![q(1)];
    for _ in 0..l {
        p = mul(&p, &vec![q(-1), q(0), q(1)]);
    }
    let deriv = |p: &Poly| -> Poly { p.iter().enumerate().skip(1).map(|(k, c)| c * q(k as i64)).collect() };
    for _ in 0..(l + m) {
        p = deriv(&p);
    }
    let mut denom = q(1);
    for k in 1..=l {
        denom *= q(2 * k as i64);
    }
    let v = p.iter().rev().fold(0.0, |acc, c| acc * x + (c / &denom).to_f64().unwrap());
    let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
    sign * (1.0 - x * x).powf(m as f64 / 2.0) * v
}

#[test]
fn legendre_matches_rodrigues() {
    for l in 0..=5 {
        for m in 0..=l {
            for i in 0..=40 {
                let x = -1.0 + i as f64 / 20.0;
                let got = assoc_legendre(l, m, x).unwrap();
                let want = rodrigues(l, m, x);
                assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "P_{l}^{m}({x}): {got} vs {want}");
            }
        }
    }
}

#[test]
fn harmonics_orthonormal_on_product_grid() {
    let l_max = 6;
    let grid = AngularGrid::for_degree(l_max);
    let mut worst: f64 = 0.0;
    for l in 0..=l_max {
        for m in -(l as i64)..=l as i64 {
            for lp in 0..=l_max {
                for mp in -(lp as i64)..=lp as i64 {
                    let v = grid.integrate(|t, p| sph_harm_raw(l, m, t, p) * sph_harm_raw(lp, mp, t, p).conj());
                    let want = if (l, m) == (lp, mp) { 1.0 } else { 0.0 };
                    worst = worst.max((v - Complex64::new(want, 0.0)).norm());
                }
            }
        }
    }
    assert!(worst < 1e-8, "orthonormality residual {worst:e}");
}

#[test]
fn rotated_zonal_matches_pointwise_rotation() {
    // τ Y_l0 (u) = Y_l0(R⁻¹ u), with R carrying +z to (α, β).
    for l in 0..=5 {
        for &(alpha, beta) in &[(0.3, 0.7), (2.0, 2.5), (5.9, 0.05), (1.0, PI)] {
            let rot = rotate_zonal(l, alpha, beta).unwrap();
            let r = bcs_core::harmonics::pole_rotation(alpha, beta);
            for &(t, p) in &[(0.1, 0.2), (1.7, 1.1), (4.0, 2.9), (3.3, 1.57)] {
                let u = bcs_core::harmonics::direction(t, p);
                // Rᵀ u
                let v = [0, 1, 2].map(|i| (0..3).map(|k| r[k][i] * u[k]).sum::<f64>());
                let (tv, pv) = bcs_core::harmonics::angles_of(v);
                let want = sph_harm_raw(l, 0, tv, pv);
                let got = rot.eval(t, p);
                assert!((got - want).norm() < 1e-12, "l={l} at ({t},{p}): {got} vs {want}");
            }
        }
    }
}
