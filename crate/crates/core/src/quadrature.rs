//! Gauss–Legendre quadrature mapped to the unit interval.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadratureError {
    #[error("quadrature needs at least one node")]
    NoNodes,
}

/// Gauss–Legendre nodes and weights on `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// Node count used for all radial integrals unless configured otherwise.
    pub const DEFAULT_NODES: usize = 128;

    pub fn new(n: usize) -> Result<Self, QuadratureError> {
        if n == 0 {
            return Err(QuadratureError::NoNodes);
        }
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        // Roots are symmetric; solve for the upper half with Newton from the
        // Chebyshev-like initial guess and mirror.
        for i in 0..n.div_ceil(2) {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            // map [-1, 1] -> [0, 1]
            nodes[i] = 0.5 * (1.0 - x);
            nodes[n - 1 - i] = 0.5 * (1.0 + x);
            weights[i] = 0.5 * w;
            weights[n - 1 - i] = 0.5 * w;
        }
        Ok(Self { nodes, weights })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

impl Default for GaussLegendre {
    fn default() -> Self {
        Self::new(Self::DEFAULT_NODES).expect("nonzero node count")
    }
}

/// Three-term recurrence for `P_n(x)` and `P_n'(x)`.
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_nodes_rejected() {
        assert_eq!(GaussLegendre::new(0), Err(QuadratureError::NoNodes));
    }

    #[test]
    fn weights_sum_to_interval_length() {
        for n in [1, 2, 7, 64, 128] {
            let q = GaussLegendre::new(n).unwrap();
            let s: f64 = q.weights().iter().sum();
            assert!((s - 1.0).abs() < 1e-13, "n={n} sum={s}");
        }
    }

    #[test]
    fn exact_for_high_degree_monomials() {
        let q = GaussLegendre::default();
        for d in [0, 1, 2, 5, 20, 100, 200] {
            let got = q.integrate(|x| x.powi(d));
            let want = 1.0 / (d as f64 + 1.0);
            assert!((got - want).abs() < 1e-14, "degree {d}: {got} vs {want}");
        }
    }

    #[test]
    fn exponential_integral() {
        let q = GaussLegendre::default();
        let got = q.integrate(|x| x * x * (3.0 * x).exp());
        // ∫ r² e^{3r} = e^3 (1/3 - 2/9 + 2/27) - 2/27
        let e3 = 3f64.exp();
        let want = e3 * (1.0 / 3.0 - 2.0 / 9.0 + 2.0 / 27.0) - 2.0 / 27.0;
        assert!((got - want).abs() < 1e-13 * want);
    }

    #[test]
    fn nodes_sorted_inside_interval() {
        let q = GaussLegendre::new(33).unwrap();
        assert!(q.nodes().windows(2).all(|w| w[0] < w[1]));
        assert!(q.nodes()[0] > 0.0 && q.nodes()[32] < 1.0);
    }
}
