//! Published polynomial table for `Q_nl` up to `n = 5`, kept as cross-check
//! data. Coefficients are in ascending powers of `x`.
//!
//! The table does not agree with a direct evaluation of the base functions and
//! Gram–Schmidt recursion (for example the published `Q_10 = 1 + 2x`, whereas
//! `f_10 = 1 + x` has nothing to subtract). Entries are therefore compared, not
//! trusted: [`audit`] reports the per-entry difference against a derived basis.

use super::{BaseMode, BasisSet};

pub const TABLE: &[(usize, usize, &[f64])] = &[
    (0, 0, &[0.0]),
    (1, 0, &[1.0, 2.0]),
    (1, 1, &[-1.0, -1.0]),
    (2, 0, &[-9.79, -10.65, 9.0]),
    (2, 1, &[5.29, 6.29, -4.0]),
    (2, 2, &[-1.99, -3.63, 1.0]),
    (3, 0, &[-123.58, -158.11, 87.46, 32.0]),
    (3, 1, &[70.26, 89.41, -50.31, -13.5]),
    (3, 2, &[15.86, 22.27, -11.06, -0.5]),
    (3, 3, &[-768.81, -1006.25, 512.65, 139.10, 104.16]),
    (4, 0, &[-35.86, -46.15, 25.59, 4.0]),
    (4, 1, &[422.87, 550.70, -287.81, -73.52, -42.66]),
    (4, 2, &[-768.81, -1014.25, 480.65, 73.77, 13.5]),
    (4, 3, &[-776.81, -1034.25, 454.65, 50.43, -2.66]),
    (4, 4, &[-768.81, -1022.25, 464.65, 56.43, 0.16]),
    (5, 0, &[-3683.18, -4855.97, 2342.20, 509.59, 340.36, 324.0]),
    (5, 1, &[1960.80, 2578.79, -1263.64, -280.02, -167.77, -130.20]),
    (5, 2, &[-981.80, -1286.88, 643.53, 141.74, 72.23, 42.66]),
    (5, 3, &[463.12, 604.69, -309.13, -64.52, -25.87, -10.12]),
    (5, 4, &[-208.26, -272.17, 140.81, 25.87, 7.44, 1.33]),
    (5, 5, &[91.29, 122.33, -61.70, -9.53, -2.07, -0.04]),
];

/// Difference between one published entry and the derived polynomial.
#[derive(Debug, Clone, PartialEq)]
pub struct EntryDiff {
    pub n: usize,
    pub l: usize,
    pub table: Vec<f64>,
    pub derived: Vec<f64>,
    /// Largest absolute coefficient difference (missing coefficients read as 0).
    pub max_coeff_diff: f64,
    /// Largest absolute pointwise difference on 101 equispaced samples of `[0, 1]`.
    pub max_value_diff: f64,
}

impl EntryDiff {
    pub fn exact(&self) -> bool {
        self.max_coeff_diff == 0.0
    }
}

fn horner(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &v| acc * x + v)
}

/// Compares every table entry within the basis band limit against the
/// derived polynomial. The basis must be in truncated-sum mode, the only mode
/// whose atoms are monomials.
pub fn audit(basis: &BasisSet) -> Option<Vec<EntryDiff>> {
    if basis.mode() != BaseMode::TruncatedSum {
        return None;
    }
    let diffs = TABLE
        .iter()
        .filter(|(n, _, _)| *n <= basis.n_max())
        .map(|&(n, l, table)| {
            let derived = basis.radial(n, l).coeffs.clone();
            let len = table.len().max(derived.len());
            let at = |c: &[f64], i: usize| c.get(i).copied().unwrap_or(0.0);
            let max_coeff_diff = (0..len)
                .map(|i| (at(table, i) - at(&derived, i)).abs())
                .fold(0.0, f64::max);
            let max_value_diff = (0..=100)
                .map(|i| {
                    let x = i as f64 / 100.0;
                    (horner(table, x) - horner(&derived, x)).abs()
                })
                .fold(0.0, f64::max);
            EntryDiff {
                n,
                l,
                table: table.to_vec(),
                derived,
                max_coeff_diff,
                max_value_diff,
            }
        })
        .collect();
    Some(diffs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::orthogonalize;

    #[test]
    fn table_covers_every_index_once() {
        let mut seen = Vec::new();
        for &(n, l, _) in TABLE {
            assert!(l <= n && n <= 5);
            assert!(!seen.contains(&(n, l)));
            seen.push((n, l));
        }
        assert_eq!(seen.len(), 21);
    }

    #[test]
    fn q00_matches_exactly_and_q10_documented_mismatch() {
        let b = orthogonalize(5, BaseMode::TruncatedSum).unwrap();
        let diffs = audit(&b).unwrap();
        assert_eq!(diffs.len(), 21);
        assert!(diffs[0].exact());
        // published 1 + 2x against derived f_10 = 1 + x
        assert_eq!((diffs[1].n, diffs[1].l), (1, 0));
        assert_eq!(diffs[1].derived, vec![1.0, 1.0]);
        assert_eq!(diffs[1].max_coeff_diff, 1.0);
    }

    #[test]
    fn audit_needs_monomial_atoms() {
        let b = orthogonalize(2, BaseMode::Exponential).unwrap();
        assert!(audit(&b).is_none());
    }
}
