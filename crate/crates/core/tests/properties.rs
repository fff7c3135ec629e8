use bcs_core::basis::{orthogonalize, radial_inner_product, BaseMode};
use bcs_core::convolution::{blended_conv, KernelSpectrum, QueryLattice};
use bcs_core::harmonics::sph_harm_raw;
use bcs_core::io::to_json_string;
use bcs_core::quadrature::GaussLegendre;
use bcs_core::retrieval::{evaluate, rank, similarity, Descriptor, Metric};
use bcs_core::transform::{bin_point_cloud, forward_moments, normalize, BallGrid, GridDims, PointCloud, SpectralTensor};
use bcs_core::Complex64;
use proptest::prelude::*;

fn small_dims() -> GridDims {
    GridDims::new(6, 10, 6)
}

fn grid_strategy(dims: GridDims) -> impl Strategy<Value = BallGrid> {
    prop::collection::vec(-2.0..2.0f64, dims.len()).prop_map(move |values| {
        let mut g = BallGrid::zeros(dims);
        g.values = values;
        g
    })
}

fn cloud_strategy() -> impl Strategy<Value = PointCloud> {
    prop::collection::vec(prop::array::uniform3(-5.0..5.0f64), 2..60).prop_map(PointCloud::from_points)
}

fn close(a: Complex64, b: Complex64, scale: f64) -> bool {
    (a - b).norm() <= 1e-11 * scale.max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn inner_product_bilinear_and_symmetric(a in -3.0..3.0f64, b in -3.0..3.0f64, s in 0.0..2.0f64) {
        let quad = GaussLegendre::new(64).unwrap();
        let p = |r: f64| (s * r).exp();
        let q = |r: f64| 1.0 - r * r;
        let w = |r: f64| r.sin();
        let lhs = radial_inner_product(&quad, |r| a * p(r) + b * w(r), q).unwrap();
        let rhs = a * radial_inner_product(&quad, p, q).unwrap() + b * radial_inner_product(&quad, w, q).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-13 * (1.0 + lhs.abs()));
        let swapped = radial_inner_product(&quad, q, p).unwrap();
        prop_assert!((swapped - radial_inner_product(&quad, p, q).unwrap()).abs() <= 1e-15);
    }

    #[test]
    fn harmonic_conjugation(l in 0usize..8, m in 0i64..8, t in 0.0..6.28f64, p in 0.0..3.14f64) {
        let m = m.min(l as i64);
        let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
        let lhs = sph_harm_raw(l, -m, t, p);
        let rhs = sph_harm_raw(l, m, t, p).conj() * sign;
        prop_assert!((lhs - rhs).norm() <= 1e-12);
    }

    #[test]
    fn binning_conserves_points(cloud in cloud_strategy()) {
        if let Ok(n) = normalize(&cloud) {
            let g = bin_point_cloud(&n, small_dims()).unwrap();
            prop_assert_eq!(g.total_occupancy(), cloud.len() as u64);
        }
    }

    #[test]
    fn normalize_is_idempotent(cloud in cloud_strategy()) {
        if let Ok(once) = normalize(&cloud) {
            let twice = normalize(&once).unwrap();
            for (a, b) in once.points.iter().zip(&twice.points) {
                for k in 0..3 {
                    prop_assert!((a[k] - b[k]).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn moments_linear_and_real(g1 in grid_strategy(small_dims()), g2 in grid_strategy(small_dims()), a in -2.0..2.0f64, b in -2.0..2.0f64) {
        let basis = orthogonalize(3, BaseMode::Exponential).unwrap();
        let mut mix = BallGrid::zeros(small_dims());
        mix.values = g1.values.iter().zip(&g2.values).map(|(x, y)| a * x + b * y).collect();
        let t = forward_moments(&mix, &basis, None).unwrap();
        let t1 = forward_moments(&g1, &basis, None).unwrap();
        let t2 = forward_moments(&g2, &basis, None).unwrap();
        let scale = t1.norm() + t2.norm();
        for (n, l, m) in SpectralTensor::indices(3) {
            prop_assert!(close(t.get(n, l, m), t1.get(n, l, m) * a + t2.get(n, l, m) * b, scale));
        }
        prop_assert!(t1.conjugate_symmetry_residual() <= 1e-12 * t1.norm().max(1.0));
    }

    #[test]
    fn blended_conv_bilinear(g1 in grid_strategy(small_dims()), g2 in grid_strategy(small_dims()), a in -2.0..2.0f64, k in prop::collection::vec(-1.0..1.0f64, 10)) {
        let basis = orthogonalize(3, BaseMode::Exponential).unwrap();
        let lattice = QueryLattice::bin_centers(2, 4, 3);
        let f1 = forward_moments(&g1, &basis, None).unwrap();
        let f2 = forward_moments(&g2, &basis, None).unwrap();
        let fsum = SpectralTensor::from_moments(3, f1.as_slice().iter().zip(f2.as_slice()).map(|(x, y)| x * a + y).collect()).unwrap();
        let kern = KernelSpectrum::from_moments(3, k.clone()).unwrap();
        let kern2 = KernelSpectrum::from_moments(3, k.iter().map(|v| v * a).collect()).unwrap();
        let c1 = blended_conv(&f1, &kern, &basis, &lattice).unwrap();
        let c2 = blended_conv(&f2, &kern, &basis, &lattice).unwrap();
        let cs = blended_conv(&fsum, &kern, &basis, &lattice).unwrap();
        let ck = blended_conv(&f1, &kern2, &basis, &lattice).unwrap();
        let scale: f64 = c1.values.iter().chain(&c2.values).map(|v| v.abs()).sum::<f64>().max(1.0);
        for i in 0..cs.values.len() {
            prop_assert!((cs.values[i] - (a * c1.values[i] + c2.values[i])).abs() <= 1e-11 * scale);
            prop_assert!((ck.values[i] - a * c1.values[i]).abs() <= 1e-11 * scale);
        }
    }

    #[test]
    fn cosine_ranking_invariant_to_positive_scaling(
        vals in prop::collection::vec(prop::collection::vec(-1.0..1.0f64, 6), 2..12),
        s in 0.01..100.0f64,
    ) {
        let gallery: Vec<Descriptor> = vals.iter().enumerate()
            .map(|(i, v)| Descriptor { id: i.to_string(), label: Some(i % 3), values: v.clone() })
            .collect();
        prop_assume!(gallery.iter().all(|d| d.values.iter().any(|x| *x != 0.0)));
        let scaled: Vec<Descriptor> = gallery.iter()
            .map(|d| Descriptor { values: d.values.iter().map(|x| x * s).collect(), ..d.clone() })
            .collect();
        for (q, qs) in gallery.iter().zip(&scaled) {
            let ra = rank(q, &gallery, Metric::Cosine).unwrap();
            let rb = rank(qs, &scaled, Metric::Cosine).unwrap();
            // Rescaling can perturb near-ties in the last bit; only compare clear orders.
            if ra.windows(2).all(|w| (w[0].1 - w[1].1).abs() > 1e-12) {
                let a: Vec<usize> = ra.iter().map(|x| x.0).collect();
                let b: Vec<usize> = rb.iter().map(|x| x.0).collect();
                prop_assert_eq!(a, b);
            }
        }
        for (x, y) in gallery.iter().zip(gallery.iter().skip(1)) {
            for m in [Metric::Cosine, Metric::Euclidean] {
                prop_assert_eq!(similarity(x, y, m).unwrap(), similarity(y, x, m).unwrap());
            }
        }
        for m in Metric::ALL {
            let e = evaluate(&gallery, &gallery, m, true).unwrap();
            prop_assert!((0.0..=1.0).contains(&e.map) && (0.0..=1.0).contains(&e.nn_accuracy));
        }
    }

    #[test]
    fn json_floats_round_trip(v in prop::collection::vec(any::<f64>().prop_filter("finite", |x| x.is_finite()), 0..40)) {
        let text = to_json_string(&v).unwrap();
        let back: Vec<f64> = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(v.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), back.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    }
}
