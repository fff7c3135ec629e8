use bcs_core::basis::{orthogonalize, BaseMode};
use bcs_core::learn::{make_synthetic_dataset, Network, NetworkConfig, NetworkParams, ParamGroup, ShapeClass};
use bcs_core::transform::GridDims;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Relative L2 error between reverse-mode and central differences over a
/// random subset of each parameter block.
fn block_errors(net: &Network, params: &NetworkParams, seed: u64, per_block: usize, h: f64) -> Vec<(&'static str, f64)> {
    let ds = make_synthetic_dataset(&[ShapeClass::SphereShell, ShapeClass::CubeSurface, ShapeClass::Torus], 4, 0.02, seed).unwrap();
    let batch = net.prepare_all(&ds.clouds).unwrap();
    assert_eq!(batch.len(), 12);
    let (_, grad) = net.gradient(params, &batch, &[ParamGroup::Projection, ParamGroup::Network]).unwrap();
    let g = grad.to_flat();
    let base = params.to_flat();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (name, _, range) in params.layout() {
        let (mut num, mut den_fd, mut den_g) = (0.0, 0.0, 0.0);
        for _ in 0..per_block {
            let i = rng.random_range(range.clone());
            let eval = |delta: f64| {
                let mut flat = base.clone();
                flat[i] += delta;
                let mut p = params.clone();
                p.assign_flat(&flat);
                net.batch_loss(&p, &batch).unwrap()
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            // The (0, 0) kernel entry is pinned to zero and never updated.
            let fd = if name.ends_with("kernels") && (i - range.start) % 21 == 0 { 0.0 } else { fd };
            num += (fd - g[i]).powi(2);
            den_fd += fd.powi(2);
            den_g += g[i].powi(2);
        }
        // Floor keeps blocks with a vanishing true gradient from dividing noise by noise.
        out.push((name, num.sqrt() / den_fd.sqrt().max(den_g.sqrt()).max(1e-6)));
    }
    out
}

fn setup() -> (Network, NetworkParams) {
    let basis = orthogonalize(5, BaseMode::Exponential).unwrap();
    let net = Network::new(&basis, NetworkConfig { input_dims: GridDims::new(12, 16, 8), ..NetworkConfig::default() }).unwrap();
    let params = NetworkParams::init(&net, 7);
    (net, params)
}

#[test]
fn network_blocks_match_central_differences() {
    let (net, params) = setup();
    for (name, err) in block_errors(&net, &params, 3, 8, 1e-5) {
        if name != "projection_weights" {
            assert!(err < 1e-3, "{name}: {err:e}");
        }
    }
}

// The loss varies on a length scale of ~1e-5 in the projection weights, so
// the step has to be much smaller for central differences to resolve it.
#[test]
fn projection_weights_match_fine_central_differences() {
    let (net, params) = setup();
    let errs = block_errors(&net, &params, 3, 8, 1e-8);
    let (_, err) = errs.iter().find(|(n, _)| *n == "projection_weights").unwrap();
    assert!(*err < 1e-3, "projection_weights: {err:e}");
}
