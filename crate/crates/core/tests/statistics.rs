use std::sync::Arc;

use noisy_cluster::density::{estimate_density, GridDomain};
use noisy_cluster::kernels::{build_deconv_kernel, KernelSpec, NoiseModel, TableConfig};
use noisy_cluster::risk::{probe_margin, Component, TrueDensity, TrueModel};
use noisy_cluster::rng::derive_seed;
use noisy_cluster::sim::generate;

fn mixture() -> TrueDensity {
    TrueDensity::Mixture {
        components: vec![
            Component { mean: vec![-0.5], scale: 0.15, weight: 0.5 },
            Component { mean: vec![0.5], scale: 0.15, weight: 0.5 },
        ],
    }
}

#[test]
fn deconvolved_density_error_falls_with_n() {
    let grid = Arc::new(GridDomain::ball(1, 1.0, 256).unwrap());
    let model = TrueModel::new(mixture(), 2, Arc::clone(&grid), 2.0, 1.0).unwrap();
    let noise = NoiseModel::laplace(0.2).unwrap();
    let kernel = KernelSpec::sinc(1);
    let l2 = |n: usize, lambda: f64, seed: u64| {
        let cfg = TableConfig { range: 2.0 + 0.2 * 12.0 * 10f64.ln(), align_to: Some(grid.step()), ..TableConfig::default() };
        let table = build_deconv_kernel(&kernel, &noise, lambda, &cfg).unwrap();
        let data = generate(&model.density, &noise, n, seed).unwrap();
        let f = estimate_density(&data.sample, &table, &grid).unwrap();
        let wf = f.weights();
        let wt = model.field.weights();
        let h = grid.cell_volume();
        wf.iter().zip(&wt).map(|(a, b)| (a - b).powi(2) / h).sum::<f64>()
    };
    let wins = (0..10)
        .filter(|&s| l2(10_000, 0.12, derive_seed(1, &[s])) < l2(100, 0.3, derive_seed(2, &[s])))
        .count();
    assert!(wins >= 9, "L2 error decreased on only {wins}/10 seeds");
}

#[test]
fn margin_probe_is_stable_across_seeds() {
    let grid = Arc::new(GridDomain::ball(1, 1.0, 256).unwrap());
    let model = TrueModel::new(mixture(), 2, grid, 2.0, 1.0).unwrap();
    let ks: Vec<f64> = (0..6)
        .map(|s| probe_margin(&model, &model.grid, 400, s).unwrap().kappa)
        .collect();
    let mean = ks.iter().sum::<f64>() / ks.len() as f64;
    let sd = (ks.iter().map(|k| (k - mean).powi(2)).sum::<f64>() / (ks.len() - 1) as f64).sqrt();
    assert!(mean > 0.0 && mean.is_finite());
    assert!(sd / mean < 0.5, "coefficient of variation {} for {ks:?}", sd / mean);
}

#[test]
fn noise_free_estimate_has_unit_mass() {
    let grid = Arc::new(GridDomain::ball(1, 1.0, 256).unwrap());
    let noise = NoiseModel::dirac(vec![1.0]).unwrap();
    let cfg = TableConfig { range: 2.5, align_to: Some(grid.step()), ..TableConfig::default() };
    let table = build_deconv_kernel(&KernelSpec::sinc(1), &noise, 0.1, &cfg).unwrap();
    let data = generate(&TrueDensity::Uniform { dim: 1 }, &noise, 20_000, 5).unwrap();
    let mass = estimate_density(&data.sample, &table, &grid).unwrap().mass();
    assert!((mass - 1.0).abs() < 0.05, "mass {mass}");
}
