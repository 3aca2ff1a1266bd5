//! Statistical checks of whole chains against closed forms and simulation truth.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use semsurv::assess::residual_diagnostics;
use semsurv::baseline::{run_chain_baseline, BaselineHyper};
use semsurv::integrated::run_chain;
use semsurv::io::{read_draws, write_draws};
use semsurv::kernels::derive_seed;
use semsurv::simulate::{generate, Generator, Scenario};
use semsurv::{Dataset, Hyperparameters, IntegratedState, McmcConfig, RngStream};

/// Batch-means Monte-Carlo standard error of the mean.
fn mc_se(xs: &[f64]) -> f64 {
    let b = 50;
    let size = xs.len() / b;
    let means: Vec<f64> = (0..b).map(|k| xs[k * size..(k + 1) * size].iter().sum::<f64>() / size as f64).collect();
    let m = means.iter().sum::<f64>() / b as f64;
    let var = means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (b - 1) as f64;
    (var / b as f64).sqrt()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[test]
fn baseline_without_genes_matches_conjugate_posterior() {
    let n = 60;
    let mut rng = RngStream::new(31);
    let x = DMatrix::from_fn(n, 2, |_, _| rng.standard_normal());
    let y: Vec<f64> = (0..n)
        .map(|i| 0.5 + 1.2 * x[(i, 0)] - 0.7 * x[(i, 1)] + 0.8 * rng.standard_normal())
        .collect();
    let data = Dataset::new(y.clone(), vec![true; n], x.clone(), DMatrix::zeros(n, 0), DMatrix::zeros(n, 0)).unwrap();

    // closed form: theta | y ~ t_n(m, S/n * L^-1), sigma2 | y ~ IG(n/2, S/2)
    let v = 100.0;
    let mut z = DMatrix::from_element(n, 3, 1.0);
    z.view_mut((0, 1), (n, 2)).copy_from(&x);
    let yv = DVector::from_vec(y);
    let lambda = z.transpose() * &z + DMatrix::identity(3, 3) / v;
    let l_inv = lambda.clone().try_inverse().unwrap();
    let m = &l_inv * z.transpose() * &yv;
    let s = yv.dot(&yv) - m.dot(&(&lambda * &m));
    let sigma2_mean = s / (n as f64 - 2.0);
    let cov = &l_inv * sigma2_mean;

    let cfg = McmcConfig { iterations: 21_000, burn_in: 1_000, thin: 4, seed: 5, chains: 1 };
    let draws = run_chain_baseline(&data, BaselineHyper { prior_variance: v }, &cfg).unwrap();
    let cols: Vec<Vec<f64>> = (0..3).map(|j| draws.draws.iter().map(|d| d.coefficients()[j]).collect()).collect();
    for j in 0..3 {
        let z = (mean(&cols[j]) - m[j]).abs() / mc_se(&cols[j]);
        assert!(z < 3.0, "coefficient {j}: {} vs {} ({z:.2} se)", mean(&cols[j]), m[j]);
        let var = cols[j].iter().map(|c| (c - mean(&cols[j])).powi(2)).sum::<f64>() / (cols[j].len() - 1) as f64;
        assert!((var / cov[(j, j)] - 1.0).abs() < 0.1, "variance {j}: {var} vs {}", cov[(j, j)]);
    }
    let s2: Vec<f64> = draws.draws.iter().map(|d| d.sigma2).collect();
    assert!((mean(&s2) - sigma2_mean).abs() < 3.0 * mc_se(&s2));
}

#[test]
fn baseline_recovers_generating_coefficients() {
    let cfg = McmcConfig { iterations: 1_500, burn_in: 500, thin: 5, seed: 2, chains: 1 };
    let mut sq = 0.0;
    let mut count = 0usize;
    for r in 0..20 {
        let s = Scenario::new(500, 2, 10, 10)
            .with_generator(Generator::Nonintegrated)
            .with_censor_target(0.0)
            .with_seed(derive_seed(404, r));
        let (data, truth) = generate(&s).unwrap();
        let draws = run_chain_baseline(&data, BaselineHyper::default(), &cfg).unwrap();
        for j in 0..2 {
            let est = mean(&draws.draws.iter().map(|d| d.beta[j]).collect::<Vec<_>>());
            sq += (est - truth.beta_t[j]).powi(2);
            count += 1;
        }
    }
    let rmse = (sq / count as f64).sqrt();
    assert!(rmse < 0.1, "rmse {rmse}");
}

#[test]
fn sigma_t2_interval_coverage() {
    let cfg = McmcConfig { iterations: 3_000, burn_in: 500, thin: 5, seed: 0, chains: 1 };
    let mut covered = 0;
    for r in 0..100u64 {
        let s = Scenario::default().with_censor_target(0.0).with_seed(derive_seed(77, r));
        let (data, _) = generate(&s).unwrap();
        let hyper = Hyperparameters::simulation(2, 10, 10);
        let draws = run_chain(&data, &hyper, &McmcConfig { seed: r, ..cfg }).unwrap();
        let mut s2: Vec<f64> = draws.draws.iter().map(|d| d.sigma_t2).collect();
        s2.sort_by(f64::total_cmp);
        let lo = s2[(0.025 * s2.len() as f64) as usize];
        let hi = s2[(0.975 * s2.len() as f64) as usize - 1];
        covered += (lo <= 1.0 && 1.0 <= hi) as usize;
    }
    assert!(covered >= 90, "covered {covered}/100");
}

#[test]
fn residuals_at_truth_are_symmetric() {
    let mut passing = 0;
    for r in 0..100u64 {
        let s = Scenario::new(500, 2, 10, 10).with_censor_target(0.0).with_seed(derive_seed(5, r));
        let (data, truth) = generate(&s).unwrap();
        let means: Vec<f64> = (0..data.n())
            .map(|i| {
                truth.alpha_t
                    + (0..2).map(|j| data.x()[(i, j)] * truth.beta_t[j]).sum::<f64>()
                    + truth.phi_t * truth.eta1[i]
            })
            .collect();
        let res = residual_diagnostics(&data, &means, truth.sigma_t2.sqrt()).unwrap();
        let m = mean(&res.residuals);
        let sd = (res.residuals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / res.residuals.len() as f64).sqrt();
        let skew = res.residuals.iter().map(|v| ((v - m) / sd).powi(3)).sum::<f64>() / res.residuals.len() as f64;
        passing += (skew.abs() < 0.5) as usize;
    }
    assert!(passing >= 95, "{passing}/100");
}

#[test]
fn thousand_draw_file_reads_quickly() {
    let (data, _) = generate(&Scenario::default().with_seed(3)).unwrap();
    let cfg = McmcConfig { iterations: 1_100, burn_in: 100, thin: 1, seed: 1, chains: 1 };
    let draws = run_chain(&data, &Hyperparameters::simulation(2, 10, 10), &cfg).unwrap();
    assert_eq!(draws.len(), 1000);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("draws.csv");
    write_draws(&draws, &data, &path).unwrap();
    let start = Instant::now();
    let (back, _) = read_draws::<IntegratedState>(&path).unwrap();
    let elapsed = start.elapsed();
    assert_eq!(back, draws);
    assert!(elapsed.as_secs_f64() < 1.0, "{elapsed:?}");
}
