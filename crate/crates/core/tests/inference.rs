use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sitr_core::*;

fn half() -> RandomizationSpec {
    RandomizationSpec::binary_constant(0.5).unwrap()
}

fn gauss(h: f64) -> KernelConfig {
    KernelConfig::single(KernelFamily::Gaussian, h).unwrap().with_trim(DEFAULT_TRIM).unwrap()
}

fn binary_data(n: usize, g: impl Fn(f64) -> f64, sigma: f64, seed: u64) -> Dataset {
    data_with_baseline(n, 0.05, g, sigma, seed)
}

/// `y = b·(x₁ + x₂) + z·g(x₁ − x₂) + σε` with normal covariates.
fn data_with_baseline(n: usize, b: f64, g: impl Fn(f64) -> f64, sigma: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    let (mut z, mut y) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        let x: Vec<f64> = (0..2).map(|_| StandardNormal.sample(&mut rng)).collect();
        let zi = if rng.random::<f64>() < 0.5 { 1.0 } else { 0.0 };
        let e: f64 = StandardNormal.sample(&mut rng);
        y.push(b * (x[0] + x[1]) + zi * g(x[0] - x[1]) + sigma * e);
        z.push(zi);
        rows.push(x);
    }
    Dataset::from_rows(&rows, z, y).unwrap()
}

fn fitted(d: &Dataset, h: f64) -> IndexFit {
    solve_index(d, &half(), Method::M1, &gauss(h), None).unwrap()
}

#[test]
fn bootstrap_is_reproducible_and_uses_order_statistics() {
    let d = binary_data(300, |t| 2.0 * t, 0.3, 1);
    let fit = fitted(&d, 0.4);
    let a = bootstrap_from_fit(&d, &fit, 40, 0.9, 17).unwrap();
    let b = bootstrap_from_fit(&d, &fit, 40, 0.9, 17).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.beta_draws.len(), 40);
    let (lo, hi) = a.ci_per_coord[0];
    assert!(lo <= hi);
    let draws: Vec<f64> = a.beta_draws.iter().map(|r| r[0]).collect();
    assert!(draws.contains(&lo) && draws.contains(&hi));
    let c = bootstrap_from_fit(&d, &fit, 40, 0.9, 18).unwrap();
    assert_ne!(a.beta_draws, c.beta_draws);
}

#[test]
fn bootstrap_rejects_small_b_and_bad_levels() {
    let d = binary_data(200, |t| 2.0 * t, 0.3, 2);
    let fit = fitted(&d, 0.4);
    assert!(matches!(bootstrap_from_fit(&d, &fit, 19, 0.95, 1), Err(Error::Config(_))));
    assert!(matches!(bootstrap_from_fit(&d, &fit, 20, 1.0, 1), Err(Error::Config(_))));
}

#[test]
fn noiseless_linear_effect_gives_zero_width_intervals() {
    // The score vanishes at the truth on every resample, so each warm start
    // is already a root.
    let d = data_with_baseline(200, 0.0, |t| 1.5 * t, 0.0, 3);
    let fit = fitted(&d, 0.5);
    let res = bootstrap_from_fit(&d, &fit, 20, 0.95, 4).unwrap();
    for (lo, hi) in &res.ci_per_coord {
        assert_eq!(lo, hi);
    }
    assert!(res.beta_draws.iter().all(|r| r == fit.beta_hat.free()));
}

#[test]
fn permutation_band_is_monotone_in_level() {
    let d = binary_data(200, |t| (1.5 * t).exp() - 1.0, 0.3, 5);
    let fit = fitted(&d, 0.4);
    let grid = quantile_grid(fit.index_values(), 0.05, 0.95, 21).unwrap();
    let low = permutation_band_with(&d, &half(), &fit, &grid, 100, 0.8, 9, true).unwrap();
    let high = permutation_band_with(&d, &half(), &fit, &grid, 100, 0.95, 9, true).unwrap();
    assert_eq!(low.upper_quantile_curve[0].len(), grid.len());
    for (a, b) in low.upper_quantile_curve[0].iter().zip(&high.upper_quantile_curve[0]) {
        if let (Some(a), Some(b)) = (a, b) {
            assert!(a <= b);
        }
    }
    // A strong increasing effect clears the null band on its upper range.
    let top = high.estimate[0].last().unwrap().unwrap();
    assert!(top > high.upper_quantile_curve[0].last().unwrap().unwrap());
    assert!(high.exceedance()[0] > 0.2);
}

#[test]
fn permutation_band_needs_enough_permutations() {
    let d = binary_data(100, |t| t, 0.3, 6);
    let fit = fitted(&d, 0.5);
    let grid = vec![0.0];
    assert!(matches!(permutation_band_g(&d, &half(), &fit, &grid, 60, 0.95, 1), Err(Error::Config(_))));
}

#[test]
fn doubling_the_noise_quadruples_the_sandwich_variance() {
    let truth = BinaryTruth::from_scenario(ScenarioId::S3).unwrap();
    let f = FStar::new(|x| ScenarioId::S3.f(x));
    let base = sandwich_oracle_binary(&truth, &half(), 20_000, &f, 3).unwrap();
    let doubled = sandwich_oracle_binary(&truth.with_sigma(0.6), &half(), 20_000, &f, 3).unwrap();
    let ratio = doubled.avar[0] / base.avar[0];
    assert!((ratio - 4.0).abs() < 1e-9, "{ratio}");
}

#[test]
fn sandwich_sd_for_the_linear_scenario_is_near_the_reported_spread() {
    // Reported empirical SD of β̂₂ at n = 600 is 0.0177; the oracle is
    // allowed 40% for Monte Carlo and smoothing error.
    let truth = BinaryTruth::from_scenario(ScenarioId::S3).unwrap();
    let oracle = sandwich_oracle_binary(&truth, &half(), 100_000, &FStar::zero(), 8).unwrap();
    let sd = oracle.sd_at(0, 600);
    assert!((sd - 0.0177).abs() <= 0.4 * 0.0177, "{sd}");
}

#[test]
fn sandwich_oracle_needs_enough_draws() {
    let truth = BinaryTruth::from_scenario(ScenarioId::S1).unwrap();
    assert!(sandwich_oracle_binary(&truth, &half(), 9_999, &FStar::zero(), 1).is_err());
    assert!(BinaryTruth::from_scenario(ScenarioId::S5).is_err());
}
