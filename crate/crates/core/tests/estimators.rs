use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sitr_core::*;

fn gauss(h: f64) -> KernelConfig {
    KernelConfig::single(KernelFamily::Gaussian, h).unwrap()
}

fn half() -> RandomizationSpec {
    RandomizationSpec::binary_constant(0.5).unwrap()
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
}

/// Binary treatment, normal covariates, `y = f(x) + z·g(βᵀx) + σε`.
fn binary_data(n: usize, beta: &[f64], g: impl Fn(f64) -> f64, f: impl Fn(&[f64]) -> f64, sigma: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = beta.len();
    let mut rows = Vec::with_capacity(n);
    let (mut z, mut y) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        let x: Vec<f64> = (0..p).map(|_| normal(&mut rng)).collect();
        let zi = if rng.random::<f64>() < 0.5 { 1.0 } else { 0.0 };
        let t: f64 = x.iter().zip(beta).map(|(a, b)| a * b).sum();
        y.push(f(&x) + zi * g(t) + sigma * normal(&mut rng));
        z.push(zi);
        rows.push(x);
    }
    Dataset::from_rows(&rows, z, y).unwrap()
}

fn hand5() -> Dataset {
    let rows = vec![
        vec![0.2, -0.4],
        vec![-0.5, 0.3],
        vec![0.9, 0.1],
        vec![-0.1, -0.8],
        vec![0.4, 0.6],
    ];
    Dataset::from_rows(&rows, vec![1.0, 0.0, 1.0, 1.0, 0.0], vec![1.3, -0.2, 2.1, 0.4, 0.7]).unwrap()
}

fn phi(u: f64) -> f64 {
    (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Term-by-term evaluation of the binary estimating functions for p = 2,
/// constant propensity `e`, Gaussian kernel with bandwidth `h`.
enum Variant {
    Efficient,
    WorkingG(f64, f64),
    WorkingU,
}

fn brute_score(d: &Dataset, beta: &[f64], e: f64, h: f64, variant: Variant) -> f64 {
    let n = d.n();
    let t: Vec<f64> = (0..n).map(|i| d.x(i)[0] * beta[0] + d.x(i)[1] * beta[1]).collect();
    let var = e * (1.0 - e);
    let mut total = 0.0;
    for i in 0..n {
        let w: Vec<f64> = (0..n).map(|j| phi((t[j] - t[i]) / h)).collect();
        // Σ w (z-e) z [1 d; d d²] (a, b) = Σ w (z-e) y (1, d)
        let (mut m00, mut m01, mut m11, mut r0, mut r1) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for j in 0..n {
            let dj = t[j] - t[i];
            let c = w[j] * (d.z()[j] - e);
            m00 += c * d.z()[j];
            m01 += c * d.z()[j] * dj;
            m11 += c * d.z()[j] * dj * dj;
            r0 += c * d.y()[j];
            r1 += c * d.y()[j] * dj;
        }
        let det = m00 * m11 - m01 * m01;
        let a = (m11 * r0 - m01 * r1) / det;
        let b = (m00 * r1 - m01 * r0) / det;
        let u = (0..n).map(|j| w[j] * var * d.x(j)[1]).sum::<f64>() / (0..n).map(|j| w[j] * var).sum::<f64>();
        let zc = d.z()[i] - e;
        let xl = d.x(i)[1];
        total += match variant {
            Variant::Efficient => (d.y()[i] - d.z()[i] * a) * zc * b * (xl - u),
            Variant::WorkingG(g, hs) => (d.y()[i] - d.z()[i] * g) * zc * hs * (xl - u),
            Variant::WorkingU => (d.y()[i] - d.z()[i] * a) * zc * b * xl,
        };
    }
    total / n as f64
}

#[test]
fn transform_y_examples() {
    let d = Dataset::from_rows(&[vec![0.0, 0.0], vec![0.0, 0.0]], vec![1.0, 0.0], vec![2.0, 2.0]).unwrap();
    let yt = transform_y(&d, &half()).unwrap();
    assert!((yt[0] - 4.0).abs() < 1e-12 && (yt[1] + 4.0).abs() < 1e-12);

    let spec = RandomizationSpec::binary_logistic(vec![0.3, -0.2]).unwrap();
    let rows = vec![vec![1.0, 2.0], vec![-0.5, 0.4], vec![0.0, -1.5]];
    let z = vec![1.0, 0.0, 1.0];
    let y = vec![0.7, -1.2, 2.5];
    let d = Dataset::from_rows(&rows, z.clone(), y.clone()).unwrap();
    let yt = transform_y(&d, &spec).unwrap();
    for i in 0..3 {
        let eta = 0.3 * rows[i][0] - 0.2 * rows[i][1];
        let e = 1.0 / (1.0 + (-eta).exp());
        let expect = (z[i] - e) * y[i] / (e * (1.0 - e));
        assert!((yt[i] - expect).abs() < 1e-12, "row {i}: {} vs {expect}", yt[i]);
    }
}

#[test]
fn scores_match_term_by_term_assembly() {
    let d = hand5();
    let beta = [1.0, -0.7];
    let h = 0.9;
    let m1 = score_method1(&d, &half(), &beta, &FStar::zero(), &gauss(h)).unwrap();
    let o1 = brute_score(&d, &beta, 0.5, h, Variant::Efficient);
    assert!((m1[0] - o1).abs() < 1e-10 * (1.0 + o1.abs()), "{} vs {o1}", m1[0]);

    let g = |_: f64| 0.3;
    let hs = |_: f64| 1.7;
    let m2 = score_method2(&d, &half(), &beta, &FStar::zero(), &g, &hs, &gauss(h)).unwrap();
    let o2 = brute_score(&d, &beta, 0.5, h, Variant::WorkingG(0.3, 1.7));
    assert!((m2[0] - o2).abs() < 1e-10 * (1.0 + o2.abs()), "{} vs {o2}", m2[0]);

    let u0 = |_: f64| vec![0.0];
    let m3 = score_method3(&d, &half(), &beta, &FStar::zero(), &u0, &gauss(h)).unwrap();
    let o3 = brute_score(&d, &beta, 0.5, h, Variant::WorkingU);
    assert!((m3[0] - o3).abs() < 1e-10 * (1.0 + o3.abs()), "{} vs {o3}", m3[0]);
}

#[test]
fn vanishing_working_derivative_is_degenerate() {
    let zero = |_: f64| 0.0;
    let err = score_method2(&hand5(), &half(), &[1.0, -0.7], &FStar::zero(), &zero, &zero, &gauss(0.9)).unwrap_err();
    assert!(matches!(err, Error::DegenerateConfiguration(_)), "{err}");
}

#[test]
fn noiseless_linear_effect_has_zero_score_at_truth() {
    let beta = [1.0, -1.0];
    let d = binary_data(2000, &beta, |t| 2.0 * t, |_| 0.0, 0.0, 11);
    let s = score_method1(&d, &half(), &beta, &FStar::zero(), &gauss(0.3)).unwrap();
    assert!(s[0].abs() <= 1e-6, "{s:?}");
}

#[test]
fn exactly_linear_transformed_response_has_zero_objective() {
    // (z - 1/2) y = 1/4 (1 + βᵀx) for every row.
    let beta = [1.0, -1.0];
    let base = binary_data(500, &beta, |_| 0.0, |_| 0.0, 0.0, 21);
    let rows: Vec<Vec<f64>> = (0..base.n()).map(|i| base.x(i).to_vec()).collect();
    let y: Vec<f64> = (0..base.n())
        .map(|i| 0.25 * (1.0 + base.x(i)[0] - base.x(i)[1]) / (base.z()[i] - 0.5))
        .collect();
    let d = Dataset::from_rows(&rows, base.z().to_vec(), y).unwrap();
    let obj = objective_method4(&d, &half(), &beta, &gauss(0.3)).unwrap();
    assert!(obj.abs() <= 1e-20 * d.n() as f64 + 1e-18, "{obj}");
    let grad = gradient_method4(&d, &half(), &beta, &gauss(0.3)).unwrap();
    assert!(grad[0].abs() <= 1e-9, "{grad:?}");
}

#[test]
fn noiseless_linear_effect_recovers_the_index() {
    let beta = [1.0, -1.0];
    let d = binary_data(2000, &beta, |t| 2.0 * t, |_| 0.0, 0.0, 12);
    let fit = solve_index(&d, &half(), Method::M1, &gauss(0.3), None).unwrap();
    assert_eq!(fit.beta_hat.beta()[0], 1.0);
    assert!((fit.beta_hat.beta()[1] + 1.0).abs() <= 1e-3, "{:?}", fit.beta_hat);
    assert!(fit.converged && fit.score_norm_at_solution <= fit.tolerance);
}

#[test]
fn least_squares_gradient_matches_finite_differences() {
    let d = binary_data(300, &[1.0, -1.0, 0.5], |t| (1.5 * t).exp() - 1.0, |x| 0.05 * (x[0] + x[1]), 0.3, 13);
    let cfg = gauss(0.45);
    let beta = [1.0, -0.8, 0.6];
    let n = d.n() as f64;
    let grad = gradient_method4(&d, &half(), &beta, &cfg).unwrap();
    for k in 0..2 {
        let step = 1e-5;
        let mut bp = beta;
        let mut bm = beta;
        bp[k + 1] += step;
        bm[k + 1] -= step;
        let fp = objective_method4(&d, &half(), &bp, &cfg).unwrap() / n;
        let fm = objective_method4(&d, &half(), &bm, &cfg).unwrap() / n;
        let fd = (fp - fm) / (2.0 * step);
        assert!((grad[k] - fd).abs() <= 1e-5 * (1.0 + fd.abs()), "coordinate {k}: {} vs {fd}", grad[k]);
    }
}

#[test]
fn single_component_efficient_equation_shares_the_root() {
    let d = binary_data(400, &[1.0, -1.0], |t| 2.0 * t, |x| 0.05 * (x[0] + x[1]), 0.3, 14);
    let cfg = gauss(0.4).with_trim(DEFAULT_TRIM).unwrap();
    let fit = solve_index(&d, &half(), Method::M1, &cfg, None).unwrap();
    let root = fit.beta_hat.beta()[1];
    let multi = |b: f64| {
        score_efficient_multi(&d, &half(), &[1.0, b], &FStar::zero(), 1, TreatmentKind::Binary, &cfg).unwrap()[0]
    };
    let (lo, hi) = (multi(root - 1e-3), multi(root + 1e-3));
    assert!(lo * hi <= 0.0, "no sign change around {root}: {lo} {hi}");
}

#[test]
fn w_basis_is_conditionally_orthonormal() {
    let n = 2000;
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let spec = RandomizationSpec::uniform_dose(0.0, 1.0, 2).unwrap();
    let mut rows = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    for _ in 0..n {
        let x = vec![normal(&mut rng), normal(&mut rng)];
        z.push(spec.sample(&x, &mut rng).unwrap());
        rows.push(x);
    }
    let d = Dataset::from_rows(&rows, z, vec![0.0; n]).unwrap();
    let beta = [1.0, -1.0];
    let w = build_w_basis(&d, &spec, &beta, 2, spec.kind(), &gauss(0.4)).unwrap();
    let t = d.index_values(&beta);
    for &at in &[-1.0, -0.5, 0.0, 0.5, 1.0] {
        let wt: Vec<f64> = t.iter().map(|&ti| phi((ti - at) / 0.4)).collect();
        let total: f64 = wt.iter().sum();
        for a in 0..2 {
            for b in 0..2 {
                let v: Vec<f64> = (0..n).map(|i| w.w[i * 2 + a] * w.w[i * 2 + b]).collect();
                let m: f64 = (0..n).map(|i| wt[i] * v[i]).sum::<f64>() / total;
                // Kernel-weighted standard error with effective size (Σw)²/Σw².
                let s2: f64 = (0..n).map(|i| wt[i] * (v[i] - m).powi(2)).sum::<f64>() / total;
                let n_eff = total * total / wt.iter().map(|w| w * w).sum::<f64>();
                let se = (s2 / n_eff).sqrt();
                let target = if a == b { 1.0 } else { 0.0 };
                assert!((m - target).abs() <= (4.0 * se).max(0.05), "E(W{a}W{b}|{at}) = {m} (se {se})");
            }
        }
    }
}

#[test]
fn noiseless_dose_signal_gives_zero_efficient_score() {
    let n = 800;
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let spec = RandomizationSpec::uniform_dose(0.0, 1.0, 2).unwrap();
    let beta = [1.0, -1.0];
    let (mut rows, mut z, mut y) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..n {
        let x = vec![normal(&mut rng), normal(&mut rng)];
        let zi = spec.sample(&x, &mut rng).unwrap();
        let t = x[0] - x[1];
        y.push(zi * (0.5 + t) + zi * zi * (1.0 - 2.0 * t));
        z.push(zi);
        rows.push(x);
    }
    let d = Dataset::from_rows(&rows, z, y).unwrap();
    let s = score_efficient_multi(&d, &spec, &beta, &FStar::zero(), 2, spec.kind(), &gauss(0.5)).unwrap();
    assert!(s[0].abs() <= 1e-8, "{s:?}");
}

/// Exhaustive leave-one-out error for the transformed-response local fit.
fn brute_loo(d: &Dataset, beta: &[f64], e: f64, h: f64) -> f64 {
    let n = d.n();
    let var = e * (1.0 - e);
    let t = d.index_values(beta);
    let resp: Vec<f64> = (0..n).map(|i| (d.z()[i] - e) * d.y()[i]).collect();
    let mut total = 0.0;
    for j in 0..n {
        let (mut s00, mut s01, mut s11, mut r0, mut r1) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in (0..n).filter(|&i| i != j) {
            let dd = t[i] - t[j];
            let w = phi(dd / h);
            s00 += w * var * var;
            s01 += w * var * var * dd;
            s11 += w * var * var * dd * dd;
            r0 += w * var * resp[i];
            r1 += w * var * resp[i] * dd;
        }
        let a = (s11 * r0 - s01 * r1) / (s00 * s11 - s01 * s01);
        total += (resp[j] - var * a).powi(2);
    }
    total
}

#[test]
fn loo_bandwidth_matches_exhaustive_search() {
    let beta = [1.0, -1.0];
    let d = binary_data(150, &beta, |t| (1.5 * t).exp() - 1.0, |x| 0.05 * (x[0] + x[1]), 0.3, 17);
    let grid: Vec<f64> = (0..5).map(|k| 0.15 * 2f64.powf(k as f64 * 0.75)).collect();
    let chosen = loo_cv_bandwidth(&d, &half(), &beta, KernelFamily::Gaussian, &grid).unwrap();
    let errors: Vec<f64> = grid.iter().map(|&h| brute_loo(&d, &beta, 0.5, h)).collect();
    let best = (0..grid.len()).min_by(|&a, &b| errors[a].total_cmp(&errors[b])).unwrap();
    assert_eq!(chosen, grid[best], "errors {errors:?}");
}

#[test]
fn loo_tie_prefers_the_larger_bandwidth() {
    // Transformed response exactly linear in the index: every bandwidth has zero error.
    let beta = [1.0, -1.0];
    let d = binary_data(200, &beta, |t| 2.0 * t, |_| 0.0, 0.0, 18);
    let rows: Vec<Vec<f64>> = (0..d.n()).map(|i| d.x(i).to_vec()).collect();
    let y: Vec<f64> = (0..d.n()).map(|i| (2.0 * d.z()[i] - 1.0) * 0.25 * (1.0 + d.x(i)[0] - d.x(i)[1])).collect();
    let d = Dataset::from_rows(&rows, d.z().to_vec(), y.iter().map(|v| v / 0.5).collect()).unwrap();
    let chosen = loo_cv_bandwidth(&d, &half(), &beta, KernelFamily::Gaussian, &[0.1, 0.5]).unwrap();
    assert_eq!(chosen, 0.5);
}

#[test]
fn trimming_drops_isolated_observations() {
    let beta = [1.0, -1.0];
    let mut d = binary_data(300, &beta, |t| 2.0 * t, |x| 0.05 * (x[0] + x[1]), 0.3, 19);
    let rows: Vec<Vec<f64>> = (0..d.n()).map(|i| d.x(i).to_vec()).collect::<Vec<_>>();
    let mut rows = rows;
    rows.push(vec![9.0, -9.0]);
    let mut z = d.z().to_vec();
    z.push(1.0);
    let mut y = d.y().to_vec();
    y.push(40.0);
    let base = gauss(0.4).with_trim(DEFAULT_TRIM).unwrap();
    let clean = score_method1(&d, &half(), &beta, &FStar::zero(), &base).unwrap();
    d = Dataset::from_rows(&rows, z, y).unwrap();
    let with_outlier = score_method1(&d, &half(), &beta, &FStar::zero(), &base).unwrap();
    // The outlier contributes nothing; only the 1/n scaling changes.
    let scaled = clean[0] * 300.0 / 301.0;
    assert!((with_outlier[0] - scaled).abs() <= 1e-3 * (1.0 + scaled.abs()), "{with_outlier:?} vs {scaled}");
    // Without trimming, the isolated point has no treated neighbors to fit.
    assert!(score_method1(&d, &half(), &beta, &FStar::zero(), &gauss(0.4)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn least_squares_objective_is_nonnegative(b2 in -3.0f64..3.0, h in 0.2f64..1.5, seed in 0u64..100) {
        let d = binary_data(60, &[1.0, -1.0], |t| t.sin(), |_| 0.0, 0.5, seed);
        // Sparse windows may leave a local system singular; that is an error,
        // not a negative objective.
        if let Ok(obj) = objective_method4(&d, &half(), &[1.0, b2], &gauss(h)) {
            prop_assert!(obj >= 0.0);
        }
    }

    #[test]
    fn fitted_index_keeps_its_first_coordinate(seed in 0u64..50) {
        let d = binary_data(200, &[1.0, -1.0], |t| 2.0 * t, |x| 0.05 * (x[0] + x[1]), 0.3, seed);
        if let Ok(fit) = solve_index_best_effort(&d, &half(), Method::M4, &gauss(0.4), None) {
            prop_assert_eq!(fit.beta_hat.beta()[0], 1.0);
            prop_assert!(!fit.converged || fit.score_norm_at_solution <= fit.tolerance);
        }
    }
}

#[test]
fn trimming_every_observation_is_an_error() {
    let d = binary_data(100, &[1.0, -1.0], |t| t, |_| 0.0, 0.3, 21);
    let cfg = gauss(0.3).with_trim(1e6).unwrap();
    let err = score_method1(&d, &half(), &[1.0, -1.0], &FStar::zero(), &cfg).unwrap_err();
    assert!(matches!(err, Error::DegenerateConfiguration(_)), "{err}");
}
