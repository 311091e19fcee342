use sitr_core::simlab::{run_replicate, TABLE_HEADER};
use sitr_core::*;
use std::path::PathBuf;

/// Composite Simpson rule on `[a, b]` with `m` (even) panels.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, m: usize) -> f64 {
    let h = (b - a) / m as f64;
    let mut s = f(a) + f(b);
    for i in 1..m {
        s += f(a + h * i as f64) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// `E φ(T)` for `T ~ N(0, var)`.
fn normal_mean(phi: impl Fn(f64) -> f64, var: f64) -> f64 {
    let sd = var.sqrt();
    let dens = |t: f64| (-(t * t) / (2.0 * var)).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt());
    simpson(|t| phi(t) * dens(t), -12.0 * sd, 12.0 * sd, 20_000)
}

/// Best response over doses in `[0, 1]` for effects `z·a + z²·b`.
fn best_dose_gain(a: f64, b: f64) -> f64 {
    let mut best = (a + b).max(0.0);
    if b < 0.0 {
        let z = -a / (2.0 * b);
        if (0.0..=1.0).contains(&z) {
            best = best.max(a * z + b * z * z);
        }
    }
    best
}

#[test]
fn value_function_of_the_first_scenario_matches_the_reported_truth() {
    let v = true_value_function(ScenarioId::S1, 1_000_000, 1).unwrap();
    assert!((v - 0.4314).abs() <= 0.005, "{v}");
    // t = x₁ − x₂ has the triangular density 1 − |t| on [−1, 1].
    let exact = 0.05 + simpson(|t| ((1.5 * t).exp() - 1.0) * (1.0 - t), 0.0, 1.0, 2000);
    assert!((v - exact).abs() <= 0.002, "{v} vs {exact}");
}

#[test]
fn value_function_of_the_linear_scenario_matches_the_reported_truth() {
    let v = true_value_function(ScenarioId::S3, 1_000_000, 2).unwrap();
    assert!((v - 1.1306).abs() <= 0.01, "{v}");
}

#[test]
fn value_functions_match_quadrature() {
    let cases: [(ScenarioId, f64); 3] = [
        // t ~ N(0, 2); g is increasing through 0.
        (ScenarioId::S4, normal_mean(|t| (2.0 * t + (2.0 * t).sin()).max(0.0), 2.0)),
        // t ~ N(0, 3); control has zero effect.
        (ScenarioId::S5, normal_mean(|t| (0.5 * t * t - 1.0).max(t * t.sin() - 1.0).max(0.0), 3.0)),
        (ScenarioId::S6, normal_mean(|t| best_dose_gain(0.5 * t * t * t, 2.0 - t * t), 2.0)),
    ];
    for (id, exact) in cases {
        let v = true_value_function(id, 1_000_000, 3).unwrap();
        assert!((v - exact).abs() <= 0.015, "{id:?}: {v} vs {exact}");
    }
}

fn quick() -> ReplicationConfig {
    ReplicationConfig {
        family: KernelFamily::Gaussian,
        ..ReplicationConfig::default()
    }
}

#[test]
fn reports_do_not_depend_on_the_thread_count() {
    let s = Scenario::new(ScenarioId::S1, 200, 31);
    let serial = run_replications(&s, Method::M1, 4, &quick(), 1).unwrap();
    let parallel = run_replications(&s, Method::M1, 4, &quick(), 3).unwrap();
    assert_eq!(serial, parallel);
    assert_eq!(serial.reps, 4);
    assert!(serial.coordinates.iter().all(|c| c.sd >= 0.0));
}

#[test]
fn single_replicate_reports_its_error_and_no_spread() {
    let s = Scenario::new(ScenarioId::S1, 200, 32);
    let report = run_replications(&s, Method::M1, 1, &quick(), 1).unwrap();
    let one = run_replicate(ScenarioId::S1, 200, Method::M1, 32, 0, &quick()).unwrap();
    assert!(!report.sd_defined);
    assert_eq!(report.coordinates[0].sd, 0.0);
    assert_eq!(report.coordinates[0].bias, one.beta[1] - (-1.0));
    assert!(matches!(
        run_replications(&s, Method::M1, 0, &quick(), 1),
        Err(Error::Config(_))
    ));
}

#[test]
fn tables_round_trip_and_have_one_row_per_block() {
    let s = Scenario::new(ScenarioId::S5, 300, 33);
    let report = run_replications(&s, Method::CatEff, 2, &quick(), 1).unwrap();
    let json = emit_tables(&report, TableFormat::Json).unwrap();
    let back: ReplicationReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, report);
    let csv = emit_tables(&report, TableFormat::Csv).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], TABLE_HEADER.join(","));
    let blocks = report.coordinates.len() + report.pcd.len() + usize::from(report.vf.is_some());
    assert_eq!(lines.len(), 1 + blocks);
    assert!(lines[1].starts_with("coefficient,beta2,"));
    assert!(lines.iter().any(|l| l.starts_with("pcd,PCD2,")));
}

#[test]
fn seeded_five_replicate_table_matches_snapshot() {
    let s = Scenario::new(ScenarioId::S1, 200, 2024);
    let report = run_replications(&s, Method::M1, 5, &quick(), 1).unwrap();
    let csv = emit_tables(&report, TableFormat::Csv).unwrap();
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "tests", "data", "s1_five_reps.csv"].iter().collect();
    let golden = std::fs::read_to_string(&path).unwrap();
    let cells = |s: &str| -> Vec<Vec<String>> {
        s.lines().map(|l| l.split(',').map(str::to_string).collect()).collect()
    };
    let (got, want) = (cells(&csv), cells(&golden));
    assert_eq!(got.len(), want.len());
    for (g, w) in got.iter().zip(&want) {
        assert_eq!(g.len(), w.len());
        for (a, b) in g.iter().zip(w) {
            match (a.parse::<f64>(), b.parse::<f64>()) {
                (Ok(x), Ok(y)) => assert!((x - y).abs() <= 1e-9 * (1.0 + y.abs()), "{a} vs {b}"),
                _ => assert_eq!(a, b),
            }
        }
    }
}
