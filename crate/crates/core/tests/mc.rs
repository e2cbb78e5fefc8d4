use oyldp::mc::*;
use oyldp::rates::{free_energy, Shape};
use oyldp::sim::{log_partition, stream_rng, EnvGrid, EnvSpec};
use oyldp::specfun::gamma_cdf;
use oyldp::Error;
use rand::Rng;
use rand_distr::StandardNormal;

fn shape(s: f64, t: f64) -> Shape {
    Shape::new(s, t).unwrap()
}

/// Standard normal CDF through the regularized incomplete gamma function.
fn normal_cdf(x: f64) -> f64 {
    let half = 0.5 * gamma_cdf(0.5, 0.5 * x * x).unwrap();
    if x >= 0.0 {
        0.5 + half
    } else {
        0.5 - half
    }
}

#[test]
fn first_moment_two_lines() {
    // N = 2 lines on [0, 1]: log E[Z] = log 1 + 1/2
    let s = mc_log_first_moment(shape(2.0, 1.0), 1, 1e-3, 10_000, 3).unwrap();
    assert!((s.mean - 0.5).abs() < 3.0 * s.std_error, "{s:?}");
    assert!(s.ci_low <= s.mean && s.mean <= s.ci_high);
    assert!((log_first_moment_exact(2, 1.0) - 0.5).abs() < 1e-14);
    assert!((log_first_moment_exact(3, 2.0) - (2f64.ln() + 1.0)).abs() < 1e-14);
}

#[test]
fn zero_environment_has_no_monte_carlo_error() {
    let env = EnvGrid::zeros(EnvSpec::new(3, 2.0, 1e-3, 0.0, false).unwrap()).unwrap();
    let l = log_partition(&env, 0, 2, 0.0, 2.0).unwrap().value();
    let s = summarize_log_moment(&vec![l; 200], 1.0, 1, 0, "zero");
    assert!((s.mean - log_chamber_volume(3, 2.0)).abs() < 5e-3);
    assert!(s.std_error < 1e-12);
    assert!(s.warnings.is_empty());
}

#[test]
fn finite_n_first_moment_sequence() {
    // every grid path has energy variance T, so the grid mean is exact up to
    // the discrete chamber volume and a coarse step suffices
    let out = mc_lyapunov(shape(1.0, 1.0), 1.0, &[2, 3, 4, 5, 6, 7, 8], 1e-2, 20_000, 11).unwrap();
    for s in &out {
        let n = s.n.unwrap();
        let exact = log_first_moment_exact(n, n as f64) / n as f64;
        assert!((s.mean - exact).abs() < 3.0 * s.std_error, "n {n}: {} vs {exact} (se {})", s.mean, s.std_error);
    }
}

#[test]
fn zero_moment_is_exactly_zero() {
    for s in mc_lyapunov(shape(1.0, 1.0), 0.0, &[2, 3, 5], 1e-2, 200, 1).unwrap() {
        assert_eq!(s.mean, 0.0);
        assert_eq!(s.std_error, 0.0);
    }
}

#[test]
fn negative_moment_respects_jensen() {
    let sh = shape(1.0, 1.0);
    let n = 4;
    let s = mc_lyapunov(sh, -1.0, &[n], 1e-3, 4000, 5).unwrap().remove(0);
    let jensen = -log_first_moment_exact(n, n as f64) / n as f64;
    assert!(s.mean >= jensen - 3.0 * s.std_error, "{} vs {jensen}", s.mean);
    assert!(s.mean >= -free_energy(sh).unwrap() - 0.5);
}

#[test]
fn heavy_tail_flag() {
    let mut logs = vec![0.0; 200];
    logs[17] = 50.0;
    let s = summarize_log_moment(&logs, 1.0, 1, 0, "d");
    assert!(s.warnings.iter().any(|w| w.contains("heavy tail")));
    let s = summarize_log_moment(&logs, 0.0, 1, 0, "d");
    assert!(s.warnings.is_empty());
}

#[test]
fn moment_bounds_hold() {
    for xi in [2.0, -2.0] {
        let rep = check_moment_bound(shape(3.0, 1.0), xi, 1, 1e-3, 2000, 8).unwrap();
        assert!(rep.passed(), "{}", rep.to_table());
    }
    assert!(check_moment_bound(shape(3.0, 1.0), 1.0, 1, 1e-3, 2000, 8).is_err());
}

#[test]
fn moment_bound_is_strict_in_zero_environment() {
    let env = EnvGrid::zeros(EnvSpec::new(3, 1.0, 1e-3, 0.0, false).unwrap()).unwrap();
    let l = log_partition(&env, 0, 2, 0.0, 1.0).unwrap().value();
    for xi in [2.0, -2.0] {
        let s = summarize_log_moment(&vec![l; 100], xi, 1, 0, "zero");
        let volume = xi * log_chamber_volume(3, 1.0);
        assert!((s.mean - volume).abs() < 1e-2);
        let bound = volume + 0.5 * xi * xi;
        assert!((bound - s.mean - 0.5 * xi * xi).abs() < 1e-2);
    }
}

#[test]
fn typical_deviation_has_rate_tending_to_zero() {
    let sh = shape(1.0, 1.0);
    let out = mc_tail_probability(sh, free_energy(sh).unwrap() - 1.0, &[2, 4, 8, 16], 1e-2, 1000, 4).unwrap();
    for w in out.windows(2) {
        assert!(w[1].mean <= w[0].mean + 3.0 * w[0].std_error, "{w:?}");
    }
    let last = out.last().unwrap();
    assert!(!last.censored && last.mean < 0.01, "{last:?}");
}

#[test]
fn tail_rates_nondecreasing_in_level() {
    let sh = shape(1.0, 1.0);
    let rho = free_energy(sh).unwrap();
    let mut prev = vec![f64::NEG_INFINITY; 3];
    for dr in [-0.5, 0.0, 0.25, 0.5] {
        let out = mc_tail_probability(sh, rho + dr, &[2, 3, 4], 1e-2, 2000, 6).unwrap();
        for (p, s) in prev.iter_mut().zip(&out) {
            assert!(s.mean >= *p, "{s:?}");
            assert!(s.ci_low <= s.mean && s.mean <= s.ci_high);
            *p = s.mean;
        }
    }
}

#[test]
fn unreachable_level_is_censored() {
    let out = mc_tail_probability(shape(1.0, 1.0), 50.0, &[2, 3], 1e-2, 200, 4).unwrap();
    for s in &out {
        assert!(s.censored && s.mean.is_finite() && s.ci_high.is_infinite());
        assert!(s.warnings.iter().any(|w| w.contains("censored")));
    }
}

#[test]
fn ks_calibration_over_meta_trials() {
    let mut below = 0;
    for trial in 0..100 {
        let mut rng = stream_rng(2024, trial, 0);
        let u: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>()).collect();
        let (d, crit) = ks_test(&u, |x| x.clamp(0.0, 1.0)).unwrap();
        if d < crit["0.01"] {
            below += 1;
        }
    }
    assert!(below >= 95, "{below}/100");
}

#[test]
fn ks_detects_shifted_law() {
    let mut rng = stream_rng(5, 0, 0);
    let z: Vec<f64> = (0..10_000).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let (d0, crit) = ks_test(&z, normal_cdf).unwrap();
    assert!(d0 < crit["0.01"]);
    let (d, crit) = ks_test(&z, |x| normal_cdf(x - 0.5)).unwrap();
    assert!(d > crit["0.01"], "{d}");
}

#[test]
fn ks_input_contract() {
    assert!(matches!(ks_test(&[], |x| x), Err(Error::Precondition(_))));
    let small: Vec<f64> = (0..99).map(f64::from).collect();
    assert!(matches!(ks_test(&small, |x| x), Err(Error::Precondition(_))));
    assert!(matches!(ks_test(&[1.0; 150], |x| x), Err(Error::DegenerateSample(_))));
    let crit = ks_test(&(0..100).map(f64::from).collect::<Vec<_>>(), |x| x / 100.0).unwrap().1;
    assert!((crit["0.05"] - 0.1358).abs() < 1e-12);
}

#[test]
fn gue_identity_at_two_lines_and_negative_control() {
    let rep = gue_identity_test(2, 5000, 1e-4, 13).unwrap();
    assert!(rep.passed(), "{}", rep.to_table());
    let bad = gue_lpp_comparison(2, 5000, 1e-4, 13, 1.0).unwrap();
    assert!(!bad.passed());
    assert!(gue_identity_test(1, 5000, 1e-4, 13).is_err());
    assert!(gue_identity_test(11, 5000, 1e-4, 13).is_err());
}

#[test]
fn burke_report_passes() {
    let rep = burke_test(2.0, 2000, 1e-3, 15.0, 19).unwrap();
    assert!(rep.passed(), "{}", rep.to_table());
    assert_eq!(rep.provenance["seed"], 19);
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let run = |k| {
        with_threads(Some(k), || mc_lyapunov(shape(1.0, 1.0), 1.5, &[2, 3], 1e-2, 300, 99).unwrap()).unwrap()
    };
    let one = run(1);
    assert_eq!(one, run(3));
    assert_eq!(one, mc_lyapunov(shape(1.0, 1.0), 1.5, &[2, 3], 1e-2, 300, 99).unwrap());
    let other = mc_lyapunov(shape(1.0, 1.0), 1.5, &[2, 3], 1e-2, 300, 98).unwrap();
    assert_ne!(one[0].mean, other[0].mean);
    assert_ne!(one[0].config_digest, other[0].config_digest);
}

#[test]
fn standard_error_scales_with_replicates() {
    let se = |r| mc_log_first_moment(shape(2.0, 1.0), 1, 1e-2, r, 21).unwrap();
    let (a, b, c) = (se(500), se(2000), se(8000));
    let ratio = a.std_error / b.std_error;
    assert!((ratio - 2.0).abs() < 0.4, "ratio {ratio}");
    let ratio = b.std_error / c.std_error;
    assert!((ratio - 2.0).abs() < 0.4, "ratio {ratio}");
    // the estimator stays within its error bars as replicates grow
    for s in [a, b, c] {
        assert!((s.mean - 0.5).abs() < 3.0 * s.std_error + 5e-3, "{s:?}");
    }
}

#[test]
fn replicate_minimum_enforced() {
    assert!(mc_log_first_moment(shape(2.0, 1.0), 1, 1e-2, 99, 1).is_err());
    assert!(mc_lyapunov(shape(1.0, 1.0), 1.0, &[1], 1e-2, 100, 1).is_err());
    assert!(mc_lyapunov(shape(1.0, 1.0), 1.0, &[3, 2], 1e-2, 100, 1).is_err());
}

#[test]
fn summaries_serialize() {
    let s = mc_log_first_moment(shape(2.0, 1.0), 1, 1e-2, 100, 1).unwrap();
    let back: McSummary = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
    assert_eq!(back, s);
}

#[test]
fn spec_rejects_bad_grids() {
    assert!(EnvSpec::new(2, 1.0, 0.3, 0.0, false).is_err());
}
