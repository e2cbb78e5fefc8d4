use oyldp::convex::{inf_convolution, legendre_transform, GridSpec, SampledFunction};
use oyldp::optim::Interval;
use oyldp::quad::adaptive_simpson;
use oyldp::rates::*;
use oyldp::specfun::{digamma, inv_trigamma, ln_gamma, trigamma};
use proptest::prelude::*;

fn shape(s: f64, t: f64) -> Shape {
    Shape::new(s, t).unwrap()
}

/// Plain golden-section search on [a, b], independent of the library's optimizer.
fn golden_min<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    while b - a > tol {
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - r * (b - a);
        d = a + r * (b - a);
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

fn first_moment_rate(s: f64, t: f64) -> f64 {
    t / 2.0 + s + s * (t / s).ln()
}

#[test]
fn free_energy_matches_golden_section() {
    let (_, v) = golden_min(|th| th - digamma(th).unwrap(), 1e-6, 50.0, 1e-11);
    assert!((free_energy(shape(1.0, 1.0)).unwrap() - v).abs() < 1e-10);
}

#[test]
fn free_energy_homogeneous_and_first_order_condition() {
    for &(s, t) in &[(1.0, 1.0), (0.3, 2.0), (4.0, 0.5)] {
        let a = free_energy(shape(s, t)).unwrap();
        let b = free_energy(shape(3.5 * s, 3.5 * t)).unwrap();
        assert!((b - 3.5 * a).abs() < 1e-10 * b.abs().max(1.0));
    }
    let th = free_energy_minimizer(shape(2.0, 0.7)).unwrap();
    assert!((0.7 - 2.0 * trigamma(th).unwrap()).abs() <= 1e-9);
}

#[test]
fn lyapunov_examples() {
    assert_eq!(lyapunov(shape(1.3, 0.4), 0.0).unwrap(), 0.0);
    for &(s, t) in &[(1.0, 1.0), (2.0, 3.0), (0.5, 4.0), (3.0, 0.25)] {
        let v = lyapunov(shape(s, t), 1.0).unwrap();
        assert!((v - first_moment_rate(s, t)).abs() < 1e-9, "(s,t)=({s},{t})");
    }
    let rho = free_energy(shape(1.0, 1.0)).unwrap();
    assert_eq!(lyapunov(shape(1.0, 1.0), -2.0).unwrap(), -2.0 * rho);
}

#[test]
fn first_moment_limit_by_stirling() {
    // (1/n) log E Z_{1,ns}(0,nt) = (1/n)[(ns−1) log(nt) − log Γ(ns) + nt/2]
    let (s, t) = (1.5, 0.8);
    let target = first_moment_rate(s, t);
    let finite = |n: f64| ((n * s - 1.0) * (n * t).ln() - ln_gamma(n * s).unwrap() + n * t / 2.0) / n;
    let e1 = (finite(1e4) - target).abs();
    let e2 = (finite(1e5) - target).abs();
    assert!(e2 < e1 && e2 < 1e-3);
    assert!((lyapunov(shape(s, t), 1.0).unwrap() - target).abs() < 1e-9);
}

#[test]
fn dual_form_agrees() {
    let sh = shape(1.0, 1.0);
    assert!((lyapunov_dual_form(sh, 0.5).unwrap() - lyapunov(sh, 0.5).unwrap()).abs() < 1e-10);
    let v = lyapunov_dual_form(shape(2.0, 3.0), 1.0).unwrap();
    assert!((v - (1.5 + 2.0 + 2.0 * 1.5f64.ln())).abs() < 1e-9);
    let th = lyapunov_dual_minimizer(sh, 0.7).unwrap().theta;
    let mu = lyapunov_detail(sh, 0.7).unwrap().mu.unwrap();
    assert!((th - mu - 0.7).abs() < 1e-8);
    assert!(lyapunov_dual_form(sh, 0.0).is_err());
}

#[test]
fn rate_function_examples() {
    let sh = shape(1.0, 1.0);
    let rho = free_energy(sh).unwrap();
    assert_eq!(rate_function(sh, rho).unwrap(), 0.0);
    assert_eq!(rate_function(sh, rho - 0.1).unwrap(), f64::INFINITY);
    let lam = lyapunov_sampled(sh, GridSpec::new(0.0, 20.0, 20001).unwrap()).unwrap();
    let x = rho + 1.0;
    let conj = legendre_transform(&lam, x, x + 1.0, 2).unwrap();
    assert!((rate_function(sh, x).unwrap() - conj.values()[0]).abs() < 1e-4);
}

#[test]
fn stationary_u_examples() {
    let (s, th) = (1.0, 1.0);
    let x0 = -s * digamma(th).unwrap();
    assert_eq!(stationary_rate_u(s, th, x0).unwrap(), 0.0);
    assert_eq!(stationary_rate_u(0.0, 2.0, 1.5).unwrap(), 3.0);
    // Cramér oracle: sup_ξ {ξx − log Γ(θ−ξ)/Γ(θ)} on a fine grid, then refined
    let x = 1.0;
    let obj = |xi: f64| -(xi * x - (ln_gamma(th - xi).unwrap() - ln_gamma(th).unwrap()));
    let n = 100_000;
    let mut best = (0.0, f64::INFINITY);
    for k in 0..n {
        let xi = th * k as f64 / n as f64;
        let v = obj(xi);
        if v < best.1 {
            best = (xi, v);
        }
    }
    let (_, v) = golden_min(obj, (best.0 - 1e-4).max(0.0), (best.0 + 1e-4).min(th - 1e-12), 1e-13);
    assert!((stationary_rate_u(s, th, x).unwrap() + v).abs() < 1e-6);
}

#[test]
fn brownian_r_examples() {
    assert_eq!(brownian_rate_r(2.0, 0.7, -1.4).unwrap(), 0.0);
    assert!((brownian_rate_r(1.0, 1.0, 0.0).unwrap() - 0.5).abs() < 1e-15);
    assert!((brownian_rate_r(4.0, 0.5, 2.0).unwrap() - 2.0).abs() < 1e-15);
}

#[test]
fn conjugate_examples() {
    assert_eq!(dual_u_star(1.0, 1.5, 0.0).unwrap(), 0.0);
    assert_eq!(dual_u_star(1.0, 1.5, 1.5).unwrap(), f64::INFINITY);
    assert_eq!(dual_u_star(1.0, 1.5, -0.1).unwrap(), f64::INFINITY);
    assert_eq!(dual_r_star(1.0, 1.5, -0.1).unwrap(), f64::INFINITY);
    let (t, th) = (1.0, 1.0);
    let grid = GridSpec::new(-th * t - 5.0, 20.0, 25001).unwrap();
    let r = SampledFunction::from_fn(grid, |x| brownian_rate_r(t, th, x).unwrap()).unwrap();
    let rs = legendre_transform(&r, 0.0, 3.0, 301).unwrap();
    for (i, xi) in rs.grid().nodes().enumerate() {
        assert!((rs.values()[i] - dual_r_star(t, th, xi).unwrap()).abs() < 1e-4, "xi={xi}");
    }
}

#[test]
fn r_conjugate_closed_form_matches_numeric() {
    let (t, th) = (1.0, 1.0);
    let grid = GridSpec::new(-3.0, 10.0, 13001).unwrap();
    let r = SampledFunction::from_fn(grid, |x| brownian_rate_r(t, th, x).unwrap()).unwrap();
    let rs = legendre_transform(&r, 0.0, 3.0, 4).unwrap();
    for (i, xi) in [0.0, 1.0, 2.0, 3.0].iter().enumerate() {
        assert!((rs.values()[i] - dual_r_star(t, th, *xi).unwrap()).abs() < 1e-4);
    }
}

#[test]
fn inf_convolution_of_r_and_u_at_zero() {
    let (t, s, th) = (1.0, 1.0, 1.0);
    let h = 0.005;
    let rg = GridSpec::new(-12.0, 12.0, 4801).unwrap();
    let ug = GridSpec::new(-6.0, 6.0, 2401).unwrap();
    assert!((rg.step() - h).abs() < 1e-12);
    let r = SampledFunction::from_fn(rg, |x| brownian_rate_r(t, th, x).unwrap()).unwrap();
    let u = SampledFunction::from_fn(ug, |x| stationary_rate_u(s, th, x).unwrap()).unwrap();
    let k = inf_convolution(&r, &u, GridSpec::new(-1.0, 1.0, 3).unwrap()).unwrap();
    // brute force at 10× finer resolution
    let mut best = f64::INFINITY;
    for i in 0..=240_000 {
        let y = -6.0 + i as f64 * 5e-5;
        best = best.min(brownian_rate_r(t, th, -y).unwrap() + stationary_rate_u(s, th, y).unwrap());
    }
    assert!((k.values()[1] - best).abs() < 1e-4);
}

#[test]
fn duality_of_inf_convolution_and_addition() {
    let (t, s, th) = (1.0, 1.0, 1.0);
    let rg = GridSpec::new(-12.0, 25.0, 7401).unwrap();
    let ug = GridSpec::new(-8.0, 25.0, 6601).unwrap();
    let r = SampledFunction::from_fn(rg, |x| brownian_rate_r(t, th, x).unwrap()).unwrap();
    let u = SampledFunction::from_fn(ug, |x| stationary_rate_u(s, th, x).unwrap()).unwrap();
    let k = inf_convolution(&r, &u, GridSpec::new(-10.0, 12.0, 4401).unwrap()).unwrap();
    let ks = legendre_transform(&k, 0.05, 0.9, 18).unwrap();
    for (i, xi) in ks.grid().nodes().enumerate() {
        let sum = dual_r_star(t, th, xi).unwrap() + dual_u_star(s, th, xi).unwrap();
        assert!((ks.values()[i] - sum).abs() < 5e-4, "xi={xi}");
    }
}

#[test]
fn j_gue_matches_quadrature() {
    assert_eq!(j_gue(0.0).unwrap(), 0.0);
    let mut prev = 0.0;
    for &r in &[0.1f64, 0.5, 1.0, 2.0, 5.0] {
        // x = u² removes the square-root singularity at the origin
        let q = adaptive_simpson(|u| 8.0 * u * u * (u * u + 2.0).sqrt(), 0.0, r.sqrt(), 1e-13).unwrap();
        let v = j_gue(r).unwrap();
        assert!((v - q).abs() < 1e-10, "r={r}");
        assert!(v > prev);
        prev = v;
    }
    assert!(j_gue(-0.1).is_err());
}

#[test]
fn variational_solver_examples() {
    let sp = VariationalSpec::new(|th| th, |th| -digamma(th).unwrap(), Interval::POSITIVE, 1.0, 1.0).unwrap();
    sp.validate(&[0.2, 1.0, 5.0]).unwrap();
    let sol = solve_variational(&sp).unwrap();
    assert!((sol.value - free_energy(shape(1.0, 1.0)).unwrap()).abs() < 1e-10);

    let xi = 1.0;
    let sp = VariationalSpec::new(
        move |th| -0.5 * xi * xi + th * xi,
        move |th| ln_gamma(th - xi).unwrap() - ln_gamma(th).unwrap(),
        Interval::new(xi, f64::INFINITY),
        1.0,
        1.0,
    )
    .unwrap();
    let sol = solve_variational(&sp).unwrap();
    assert!((sol.value - lyapunov(shape(1.0, 1.0), 1.0).unwrap()).abs() < 1e-9);
    assert!((sol.value - 1.5).abs() < 1e-9);

    let mut last = 0.0;
    for &nu in &[0.5, 1.0, 2.0] {
        let sp = VariationalSpec::new(|th| th, |th| -digamma(th).unwrap(), Interval::POSITIVE, 1.0, nu).unwrap();
        let th = solve_variational(&sp).unwrap().theta;
        assert!((th - inv_trigamma(1.0 / nu).unwrap()).abs() < 1e-7);
        assert!(th > last);
        last = th;
    }
}

#[test]
fn variational_solver_rejects_monotone_objective() {
    let sp = VariationalSpec::new(|th| th, |th| -0.5 * th, Interval::REAL_LINE, 1.0, 1.0).unwrap();
    assert!(matches!(solve_variational(&sp), Err(oyldp::Error::Bracket { .. })));
    assert!(sp.validate(&[0.0]).is_err());
}

#[test]
fn lyapunov_differentiable_at_zero() {
    for &(s, t) in &[(1.0, 1.0), (0.4, 2.5), (3.0, 0.6)] {
        let sh = shape(s, t);
        let rho = free_energy(sh).unwrap();
        for &h in &[1e-3, 1e-4] {
            let d = (lyapunov(sh, h).unwrap() - lyapunov(sh, -h).unwrap()) / (2.0 * h);
            assert!((d - rho).abs() < 10.0 * h, "(s,t)=({s},{t}) h={h}");
        }
    }
}

#[test]
fn curvature_matches_finite_difference() {
    let sh = shape(1.2, 0.9);
    for &xi in &[0.3, 1.0, 4.0] {
        let p = lyapunov_detail(sh, xi).unwrap();
        let h = 1e-4;
        let d1 = (lyapunov(sh, xi + h).unwrap() - lyapunov(sh, xi - h).unwrap()) / (2.0 * h);
        assert!((p.slope - d1).abs() < 1e-6);
        let d2 = (lyapunov_detail(sh, xi + h).unwrap().slope - lyapunov_detail(sh, xi - h).unwrap().slope) / (2.0 * h);
        assert!((p.curvature - d2).abs() < 1e-5);
        assert!(p.curvature > 0.0 && p.curvature <= sh.t());
    }
}

#[test]
fn gue_bound_below_rate_function() {
    let mut tested = 0;
    for &(s, t) in &[(1.0, 1.0), (0.5, 2.0), (2.0, 0.5), (1.0, 3.0)] {
        let sh = shape(s, t);
        let rho = free_energy(sh).unwrap();
        for k in 1..=12 {
            let r = rho + 0.75 * k as f64;
            if let Some(b) = gue_tail_bound(sh, r).unwrap() {
                assert!(rate_function(sh, r).unwrap() >= b, "(s,t,r)=({s},{t},{r})");
                tested += 1;
            }
        }
    }
    assert!(tested > 10);
}

#[test]
fn rate_g_examples() {
    let sh = shape(1.0, 1.0);
    let (a, th) = (0.25, 1.0);
    let thr = -th * (1.0 - a) + free_energy(shape(1.0, 1.0 - a)).unwrap();
    assert!(rate_g(a, sh, th, thr - 0.3).unwrap().abs() < 2e-3);

    // brute-force inf-convolution with the closed-form rate at 10× resolution
    let rho = free_energy(sh).unwrap();
    let x = rho + 2.0;
    let mut best = f64::INFINITY;
    let (lo, hi) = (rho, x + th);
    let n = ((hi - lo) / 5e-4) as usize;
    for i in 0..=n {
        let y = lo + (hi - lo) * i as f64 / n as f64;
        best = best.min(brownian_rate_r(1.0, th, x - y).unwrap() + rate_function(sh, y).unwrap());
    }
    assert!((rate_g(0.0, sh, th, x).unwrap() - best).abs() < 5e-3);
}

#[test]
fn rate_h_without_boundary_mass_reduces_to_g() {
    let sh = shape(1.0, 1.0);
    let th = 2.0;
    let x = free_energy(sh).unwrap() - th + 0.5;
    let h = rate_h(1e-9, 0.0, sh, th, x).unwrap();
    let g = rate_g(0.0, sh, th, x).unwrap();
    assert!((h - g).abs() < 5e-3, "h={h} g={g}");
    assert!(h > 0.0);
}

#[test]
fn variational_identity_on_unit_shape() {
    let sh = shape(1.0, 1.0);
    let x0 = -digamma(1.0).unwrap();
    let xs: Vec<f64> = (0..21).map(|i| x0 - 1.0 + 0.2 * i as f64).collect();
    let rep = verify_variational_identity(sh, 1.0, &xs, &InfConvSettings::default(), 5e-3).unwrap();
    assert!(rep.passed(), "{}", rep.to_table());
}

#[test]
fn variational_identity_zero_branch_and_scaling() {
    let cfg = InfConvSettings::default();
    let sh = shape(1.0, 1.0);
    let x0 = -digamma(1.0).unwrap();
    let deep = [x0 - 1.5, x0 - 1.0];
    let sides = variational_sides(sh, 1.0, &deep, &cfg).unwrap();
    for i in 0..2 {
        assert_eq!(sides.u[i], 0.0);
        assert!(sides.inf_g[i].min(sides.inf_h[i]) < 1e-6);
    }
    let xs: Vec<f64> = (0..6).map(|i| 2.0 * x0 - 1.0 + 0.8 * i as f64).collect();
    let rep = verify_variational_identity(shape(2.0, 2.0), 1.0, &xs, &cfg, 5e-3).unwrap();
    assert!(rep.passed(), "{}", rep.to_table());
}

#[test]
fn curve_export_has_json_header() {
    let c = tabulate("lyapunov", shape(1.0, 1.0), 1.0, GridSpec::new(0.0, 3.0, 301).unwrap()).unwrap();
    let csv = c.to_csv();
    let mut lines = csv.lines();
    let header: serde_json::Value = serde_json::from_str(lines.next().unwrap().trim_start_matches("# ")).unwrap();
    assert_eq!(header["s"], 1.0);
    assert_eq!(lines.next().unwrap(), "parameter,value");
    let row: Vec<f64> = lines.nth(100).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert!((row[0] - 1.0).abs() < 1e-15 && (row[1] - 1.5).abs() < 1e-9);
    let r = tabulate("rate", shape(1.0, 1.0), 1.0, GridSpec::new(0.0, 3.0, 4).unwrap()).unwrap();
    assert!(r.to_csv().contains("inf"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn lyapunov_convex(s in 0.2f64..5.0, t in 0.2f64..5.0, xi in -3.0f64..3.0) {
        let sh = shape(s, t);
        let h = 0.05;
        let v = |x| lyapunov(sh, x).unwrap();
        prop_assert!(v(xi - h) - 2.0 * v(xi) + v(xi + h) >= -1e-10);
    }

    #[test]
    fn lyapunov_homogeneous(s in 0.2f64..5.0, t in 0.2f64..5.0, xi in -3.0f64..3.0, c in 0.3f64..4.0) {
        let a = lyapunov(shape(s, t), xi).unwrap();
        let b = lyapunov(shape(c * s, c * t), xi).unwrap();
        prop_assert!((b - c * a).abs() < 1e-9 * b.abs().max(1.0));
    }

    #[test]
    fn rate_nonnegative_convex_nondecreasing(s in 0.3f64..3.0, t in 0.3f64..3.0, d in 0.05f64..4.0) {
        let sh = shape(s, t);
        let rho = free_energy(sh).unwrap();
        let h = 0.02;
        let i0 = rate_function(sh, rho + d).unwrap();
        let ip = rate_function(sh, rho + d + h).unwrap();
        let im = rate_function(sh, rho + d - h).unwrap();
        prop_assert!(i0 > 0.0);
        prop_assert!(ip >= i0 && i0 >= im);
        prop_assert!(ip - 2.0 * i0 + im >= -1e-9);
    }

    #[test]
    fn rate_homogeneous(s in 0.3f64..3.0, t in 0.3f64..3.0, d in 0.05f64..3.0, c in 0.5f64..3.0) {
        let sh = shape(s, t);
        let x = free_energy(sh).unwrap() + d;
        let a = rate_function(sh, x).unwrap();
        let b = rate_function(shape(c * s, c * t), c * x).unwrap();
        prop_assert!((b - c * a).abs() < 1e-9 * b.abs().max(1.0));
    }

    #[test]
    fn u_is_convex_and_matches_conjugate(s in 0.1f64..3.0, th in 0.2f64..4.0, xi_frac in 0.05f64..0.95) {
        // Fenchel-Young with equality at the slope-matched point
        let xi = xi_frac * th;
        let x = -s * digamma(th - xi).unwrap();
        let lhs = stationary_rate_u(s, th, x).unwrap() + dual_u_star(s, th, xi).unwrap();
        prop_assert!((lhs - x * xi).abs() < 1e-9 * (x * xi).abs().max(1.0));
        let h = 0.01;
        let u = |y| stationary_rate_u(s, th, y).unwrap();
        prop_assert!(u(x - h) - 2.0 * u(x) + u(x + h) >= -1e-12);
    }
}

#[test]
fn lyapunov_biconjugate_roundtrip() {
    let sh = shape(1.0, 1.0);
    let lam = lyapunov_sampled(sh, GridSpec::new(-3.0, 3.0, 6001).unwrap()).unwrap();
    let rho = free_energy(sh).unwrap();
    let top = lyapunov_detail(sh, 3.0).unwrap().slope;
    let back = oyldp::convex::biconjugate(&lam, rho - 1.0, top + 1.0, 20001).unwrap();
    for i in 0..lam.len() {
        assert!((back.values()[i] - lam.values()[i]).abs() < 2e-3, "xi={}", lam.x(i));
    }
}
