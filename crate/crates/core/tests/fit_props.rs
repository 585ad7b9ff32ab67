use approx::assert_relative_eq;
use esr_core::fit::*;
use proptest::prelude::*;

/// y = a·exp(−x/t) + c, with an analytic gradient.
struct Decay;

impl Model for Decay {
    type Input = f64;

    fn predict(&self, p: &[f64], x: &f64) -> f64 {
        p[0] * (-x / p[1]).exp() + p[2]
    }

    fn has_gradient(&self) -> bool {
        true
    }

    fn gradient(&self, p: &[f64], x: &f64, g: &mut [f64]) {
        let e = (-x / p[1]).exp();
        g[0] = e;
        g[1] = p[0] * e * x / (p[1] * p[1]);
        g[2] = 1.0;
    }
}

fn xs() -> Vec<f64> {
    (0..60).map(|i| i as f64 * 0.1).collect()
}

fn specs(a: f64, t: f64, c: f64) -> Vec<ParameterSpec> {
    vec![
        ParameterSpec::positive("a", a),
        ParameterSpec::positive("t", t),
        ParameterSpec::free("c", c),
    ]
}

/// Deterministic pseudo-noise so the property tests do not need a seed strategy.
fn wiggle(i: usize) -> f64 {
    ((i as f64 * 12.9898).sin() * 43758.5453).fract() - 0.5
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn analytic_gradient_matches_finite_differences(a in 0.5f64..5.0, t in 0.3f64..3.0, c in -1.0f64..1.0, x in 0.0f64..6.0) {
        let p = [a, t, c];
        let mut g = [0.0; 3];
        Decay.gradient(&p, &x, &mut g);
        for j in 0..3 {
            let h = 1e-6 * p[j].abs().max(1e-3);
            let mut hi = p;
            let mut lo = p;
            hi[j] += h;
            lo[j] -= h;
            let fd = (Decay.predict(&hi, &x) - Decay.predict(&lo, &x)) / (2.0 * h);
            assert_relative_eq!(g[j], fd, max_relative = 1e-6, epsilon = 1e-9);
        }
    }

    #[test]
    fn noiseless_data_is_recovered(a in 0.5f64..5.0, t in 0.3f64..3.0, c in -1.0f64..1.0) {
        let x = xs();
        let y: Vec<f64> = x.iter().map(|x| Decay.predict(&[a, t, c], x)).collect();
        let fit = least_squares(&Decay, &x, &y, None, &specs(1.0, 1.0, 0.0), &FitOptions::default()).unwrap();
        prop_assert!(fit.converged, "{}", fit.message);
        assert_relative_eq!(fit.parameters[0], a, max_relative = 1e-6);
        assert_relative_eq!(fit.parameters[1], t, max_relative = 1e-6);
        assert_relative_eq!(fit.parameters[2], c, epsilon = 1e-6);
    }

    #[test]
    fn frozen_parameters_stay_put(a in 0.5f64..5.0, t in 0.3f64..3.0, c in -1.0f64..1.0) {
        let x = xs();
        let y: Vec<f64> = x.iter().map(|x| Decay.predict(&[a, t, c], x)).collect();
        let mut s = specs(1.0, t, 0.0);
        s[1] = s[1].clone().frozen();
        let fit = least_squares(&Decay, &x, &y, None, &s, &FitOptions::default()).unwrap();
        prop_assert_eq!(fit.parameters[1], t);
        prop_assert_eq!(fit.standard_errors[1], 0.0);
        prop_assert_eq!(fit.n_free, 2);
        assert_relative_eq!(fit.parameters[0], a, max_relative = 1e-6);
    }

    #[test]
    fn data_order_does_not_matter(a in 0.5f64..5.0, t in 0.3f64..3.0, rot in 1usize..59) {
        let x = xs();
        let y: Vec<f64> = x.iter().enumerate().map(|(i, x)| Decay.predict(&[a, t, 0.2], x) + 0.01 * wiggle(i)).collect();
        let fit = least_squares(&Decay, &x, &y, None, &specs(1.0, 1.0, 0.0), &FitOptions::default()).unwrap();
        let mut xr = x.clone();
        let mut yr = y.clone();
        xr.rotate_left(rot);
        yr.rotate_left(rot);
        xr.reverse();
        yr.reverse();
        let fit_r = least_squares(&Decay, &xr, &yr, None, &specs(1.0, 1.0, 0.0), &FitOptions::default()).unwrap();
        for j in 0..3 {
            assert_relative_eq!(fit.parameters[j], fit_r.parameters[j], max_relative = 1e-6, epsilon = 1e-9);
        }
        assert_relative_eq!(fit.chi_squared, fit_r.chi_squared, max_relative = 1e-8);
    }

    #[test]
    fn accepted_steps_never_increase_chi_squared(a in 0.5f64..5.0, t in 0.3f64..3.0) {
        let x = xs();
        let y: Vec<f64> = x.iter().enumerate().map(|(i, x)| Decay.predict(&[a, t, 0.0], x) + 0.05 * wiggle(i)).collect();
        let fit = least_squares(&Decay, &x, &y, None, &specs(3.0, 2.0, 0.5), &FitOptions::default()).unwrap();
        prop_assert!(fit.chi_squared_history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn bounds_are_respected(a in 0.5f64..5.0, t in 0.3f64..3.0) {
        let x = xs();
        let y: Vec<f64> = x.iter().map(|x| Decay.predict(&[a, t, 0.0], x)).collect();
        let mut s = specs(0.2, 1.0, 0.0);
        s[0] = ParameterSpec::bounded("a", 0.2, 0.1, 0.4);
        let fit = least_squares(&Decay, &x, &y, None, &s, &FitOptions::default()).unwrap();
        prop_assert!(fit.parameters[0] >= 0.1 && fit.parameters[0] <= 0.4);
    }
}

#[test]
fn non_finite_jacobian_terminates() {
    // With `a` capped below the truth, t collapses until t² underflows and the gradient is 0·∞.
    let x = xs();
    let y: Vec<f64> = x.iter().map(|x| Decay.predict(&[1.8846153846153846, 2.5846153846153846, 0.0], x)).collect();
    let mut s = specs(0.2, 1.0, 0.0);
    s[0] = ParameterSpec::bounded("a", 0.2, 0.1, 0.4);
    let fit = least_squares(&Decay, &x, &y, None, &s, &FitOptions::default()).unwrap();
    assert!(fit.parameters[0] >= 0.1 && fit.parameters[0] <= 0.4);
    assert!(fit.standard_errors.iter().all(|e| e.is_nan() || *e >= 0.0));
}

#[test]
fn analytic_and_numeric_jacobians_agree() {
    let x = xs();
    let y: Vec<f64> = x.iter().enumerate().map(|(i, x)| Decay.predict(&[2.0, 1.3, 0.1], x) + 0.02 * wiggle(i)).collect();
    let analytic = least_squares(&Decay, &x, &y, None, &specs(1.0, 1.0, 0.0), &FitOptions::default()).unwrap();
    let numeric = least_squares(
        &Decay,
        &x,
        &y,
        None,
        &specs(1.0, 1.0, 0.0),
        &FitOptions { analytic_gradient: false, ..FitOptions::default() },
    )
    .unwrap();
    for j in 0..3 {
        assert_relative_eq!(analytic.parameters[j], numeric.parameters[j], max_relative = 1e-6);
        assert_relative_eq!(analytic.standard_errors[j], numeric.standard_errors[j], max_relative = 1e-4);
    }
}

#[test]
fn covariance_matches_linear_regression_formula() {
    // For y = m·x + b the covariance is σ²·(XᵀX)⁻¹ with σ² = χ²/dof.
    let x: Vec<f64> = (0..20).map(|i| i as f64).collect();
    let y: Vec<f64> = x.iter().enumerate().map(|(i, x)| 3.0 * x + 1.0 + wiggle(i)).collect();
    let line = FnModel::new(|p: &[f64], x: &f64| p[0] * x + p[1]);
    let fit = least_squares(
        &line,
        &x,
        &y,
        None,
        &[ParameterSpec::free("m", 1.0), ParameterSpec::free("b", 0.0)],
        &FitOptions::default(),
    )
    .unwrap();
    let n = x.len() as f64;
    let sx: f64 = x.iter().sum();
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    let det = n * sxx - sx * sx;
    let s2 = fit.chi_squared / (n - 2.0);
    assert_relative_eq!(fit.covariance[0][0], s2 * n / det, max_relative = 1e-6);
    assert_relative_eq!(fit.covariance[1][1], s2 * sxx / det, max_relative = 1e-6);
    assert_relative_eq!(fit.covariance[0][1], -s2 * sx / det, max_relative = 1e-6);
}

#[test]
fn aic_ranking_prefers_fewer_parameters_on_ties() {
    let x = xs();
    let y: Vec<f64> = x.iter().map(|x| Decay.predict(&[2.0, 1.0, 0.0], x)).collect();
    let fit = least_squares(&Decay, &x, &y, None, &specs(1.0, 1.0, 0.0), &FitOptions::default()).unwrap();
    let mut fewer = fit.clone();
    fewer.n_free = 2;
    let ranking = compare_models(&[&fit, &fewer]).unwrap();
    assert_eq!(ranking.best().index, 1);
    let ranking = compare_models(&[&fit, &fit.clone()]).unwrap();
    assert_eq!(ranking.best().index, 0);
}

#[test]
fn malformed_input_is_an_error() {
    let x = xs();
    let y = vec![0.0; 3];
    assert!(least_squares(&Decay, &x, &y, None, &specs(1.0, 1.0, 0.0), &FitOptions::default()).is_err());
}
