use approx::assert_relative_eq;
use esr_core::power::*;
use esr_core::resonator::{circulating_power, drive_power_for_photons, photon_number, ResonatorFit};
use esr_core::synth::{log_grid, simulate_power_sweep, NoiseSpec, PowerLawTruth};
use proptest::prelude::*;

const HBAR: f64 = 6.626_070_15e-34 / (2.0 * std::f64::consts::PI);

fn tls(delta0: f64, q_tls: f64, n_c: f64, beta: f64) -> TlsLossParams {
    TlsLossParams { delta0, q_tls, n_c, beta }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn photon_number_is_proportional_to_drive(p in 1e-20f64..1e-10, k in 0.01f64..100.0, qi in 1e4f64..1e6, qc in 1e4f64..1e6) {
        let r = ResonatorFit::from_qi_qc(5e9, qi, qc, 0.0).unwrap();
        assert_relative_eq!(photon_number(k * p, &r).unwrap(), k * photon_number(p, &r).unwrap(), max_relative = 1e-12);
        assert_relative_eq!(circulating_power(k * p, &r).unwrap(), k * circulating_power(p, &r).unwrap(), max_relative = 1e-12);
        let w = 2.0 * std::f64::consts::PI * 5e9;
        let oracle = 2.0 * r.q_loaded * r.q_loaded * p / qc / (HBAR * w * w);
        assert_relative_eq!(photon_number(p, &r).unwrap(), oracle, max_relative = 1e-12);
        assert_relative_eq!(drive_power_for_photons(photon_number(p, &r).unwrap(), &r).unwrap(), p, max_relative = 1e-12);
    }

    #[test]
    fn tls_law_rescales_with_photon_units(n in 1e-2f64..1e7, k in 1e-3f64..1e3, beta in 0.05f64..1.0) {
        let p = tls(1e-6, 1e5, 10.0, beta);
        let q = tls(1e-6, 1e5, 10.0 * k, beta);
        assert_relative_eq!(tls_loss(k * n, &q).unwrap(), tls_loss(n, &p).unwrap(), max_relative = 1e-12);
    }

    #[test]
    fn tls_loss_decreases_with_power(n in 0.0f64..1e6, dn in 1e-3f64..1e6, beta in 0.05f64..1.0) {
        let p = tls(1e-6, 1e5, 1.0, beta);
        prop_assert!(tls_loss(n + dn, &p).unwrap() < tls_loss(n, &p).unwrap());
        prop_assert!(tls_loss(n + dn, &p).unwrap() > p.delta0);
    }

    #[test]
    fn saturation_loss_halves_at_psat_for_unit_epsilon(q0 in 1e-7f64..1e-4, psat in 1e-15f64..1e-6) {
        let s = SaturationParams { qb0_inverse: q0, p_sat: psat, epsilon: 1.0 };
        assert_relative_eq!(saturation_loss(psat, &s).unwrap(), q0 / 2.0, max_relative = 1e-12);
        assert_relative_eq!(saturation_loss(0.0, &s).unwrap(), q0, max_relative = 1e-15);
    }

    #[test]
    fn psat_and_t1e_are_inverse(t1 in 1e-7f64..1e-2, t2 in 1e-10f64..1e-6, alpha in 1e-3f64..10.0) {
        let a = FieldToPowerCoefficient::new(alpha).unwrap();
        let psat = saturation_power(t1, t2, a, 2.0).unwrap();
        assert_relative_eq!(invert_psat_for_t1e(psat, t2, a, 2.0).unwrap(), t1, max_relative = 1e-12);
    }
}

#[test]
fn noiseless_tls_sweep_round_trips() {
    let truth = tls(1e-6, 1.5e5, 1.0, 0.2);
    let n = log_grid(0.1, 1e6, 41);
    let sweep = simulate_power_sweep(&PowerLawTruth::Tls(truth), &n, &NoiseSpec::none()).unwrap();
    let fit = fit_tls_law(&sweep, &PowerFitOptions::default()).unwrap();
    assert!(fit.warnings.is_empty(), "{:?}", fit.warnings);
    assert_relative_eq!(fit.params.delta0, truth.delta0, max_relative = 1e-6);
    assert_relative_eq!(fit.params.q_tls, truth.q_tls, max_relative = 1e-6);
    assert_relative_eq!(fit.params.n_c, truth.n_c, max_relative = 1e-6);
    assert_relative_eq!(fit.params.beta, truth.beta, max_relative = 1e-6);
}

#[test]
fn tls_fit_is_equivariant_under_photon_rescaling() {
    let truth = tls(1e-6, 1.5e5, 1.0, 0.2);
    let n = log_grid(0.1, 1e6, 41);
    let sweep = simulate_power_sweep(&PowerLawTruth::Tls(truth), &n, &NoiseSpec::relative(0.05, 3)).unwrap();
    let k = 37.0;
    let scaled: Vec<(f64, f64)> = sweep.iter().map(|&(n, q)| (k * n, q)).collect();
    let a = fit_tls_law(&sweep, &PowerFitOptions::default()).unwrap();
    let b = fit_tls_law(&scaled, &PowerFitOptions::default()).unwrap();
    assert_relative_eq!(b.params.n_c, k * a.params.n_c, max_relative = 1e-5);
    assert_relative_eq!(b.params.beta, a.params.beta, max_relative = 1e-5);
    assert_relative_eq!(b.params.q_tls, a.params.q_tls, max_relative = 1e-5);
}

#[test]
fn noiseless_saturation_sweep_round_trips() {
    let truth = SaturationParams { qb0_inverse: 2e-6, p_sat: 0.71e-9, epsilon: 1.0 };
    let p = log_grid(0.71e-12, 0.71e-6, 41);
    let sweep = simulate_power_sweep(&PowerLawTruth::Saturation(truth), &p, &NoiseSpec::none()).unwrap();
    let fit = fit_saturation(&sweep, &PowerFitOptions::default()).unwrap();
    assert_relative_eq!(fit.params.qb0_inverse, truth.qb0_inverse, max_relative = 1e-6);
    assert_relative_eq!(fit.params.p_sat, truth.p_sat, max_relative = 1e-6);
    assert_relative_eq!(fit.params.epsilon, truth.epsilon, max_relative = 1e-6);
}

#[test]
fn flat_tls_sweep_reports_no_power_dependence() {
    let sweep: Vec<(f64, f64)> = log_grid(0.1, 1e6, 30).into_iter().map(|n| (n, 1e5)).collect();
    let fit = fit_tls_law(&sweep, &PowerFitOptions::default()).unwrap();
    assert!(fit.params.q_tls.is_infinite());
    assert!(fit.warnings.iter().any(|w| w.contains("beta pinned")));
}

#[test]
fn short_sweeps_are_rejected() {
    let sweep = vec![(1.0, 1e5); 3];
    assert!(fit_tls_law(&sweep, &PowerFitOptions::default()).is_err());
}
