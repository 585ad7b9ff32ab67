use approx::assert_relative_eq;
use esr_core::physics::*;
use proptest::prelude::*;

// Independent of the library constants.
const H: f64 = 6.626_070_15e-34;
const MU_B: f64 = 9.274_010_078_3e-24;

proptest! {
    #[test]
    fn field_and_frequency_are_inverse(f in 1e8f64..1e11, g in 0.5f64..4.0) {
        let b = resonance_field_for_g(f, g).unwrap();
        assert_relative_eq!(b, H * f / (g * MU_B), max_relative = 1e-12);
        assert_relative_eq!(resonance_frequency(b, g).unwrap(), f, max_relative = 1e-12);
        assert_relative_eq!(g_factor_from_peak(b, f).unwrap(), g, max_relative = 1e-12);
    }

    #[test]
    fn linewidth_rate_is_linear_and_invertible(db in 1e-6f64..0.1, k in 0.1f64..10.0, g in 1.0f64..3.0) {
        let r = linewidth_to_rate(db, g).unwrap();
        assert_relative_eq!(linewidth_to_rate(k * db, g).unwrap(), k * r, max_relative = 1e-12);
        assert_relative_eq!(rate_to_linewidth(r, g).unwrap(), db, max_relative = 1e-12);
        assert_relative_eq!(r, g * MU_B * db / H, max_relative = 1e-12);
    }

    #[test]
    fn t2e_decreases_with_linewidth(db in 1e-6f64..0.1, extra in 1e-7f64..0.1) {
        let t_narrow = rate_to_t2e(linewidth_to_rate(db, 2.0).unwrap()).unwrap();
        let t_wide = rate_to_t2e(linewidth_to_rate(db + extra, 2.0).unwrap()).unwrap();
        prop_assert!(t_wide < t_narrow);
    }

    #[test]
    fn resonance_field_decreases_with_g(f in 1e9f64..1e10, g in 1.0f64..3.0, dg in 1e-4f64..1.0) {
        prop_assert!(resonance_field_for_g(f, g + dg).unwrap() < resonance_field_for_g(f, g).unwrap());
    }

    #[test]
    fn splitting_conversion_round_trips(s in 1e6f64..1e10, g in 1.0f64..3.0) {
        let field = hyperfine_splitting_field(s, g).unwrap();
        assert_relative_eq!(splitting_field_to_frequency(field, g).unwrap(), s, max_relative = 1e-12);
    }
}

#[test]
fn half_field_is_half() {
    assert_eq!(half_field_position(0.16).unwrap(), 0.08);
}

#[test]
fn non_physical_inputs_are_rejected() {
    assert!(resonance_field_for_g(-1.0, 2.0).is_err());
    assert!(resonance_field_for_g(4e9, 0.0).is_err());
    assert!(linewidth_to_rate(f64::NAN, 2.0).is_err());
    assert!(rate_to_t2e(0.0).is_err());
    assert!(gyromagnetic_ratio(-2.0).is_err());
}

#[test]
fn gyromagnetic_ratio_matches_free_electron_value() {
    let gamma = gyromagnetic_ratio(FREE_ELECTRON_G).unwrap();
    assert_relative_eq!(gamma, ELECTRON_GYROMAGNETIC_RATIO, max_relative = 1e-9);
}
