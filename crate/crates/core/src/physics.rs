//! Physical constants and conversions between field, frequency, g-factor,
//! linewidth and spin relaxation time.
//!
//! Constants are CODATA-2018. Every conversion is a pure function.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{domain, require_positive, Result};

/// Planck constant, J·s (exact by SI definition).
pub const PLANCK_H: f64 = 6.626_070_15e-34;
/// Reduced Planck constant, J·s.
pub const HBAR: f64 = PLANCK_H / (2.0 * PI);
/// Bohr magneton, J/T.
pub const BOHR_MAGNETON: f64 = 9.274_010_078_3e-24;
/// Free-electron g-factor magnitude.
pub const FREE_ELECTRON_G: f64 = 2.002_319_304_36;
/// Free-electron gyromagnetic ratio, rad·s⁻¹·T⁻¹.
pub const ELECTRON_GYROMAGNETIC_RATIO: f64 = 1.760_859_630_23e11;
/// Free-electron gyromagnetic ratio over 2π, Hz/T.
pub const ELECTRON_GYROMAGNETIC_RATIO_HZ: f64 = 28.024_951_424_2e9;
/// Hydrogen ground-state hyperfine splitting, Hz.
pub const HYDROGEN_HYPERFINE_HZ: f64 = 1.42e9;

/// The constant set used by every conversion in this crate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    pub planck_h: f64,
    pub bohr_magneton: f64,
    pub electron_gyromagnetic_ratio: f64,
}

impl PhysicalConstants {
    pub const CODATA_2018: Self = Self {
        planck_h: PLANCK_H,
        bohr_magneton: BOHR_MAGNETON,
        electron_gyromagnetic_ratio: ELECTRON_GYROMAGNETIC_RATIO,
    };
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self::CODATA_2018
    }
}

/// A paramagnetic species characterised by its g-factor and spin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpinSpecies {
    pub g_factor: f64,
    pub spin_quantum_number: f64,
    pub label: String,
}

impl SpinSpecies {
    pub fn new(label: impl Into<String>, g_factor: f64, spin_quantum_number: f64) -> Result<Self> {
        let species = Self {
            g_factor,
            spin_quantum_number,
            label: label.into(),
        };
        species.validate()?;
        Ok(species)
    }

    /// S = 1/2 species with the given g.
    pub fn doublet(label: impl Into<String>, g_factor: f64) -> Result<Self> {
        Self::new(label, g_factor, 0.5)
    }

    pub fn validate(&self) -> Result<()> {
        require_positive("g_factor", self.g_factor)?;
        if self.spin_quantum_number != 0.5 && self.spin_quantum_number != 1.0 {
            return Err(domain(format!(
                "spin quantum number must be 1/2 or 1, got {}",
                self.spin_quantum_number
            )));
        }
        Ok(())
    }
}

/// Field at which a species with the given g absorbs at `frequency`: B = h·f/(g·μB).
pub fn resonance_field(frequency: f64, species: &SpinSpecies) -> Result<f64> {
    species.validate()?;
    resonance_field_for_g(frequency, species.g_factor)
}

pub fn resonance_field_for_g(frequency: f64, g: f64) -> Result<f64> {
    require_positive("frequency", frequency)?;
    require_positive("g", g)?;
    Ok(PLANCK_H * frequency / (g * BOHR_MAGNETON))
}

/// Photon frequency resonant with a species at `field`: f = g·μB·B/h.
pub fn resonance_frequency(field: f64, g: f64) -> Result<f64> {
    require_positive("field", field)?;
    require_positive("g", g)?;
    Ok(g * BOHR_MAGNETON * field / PLANCK_H)
}

/// g-factor of a peak observed at `field` with a resonator at `frequency`.
pub fn g_factor_from_peak(field: f64, frequency: f64) -> Result<f64> {
    require_positive("field", field)?;
    require_positive("frequency", frequency)?;
    Ok(PLANCK_H * frequency / (BOHR_MAGNETON * field))
}

/// Field-unit FWHM to frequency-unit FWHM: γ₂/2π = g·μB·ΔB/h, in Hz.
pub fn linewidth_to_rate(delta_b_fwhm: f64, g: f64) -> Result<f64> {
    require_positive("linewidth", delta_b_fwhm)?;
    require_positive("g", g)?;
    Ok(g * BOHR_MAGNETON * delta_b_fwhm / PLANCK_H)
}

/// Inverse of [`linewidth_to_rate`].
pub fn rate_to_linewidth(rate: f64, g: f64) -> Result<f64> {
    require_positive("rate", rate)?;
    require_positive("g", g)?;
    Ok(PLANCK_H * rate / (g * BOHR_MAGNETON))
}

/// T2e as the reciprocal of the FWHM rate in Hz.
///
/// Note this is `1/Δν`, not the `1/(π·Δν)` of a homogeneous Lorentzian;
/// the quoted coherence times (30 ns at 33 MHz) follow this convention.
pub fn rate_to_t2e(rate: f64) -> Result<f64> {
    require_positive("rate", rate)?;
    Ok(1.0 / rate)
}

/// Field separation equivalent to a hyperfine splitting at the given g.
pub fn hyperfine_splitting_field(splitting_frequency: f64, g: f64) -> Result<f64> {
    require_positive("splitting frequency", splitting_frequency)?;
    require_positive("g", g)?;
    Ok(PLANCK_H * splitting_frequency / (g * BOHR_MAGNETON))
}

/// Inverse of [`hyperfine_splitting_field`].
pub fn splitting_field_to_frequency(splitting_field: f64, g: f64) -> Result<f64> {
    require_positive("splitting field", splitting_field)?;
    require_positive("g", g)?;
    Ok(g * BOHR_MAGNETON * splitting_field / PLANCK_H)
}

/// Expected position of the ΔmS = 2 (S = 1) line: half the g ≈ 2 field.
pub fn half_field_position(g2_peak_field: f64) -> Result<f64> {
    require_positive("g=2 peak field", g2_peak_field)?;
    Ok(g2_peak_field / 2.0)
}

/// γ = g·μB/ħ in rad·s⁻¹·T⁻¹.
pub fn gyromagnetic_ratio(g: f64) -> Result<f64> {
    require_positive("g", g)?;
    Ok(g * BOHR_MAGNETON / HBAR)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn constants_match_codata() {
        assert_eq!(PLANCK_H, 6.62607015e-34);
        assert!(rel(BOHR_MAGNETON, 9.2740100783e-24) < 1e-6);
        let gamma = 2.0 * PI * ELECTRON_GYROMAGNETIC_RATIO_HZ * (FREE_ELECTRON_G / 2.00231930436);
        assert!(rel(ELECTRON_GYROMAGNETIC_RATIO, gamma) < 1e-6);
        assert!(rel(gyromagnetic_ratio(FREE_ELECTRON_G).unwrap(), ELECTRON_GYROMAGNETIC_RATIO) < 1e-6);
    }

    #[test]
    fn resonance_field_at_4_47_ghz() {
        let g2 = SpinSpecies::doublet("g2", 2.0).unwrap();
        let b = resonance_field(4.47e9, &g2).unwrap();
        assert!((b - 0.1597).abs() < 1e-4, "{b}");
        let shifted = SpinSpecies::doublet("shifted", 1.971).unwrap();
        let b = resonance_field(4.47e9, &shifted).unwrap();
        assert!((b - 0.1620).abs() < 1e-4, "{b}");
    }

    #[test]
    fn zero_or_negative_inputs_are_domain_errors() {
        let g2 = SpinSpecies::doublet("g2", 2.0).unwrap();
        assert!(matches!(resonance_field(0.0, &g2), Err(crate::EsrError::Domain(_))));
        assert!(g_factor_from_peak(-1.0, 4e9).is_err());
        assert!(g_factor_from_peak(0.1, 0.0).is_err());
        assert!(linewidth_to_rate(0.0, 2.0).is_err());
        assert!(rate_to_t2e(0.0).is_err());
        assert!(rate_to_t2e(f64::NAN).is_err());
        assert!(hyperfine_splitting_field(-1.42e9, 2.0).is_err());
        assert!(half_field_position(0.0).is_err());
    }

    #[test]
    fn species_validation() {
        assert!(SpinSpecies::new("x", 2.0, 1.0).is_ok());
        assert!(SpinSpecies::new("x", 2.0, 1.5).is_err());
        assert!(SpinSpecies::new("x", 0.0, 0.5).is_err());
    }

    #[test]
    fn g_factor_at_162_mt() {
        let g = g_factor_from_peak(0.162, 4.47e9).unwrap();
        assert!((g - 1.971).abs() < 1e-3, "{g}");
        let g = g_factor_from_peak(0.1597, 4.47e9).unwrap();
        assert!((g - 2.000).abs() < 1e-3, "{g}");
    }

    #[test]
    fn linewidth_chain_for_both_peaks() {
        let rate = linewidth_to_rate(1.2e-3, 2.0).unwrap();
        assert!((rate - 33.6e6).abs() < 0.05e6, "{rate}");
        let t2 = rate_to_t2e(rate).unwrap();
        assert!((t2 - 29.8e-9).abs() < 0.05e-9, "{t2}");
        assert!((rate_to_t2e(670e6).unwrap() - 1.49e-9).abs() < 0.005e-9);
        let sapphire = linewidth_to_rate(5e-3, 2.0).unwrap();
        assert!((sapphire - 140e6).abs() < 0.5e6, "{sapphire}");
        assert_eq!(rate_to_t2e(1.0).unwrap(), 1.0);
        let doubled = linewidth_to_rate(2.4e-3, 2.0).unwrap();
        assert!(rel(doubled, 2.0 * rate) < 1e-15);
    }

    #[test]
    fn hyperfine_and_half_field() {
        let split = hyperfine_splitting_field(1.42e9, 2.0).unwrap();
        assert!((split - 50.7e-3).abs() < 0.05e-3, "{split}");
        assert!(rel(hyperfine_splitting_field(2.84e9, 2.0).unwrap(), 2.0 * split) < 1e-15);
        assert!(rel(hyperfine_splitting_field(1.42e9, 1.0).unwrap(), 2.0 * split) < 1e-15);
        assert_eq!(half_field_position(0.162).unwrap(), 0.081);
        assert_eq!(half_field_position(0.160).unwrap(), 0.080);
    }

    #[test]
    fn peak_a_width_in_field_units_for_670_mhz() {
        let w = rate_to_linewidth(670e6, 2.0).unwrap();
        assert!((w - 23.9e-3).abs() < 0.05e-3, "{w}");
    }
}
