//! Seeded forward simulators for every analysis stage.
//!
//! Outputs are pure functions of (truth, grid, [`NoiseSpec`]): the same seed
//! always yields bit-identical data, on any platform. Noise comes from
//! [`crate::rng::SplitMix64`].

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::lineshape::CompositeSpectrumModel;
use crate::physics::resonance_field_for_g;
use crate::power::{saturation_loss, tls_loss, SaturationParams, TlsLossParams};
use crate::resonator::{ComplexTrace, EsrSpectrum, ResonatorFit, TraceMetadata, ZERO_FIELD_TOLERANCE};
use crate::rng::SplitMix64;

/// How large the additive Gaussian noise is.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseScale {
    None,
    /// Absolute standard deviation (per quadrature for complex data).
    Sigma(f64),
    /// Signal over noise. For traces the signal is the resonance-circle
    /// diameter `a·Ql/|Qc|`; for spectra and sweeps it is the largest
    /// noiseless value.
    Snr(f64),
    /// Standard deviation proportional to each noiseless value.
    Relative(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub scale: NoiseScale,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self { scale: NoiseScale::None, seed: 0 }
    }

    pub fn snr(snr: f64, seed: u64) -> Self {
        Self { scale: NoiseScale::Snr(snr), seed }
    }

    pub fn sigma(sigma: f64, seed: u64) -> Self {
        Self { scale: NoiseScale::Sigma(sigma), seed }
    }

    pub fn relative(fraction: f64, seed: u64) -> Self {
        Self { scale: NoiseScale::Relative(fraction), seed }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self.scale {
            NoiseScale::None => true,
            NoiseScale::Sigma(s) | NoiseScale::Relative(s) => s.is_finite() && s >= 0.0,
            NoiseScale::Snr(s) => s.is_finite() && s > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("invalid noise scale {:?}", self.scale)))
        }
    }

    /// Per-sample σ given the signal scale and the noiseless sample.
    fn sigma_for(&self, signal: f64, value: f64) -> f64 {
        match self.scale {
            NoiseScale::None => 0.0,
            NoiseScale::Sigma(s) => s,
            NoiseScale::Snr(snr) => signal / snr,
            NoiseScale::Relative(r) => r * value.abs(),
        }
    }
}

/// Independent seed for the `index`-th member of a family.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    SplitMix64::new(seed ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03)).next_u64()
}

fn require_increasing(values: &[f64], what: &str) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) || values.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(invalid(format!("{what} must be finite and strictly increasing")));
    }
    Ok(())
}

/// Evenly spaced grid of `points` values on [start, stop].
pub fn linear_grid(start: f64, stop: f64, points: usize) -> Vec<f64> {
    match points {
        0 => vec![],
        1 => vec![start],
        _ => (0..points)
            .map(|i| start + (stop - start) * i as f64 / (points - 1) as f64)
            .collect(),
    }
}

/// Log-spaced grid of `points` values on [start, stop].
pub fn log_grid(start: f64, stop: f64, points: usize) -> Vec<f64> {
    linear_grid(start.ln(), stop.ln(), points).into_iter().map(f64::exp).collect()
}

/// Frequency grid of `points` samples spanning ±`half_span_linewidths`·f0/Ql.
pub fn resonance_grid(resonator: &ResonatorFit, points: usize, half_span_linewidths: f64) -> Vec<f64> {
    let half = half_span_linewidths * resonator.f0 / resonator.q_loaded;
    linear_grid(resonator.f0 - half, resonator.f0 + half, points)
}

/// Notch-model transmission at `truth` plus complex Gaussian noise.
pub fn simulate_s21(
    truth: &ResonatorFit,
    frequencies: &[f64],
    metadata: TraceMetadata,
    noise: &NoiseSpec,
) -> Result<ComplexTrace> {
    truth.validate()?;
    noise.validate()?;
    require_increasing(frequencies, "frequencies")?;
    let mut rng = SplitMix64::new(noise.seed);
    let signal = truth.amplitude_scale * truth.q_loaded / truth.q_coupling;
    let sigma = noise.sigma_for(signal, truth.amplitude_scale);
    let s21 = frequencies
        .iter()
        .map(|&f| {
            let clean = truth.s21(f);
            if sigma > 0.0 {
                let re = rng.normal(sigma);
                let im = rng.normal(sigma);
                clean + Complex64::new(re, im)
            } else {
                clean
            }
        })
        .collect();
    ComplexTrace::new(frequencies.to_vec(), s21, metadata)
}

/// Field-independent context of a simulated spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSetup {
    pub resonator_f0: f64,
    /// Internal loss at zero field, excluding spin contributions.
    pub zero_field_qi_inverse: f64,
}

/// Loss spectrum from a composite model plus additive Gaussian noise.
///
/// Like a measured spectrum, values are referenced to the (noisy) loss at
/// zero field, so `qb_inverse(0) = 0` exactly when the grid starts at B = 0.
pub fn simulate_esr_spectrum(
    model: &CompositeSpectrumModel,
    fields: &[f64],
    setup: &SpectrumSetup,
    noise: &NoiseSpec,
) -> Result<EsrSpectrum> {
    model.validate()?;
    noise.validate()?;
    require_increasing(fields, "fields")?;
    if fields.len() < 2 {
        return Err(invalid("a spectrum needs at least two fields"));
    }
    if fields[0] < 0.0 {
        return Err(invalid("fields must be non-negative"));
    }
    let clean: Vec<f64> = fields.iter().map(|&b| model.value(b)).collect();
    let signal = clean.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut rng = SplitMix64::new(noise.seed);
    let noisy: Vec<f64> = clean
        .iter()
        .map(|&v| {
            let s = noise.sigma_for(signal, v);
            if s > 0.0 {
                v + rng.normal(s)
            } else {
                v
            }
        })
        .collect();
    let has_zero = fields[0].abs() <= ZERO_FIELD_TOLERANCE;
    let reference = if has_zero {
        noisy[0]
    } else {
        let s = noise.sigma_for(signal, model.value(0.0));
        model.value(0.0) + if s > 0.0 { rng.normal(s) } else { 0.0 }
    };
    let qb: Vec<f64> = noisy
        .iter()
        .enumerate()
        .map(|(i, v)| if i == 0 && has_zero { 0.0 } else { v - reference })
        .collect();
    EsrSpectrum::new(
        fields.to_vec(),
        qb,
        setup.zero_field_qi_inverse + reference,
        setup.resonator_f0,
    )
}

/// Truth for a power-sweep simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "kebab-case")]
pub enum PowerLawTruth {
    Tls(TlsLossParams),
    Saturation(SaturationParams),
}

/// Loss-versus-power sweep. TLS sweeps return `(photons, Qi)`, saturation
/// sweeps return `(circulating power, Q_B⁻¹)`; noise is applied to the loss.
pub fn simulate_power_sweep(truth: &PowerLawTruth, powers: &[f64], noise: &NoiseSpec) -> Result<Vec<(f64, f64)>> {
    noise.validate()?;
    require_increasing(powers, "power grid")?;
    if powers.first().is_some_and(|p| *p <= 0.0) {
        return Err(invalid("power grid must be positive"));
    }
    let clean: Vec<f64> = match truth {
        PowerLawTruth::Tls(p) => powers.iter().map(|&n| tls_loss(n, p)).collect::<Result<_>>()?,
        PowerLawTruth::Saturation(s) => powers.iter().map(|&p| saturation_loss(p, s)).collect::<Result<_>>()?,
    };
    let signal = clean.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut rng = SplitMix64::new(noise.seed);
    Ok(powers
        .iter()
        .zip(clean)
        .map(|(&p, v)| {
            let s = noise.sigma_for(signal, v);
            let loss = if s > 0.0 { v + rng.normal(s) } else { v };
            match truth {
                PowerLawTruth::Tls(_) => (p, 1.0 / loss),
                PowerLawTruth::Saturation(_) => (p, loss),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldGrid {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

impl FieldGrid {
    pub fn fields(&self) -> Vec<f64> {
        linear_grid(self.start, self.stop, self.points)
    }
}

/// Zero-field resonator of a preset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PresetResonator {
    pub f0: f64,
    pub q_internal: f64,
    pub q_coupling: f64,
    pub mismatch_angle: f64,
    pub amplitude_scale: f64,
    pub phase_offset: f64,
    pub cable_delay: f64,
}

impl PresetResonator {
    /// Resonator whose internal loss is raised by `extra_loss`.
    pub fn with_extra_loss(&self, extra_loss: f64) -> Result<ResonatorFit> {
        let qi = 1.0 / (1.0 / self.q_internal + extra_loss);
        Ok(ResonatorFit::from_qi_qc(self.f0, qi, self.q_coupling, self.mismatch_angle)?
            .with_environment(self.amplitude_scale, self.phase_offset, self.cable_delay))
    }
}

/// A complete synthetic sample: resonator, field grid, spectrum truth and SNR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub name: String,
    pub description: String,
    pub resonator: PresetResonator,
    pub field_grid: FieldGrid,
    pub snr: f64,
    pub model: CompositeSpectrumModel,
}

const SILICON_JSON: &str = include_str!("../presets/silicon.json");
const SAPPHIRE_JSON: &str = include_str!("../presets/sapphire.json");

pub const PRESET_NAMES: [&str; 2] = ["silicon", "sapphire"];

impl Preset {
    pub fn by_name(name: &str) -> Result<Self> {
        let text = match name {
            "silicon" => SILICON_JSON,
            "sapphire" => SAPPHIRE_JSON,
            other => {
                return Err(invalid(format!(
                    "unknown preset '{other}' (available: {})",
                    PRESET_NAMES.join(", ")
                )))
            }
        };
        Ok(serde_json::from_str(text)?)
    }

    pub fn silicon() -> Self {
        Self::by_name("silicon").expect("bundled preset parses")
    }

    pub fn sapphire() -> Self {
        Self::by_name("sapphire").expect("bundled preset parses")
    }

    pub fn setup(&self) -> SpectrumSetup {
        SpectrumSetup {
            resonator_f0: self.resonator.f0,
            zero_field_qi_inverse: 1.0 / self.resonator.q_internal,
        }
    }

    /// The preset spectrum at its own SNR with the given seed.
    pub fn spectrum(&self, seed: u64) -> Result<EsrSpectrum> {
        simulate_esr_spectrum(&self.model, &self.field_grid.fields(), &self.setup(), &NoiseSpec::snr(self.snr, seed))
    }

    /// Field of the dominant g ≈ 2 line.
    pub fn g2_center(&self) -> f64 {
        self.model
            .lorentzians
            .first()
            .map(|l| l.center)
            .unwrap_or_else(|| resonance_field_for_g(self.resonator.f0, 2.0).expect("valid preset f0"))
    }

    /// One S21 trace per field, with Qi lowered by the spin loss at that field.
    pub fn field_sweep_traces(
        &self,
        fields: &[f64],
        points_per_trace: usize,
        half_span_linewidths: f64,
        trace_snr: f64,
        seed: u64,
    ) -> Result<Vec<ComplexTrace>> {
        require_increasing(fields, "fields")?;
        fields
            .iter()
            .enumerate()
            .map(|(i, &b)| {
                let resonator = self.resonator.with_extra_loss(self.model.value(b))?;
                let grid = resonance_grid(&resonator, points_per_trace, half_span_linewidths);
                let meta = TraceMetadata { applied_field: b, drive_power: 1e-15, temperature: 0.3 };
                simulate_s21(&resonator, &grid, meta, &NoiseSpec::snr(trace_snr, derive_seed(seed, i as u64)))
            })
            .collect()
    }
}
