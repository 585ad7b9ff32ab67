//! Pipeline configuration: JSON with every field optional, validated with
//! explicit error paths.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use esr_core::decompose::TemplateOptions;
use esr_core::fit::FitOptions;
use esr_core::lineshape::CompositeSpectrumModel;
use esr_core::power::{PowerFitOptions, SaturationParams, TlsLossParams};
use esr_core::resonator::{NotchFitOptions, ReferencePolicy, ResonatorFit};

/// One input file, optionally labelled (treatment name for `compare`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSpec {
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// Power-fit report of the same sample, for the Q_TLS table in `compare`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power_report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpeciesDefaults {
    /// g-factor used where none is measured (T1e inversion).
    pub g_seed: f64,
}

impl Default for SpeciesDefaults {
    fn default() -> Self {
        Self { g_seed: 2.0 }
    }
}

/// Resonator parameters needed to convert drive power to photons.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResonatorConfig {
    pub f0_hz: f64,
    pub q_loaded: f64,
    pub q_coupling: f64,
}

impl ResonatorConfig {
    pub fn to_fit(self) -> Result<ResonatorFit> {
        let q_internal = 1.0 / (1.0 / self.q_loaded - 1.0 / self.q_coupling);
        let mut fit = ResonatorFit::from_qi_qc(self.f0_hz, q_internal, self.q_coupling, 0.0)?;
        fit.q_loaded = self.q_loaded;
        Ok(fit)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum TemplateName {
    /// Fit every built-in candidate and select by AIC.
    #[default]
    Auto,
    OneLorentzian,
    TwoLorentzian,
    /// The model given in `template.model`.
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemplateConfig {
    pub name: TemplateName,
    pub options: TemplateOptions,
    /// With `auto`, also offer each candidate with the half-field Gaussian
    /// and satellite pair that `options` leaves off, and let AIC decide.
    pub explore: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<CompositeSpectrumModel>,
}

impl Default for TemplateConfig {
    fn default() -> Self {
        Self { name: TemplateName::Auto, options: TemplateOptions::default(), explore: true, model: None }
    }
}

/// Inputs for converting a fitted P_sat into T1e.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct T1eInputs {
    pub t2e_seconds: f64,
    /// Field-to-power coefficient α (T/√W).
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerConfig {
    pub fit: PowerFitOptions,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t1e: Option<T1eInputs>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogGrid {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceSweepConfig {
    /// Number of fields, evenly spaced over the preset grid.
    pub fields: usize,
    pub points_per_trace: usize,
    pub half_span_linewidths: f64,
    pub snr: f64,
}

impl Default for TraceSweepConfig {
    fn default() -> Self {
        Self { fields: 126, points_per_trace: 401, half_span_linewidths: 3.0, snr: 300.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub preset: String,
    pub traces: TraceSweepConfig,
    pub tls: TlsLossParams,
    pub tls_photons: LogGrid,
    pub saturation: SaturationParams,
    pub saturation_powers: LogGrid,
    /// Relative noise on the loss for both power sweeps.
    pub power_noise: f64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            preset: "silicon".into(),
            traces: TraceSweepConfig::default(),
            tls: TlsLossParams { delta0: 1e-6, q_tls: 1.5e5, n_c: 1.0, beta: 0.2 },
            tls_photons: LogGrid { start: 0.1, stop: 1e6, points: 41 },
            saturation: SaturationParams { qb0_inverse: 2e-6, p_sat: 0.71e-9, epsilon: 1.0 },
            saturation_powers: LogGrid { start: 0.71e-12, stop: 0.71e-6, points: 41 },
            power_noise: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub resonator_id: String,
    pub inputs: Vec<InputSpec>,
    pub species: SpeciesDefaults,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resonator: Option<ResonatorConfig>,
    pub template: TemplateConfig,
    pub fit: FitOptions,
    pub notch: NotchFitOptions,
    pub reference: ReferencePolicy,
    pub power: PowerConfig,
    pub simulate: SimulateConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            resonator_id: "resonator".into(),
            inputs: Vec::new(),
            species: SpeciesDefaults::default(),
            resonator: None,
            template: TemplateConfig::default(),
            fit: FitOptions::default(),
            notch: NotchFitOptions::default(),
            reference: ReferencePolicy::RequireZero,
            power: PowerConfig::default(),
            simulate: SimulateConfig::default(),
            out_dir: None,
        }
    }
}

fn positive(path: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        bail!("{path}: must be finite and > 0, got {v}")
    }
}

impl PipelineConfig {
    /// Parse JSON text; errors name the offending field path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            anyhow::anyhow!("at `{path}`: {}", e.into_inner())
        })
    }

    /// Load a config file. Relative input paths are taken relative to the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut config = Self::from_json(&text).with_context(|| format!("invalid config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for input in &mut config.inputs {
            input.path = base.join(&input.path);
            if let Some(p) = input.power_report.as_mut() {
                *p = base.join(&*p);
            }
        }
        if let Some(out) = config.out_dir.as_mut() {
            *out = base.join(&*out);
        }
        Ok(config)
    }

    /// Check values and that every referenced file exists.
    pub fn validate(&self) -> Result<()> {
        for (i, input) in self.inputs.iter().enumerate() {
            if !input.path.is_file() {
                bail!("inputs[{i}].path: file not found: {}", input.path.display());
            }
            if let Some(p) = &input.power_report {
                if !p.is_file() {
                    bail!("inputs[{i}].power_report: file not found: {}", p.display());
                }
            }
        }
        positive("species.g_seed", self.species.g_seed)?;
        if let Some(r) = &self.resonator {
            positive("resonator.f0_hz", r.f0_hz)?;
            positive("resonator.q_loaded", r.q_loaded)?;
            positive("resonator.q_coupling", r.q_coupling)?;
            if r.q_loaded >= r.q_coupling {
                bail!("resonator.q_loaded: must be below q_coupling");
            }
        }
        if self.template.name == TemplateName::Custom && self.template.model.is_none() {
            bail!("template.model: required when template.name is \"custom\"");
        }
        if let Some(m) = &self.template.model {
            m.validate().context("template.model")?;
        }
        for (path, fit) in [("fit", &self.fit), ("notch.fit", &self.notch.fit), ("power.fit.fit", &self.power.fit.fit)] {
            if fit.max_iterations == 0 {
                bail!("{path}.max_iterations: must be > 0");
            }
            for (name, v) in [("ftol", fit.ftol), ("xtol", fit.xtol), ("gtol", fit.gtol), ("fd_step", fit.fd_step)] {
                positive(&format!("{path}.{name}"), v)?;
            }
        }
        if !(0.0..0.5).contains(&self.notch.edge_fraction) || self.notch.edge_fraction == 0.0 {
            bail!("notch.edge_fraction: must lie in (0, 0.5), got {}", self.notch.edge_fraction);
        }
        if let Some(t) = &self.power.t1e {
            positive("power.t1e.t2e_seconds", t.t2e_seconds)?;
            positive("power.t1e.alpha", t.alpha)?;
        }
        let s = &self.simulate;
        s.tls.validate().context("simulate.tls")?;
        s.saturation.validate().context("simulate.saturation")?;
        for (path, g) in [("simulate.tls_photons", &s.tls_photons), ("simulate.saturation_powers", &s.saturation_powers)] {
            positive(&format!("{path}.start"), g.start)?;
            if !(g.stop > g.start) || g.points < 2 {
                bail!("{path}: needs stop > start and at least 2 points");
            }
        }
        if !(s.power_noise.is_finite() && s.power_noise >= 0.0) {
            bail!("simulate.power_noise: must be >= 0, got {}", s.power_noise);
        }
        if s.traces.fields < 2 || s.traces.points_per_trace < esr_core::resonator::MIN_TRACE_POINTS {
            bail!("simulate.traces: needs at least 2 fields and {} points per trace", esr_core::resonator::MIN_TRACE_POINTS);
        }
        positive("simulate.traces.snr", s.traces.snr)?;
        positive("simulate.traces.half_span_linewidths", s.traces.half_span_linewidths)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        assert_eq!(PipelineConfig::from_json("{}").unwrap(), PipelineConfig::default());
    }

    #[test]
    fn config_round_trips_through_json() {
        let mut c = PipelineConfig::default();
        c.inputs.push(InputSpec { path: "a.csv".into(), label: Some("pristine".into()), power_report: None });
        c.resonator = Some(ResonatorConfig { f0_hz: 4.47e9, q_loaded: 3e4, q_coupling: 5e4 });
        c.template.name = TemplateName::TwoLorentzian;
        c.power.t1e = Some(T1eInputs { t2e_seconds: 30e-9, alpha: 0.21 });
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(PipelineConfig::from_json(&text).unwrap(), c);
    }

    #[test]
    fn errors_name_the_field() {
        let err = PipelineConfig::from_json(r#"{"template": {"name": "three-lorentzian"}}"#).unwrap_err();
        assert!(err.to_string().contains("template.name"), "{err}");
        let err = PipelineConfig::from_json(r#"{"fit": {"max_iterations": "many"}}"#).unwrap_err();
        assert!(err.to_string().contains("fit.max_iterations"), "{err}");
        let err = PipelineConfig::from_json(r#"{"colour": 1}"#).unwrap_err();
        assert!(err.to_string().contains("colour"), "{err}");
    }

    #[test]
    fn validation_reports_paths() {
        let mut c = PipelineConfig::default();
        c.species.g_seed = -1.0;
        assert!(c.validate().unwrap_err().to_string().starts_with("species.g_seed"));
        let mut c = PipelineConfig::default();
        c.inputs.push(InputSpec { path: "/nonexistent/x.csv".into(), label: None, power_report: None });
        assert!(c.validate().unwrap_err().to_string().starts_with("inputs[0].path"));
        let mut c = PipelineConfig::default();
        c.template.name = TemplateName::Custom;
        assert!(c.validate().unwrap_err().to_string().starts_with("template.model"));
    }
}
