//! Decomposition of loss spectra into composite line-shape models, AIC model
//! selection, half-field peak detection and cross-treatment comparison.
//!
//! A [`SpectrumTemplate`] pairs an initial [`CompositeSpectrumModel`] with one
//! [`ParameterSpec`] per model parameter. Parameters are flattened in a fixed
//! order: every Lorentzian (center, fwhm, amplitude), every Gaussian (same),
//! every satellite pair (center, splitting, fwhm, amplitude), the pedestal
//! (onset, width, height, decay) if present, and finally the constant offset.

use std::f64::consts::{LN_2, PI};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, EsrError, Result};
use crate::fit::{compare_models, least_squares, FitOptions, FitResult, Model, ModelRanking, ParameterSpec};
use crate::lineshape::{
    numeric_area, CompositeSpectrumModel, GaussianPeak, LorentzianPeak, PedestalBackground, SatellitePair,
};
use crate::parallel;
use crate::physics::{
    g_factor_from_peak, hyperfine_splitting_field, linewidth_to_rate, rate_to_t2e, splitting_field_to_frequency,
    HYDROGEN_HYPERFINE_HZ,
};
use crate::resonator::EsrSpectrum;

/// ΔAIC below which the simpler of two models is preferred.
pub const DECISIVE_DELTA_AIC: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layout {
    lorentzians: usize,
    gaussians: usize,
    satellites: usize,
    background: bool,
}

impl Layout {
    fn of(model: &CompositeSpectrumModel) -> Self {
        Self {
            lorentzians: model.lorentzians.len(),
            gaussians: model.gaussians.len(),
            satellites: model.satellites.len(),
            background: model.background.is_some(),
        }
    }

    fn gaussian_start(&self) -> usize {
        3 * self.lorentzians
    }

    fn satellite_start(&self) -> usize {
        self.gaussian_start() + 3 * self.gaussians
    }

    fn background_start(&self) -> usize {
        self.satellite_start() + 4 * self.satellites
    }

    fn offset_index(&self) -> usize {
        self.background_start() + if self.background { 4 } else { 0 }
    }

    fn len(&self) -> usize {
        self.offset_index() + 1
    }

    fn names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.len());
        for i in 0..self.lorentzians {
            for p in ["center", "fwhm", "amplitude"] {
                names.push(format!("lorentzian[{i}].{p}"));
            }
        }
        for i in 0..self.gaussians {
            for p in ["center", "fwhm", "amplitude"] {
                names.push(format!("gaussian[{i}].{p}"));
            }
        }
        for i in 0..self.satellites {
            for p in ["center", "splitting", "fwhm", "amplitude"] {
                names.push(format!("satellites[{i}].{p}"));
            }
        }
        if self.background {
            for p in ["onset_field", "transition_width", "height", "decay_scale"] {
                names.push(format!("pedestal.{p}"));
            }
        }
        names.push("constant_offset".to_string());
        names
    }

    fn lorentzian(&self, p: &[f64], i: usize) -> LorentzianPeak {
        let k = 3 * i;
        LorentzianPeak { center: p[k], fwhm: p[k + 1], amplitude: p[k + 2] }
    }

    fn gaussian(&self, p: &[f64], i: usize) -> GaussianPeak {
        let k = self.gaussian_start() + 3 * i;
        GaussianPeak { center: p[k], fwhm: p[k + 1], amplitude: p[k + 2] }
    }

    fn satellite(&self, p: &[f64], i: usize) -> SatellitePair {
        let k = self.satellite_start() + 4 * i;
        SatellitePair { center: p[k], splitting: p[k + 1], fwhm: p[k + 2], amplitude: p[k + 3] }
    }

    fn pedestal(&self, p: &[f64]) -> Option<PedestalBackground> {
        self.background.then(|| {
            let k = self.background_start();
            PedestalBackground { onset_field: p[k], transition_width: p[k + 1], height: p[k + 2], decay_scale: p[k + 3] }
        })
    }

    fn model(&self, p: &[f64]) -> CompositeSpectrumModel {
        CompositeSpectrumModel {
            lorentzians: (0..self.lorentzians).map(|i| self.lorentzian(p, i)).collect(),
            gaussians: (0..self.gaussians).map(|i| self.gaussian(p, i)).collect(),
            satellites: (0..self.satellites).map(|i| self.satellite(p, i)).collect(),
            background: self.pedestal(p),
            constant_offset: p[self.offset_index()],
        }
    }
}

fn flatten(model: &CompositeSpectrumModel) -> Vec<f64> {
    let mut p = Vec::new();
    for l in &model.lorentzians {
        p.extend([l.center, l.fwhm, l.amplitude]);
    }
    for g in &model.gaussians {
        p.extend([g.center, g.fwhm, g.amplitude]);
    }
    for s in &model.satellites {
        p.extend([s.center, s.splitting, s.fwhm, s.amplitude]);
    }
    if let Some(bg) = &model.background {
        p.extend([bg.onset_field, bg.transition_width, bg.height, bg.decay_scale]);
    }
    p.push(model.constant_offset);
    p
}

struct CompositeFitModel {
    layout: Layout,
}

impl Model for CompositeFitModel {
    type Input = f64;

    fn predict(&self, p: &[f64], &b: &f64) -> f64 {
        let l = &self.layout;
        let mut v = p[l.offset_index()];
        for i in 0..l.lorentzians {
            v += l.lorentzian(p, i).value(b);
        }
        for i in 0..l.gaussians {
            v += l.gaussian(p, i).value(b);
        }
        for i in 0..l.satellites {
            v += l.satellite(p, i).value(b);
        }
        if let Some(bg) = l.pedestal(p) {
            v += bg.value(b);
        }
        v
    }

    fn has_gradient(&self) -> bool {
        true
    }

    fn gradient(&self, p: &[f64], &b: &f64, g: &mut [f64]) {
        let l = &self.layout;
        for i in 0..l.lorentzians {
            g[3 * i..3 * i + 3].copy_from_slice(&l.lorentzian(p, i).gradient(b));
        }
        for i in 0..l.gaussians {
            let k = l.gaussian_start() + 3 * i;
            g[k..k + 3].copy_from_slice(&l.gaussian(p, i).gradient(b));
        }
        for i in 0..l.satellites {
            let k = l.satellite_start() + 4 * i;
            g[k..k + 4].copy_from_slice(&l.satellite(p, i).gradient(b));
        }
        if let Some(bg) = l.pedestal(p) {
            let k = l.background_start();
            g[k..k + 4].copy_from_slice(&bg.gradient(b));
        }
        g[l.offset_index()] = 1.0;
    }
}

/// Initial model plus per-parameter bounds for a decomposition fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumTemplate {
    pub name: String,
    pub model: CompositeSpectrumModel,
    /// One spec per flattened parameter, in canonical order. Initial values
    /// here take precedence over those in `model`.
    pub specs: Vec<ParameterSpec>,
}

impl SpectrumTemplate {
    /// Canonical parameter names for a model's layout.
    pub fn parameter_names(model: &CompositeSpectrumModel) -> Vec<String> {
        Layout::of(model).names()
    }

    /// Template with generic bounds: centers inside `field_range`, widths
    /// and amplitudes non-negative, pedestal decay in [0.02, 20] T.
    pub fn from_model(name: impl Into<String>, model: CompositeSpectrumModel, field_range: (f64, f64)) -> Self {
        let layout = Layout::of(&model);
        let (lo, hi) = field_range;
        let span = hi - lo;
        let values = flatten(&model);
        let specs = layout
            .names()
            .into_iter()
            .zip(values)
            .map(|(n, v)| {
                let field = n.rsplit('.').next().unwrap_or("");
                let spec = ParameterSpec::free(n.clone(), v);
                match field {
                    "center" => spec.with_bounds(lo, hi),
                    "fwhm" | "splitting" => spec.with_bounds(1e-6, 2.0 * span.max(1e-6)),
                    "amplitude" | "height" => spec.with_bounds(0.0, f64::INFINITY),
                    "onset_field" => spec.with_bounds(lo.min(0.0), hi),
                    "transition_width" => spec.with_bounds(1e-5, span.max(1e-5)),
                    "decay_scale" if v.is_infinite() => ParameterSpec::free(n, 1e12).frozen(),
                    "decay_scale" => spec.with_bounds(0.02, 20.0),
                    _ => spec,
                }
            })
            .collect();
        Self { name: name.into(), model, specs }
    }

    pub fn validate(&self, spectrum: &EsrSpectrum) -> Result<()> {
        self.model.validate()?;
        let layout = Layout::of(&self.model);
        if layout.lorentzians + layout.gaussians + layout.satellites == 0 && !layout.background {
            return Err(invalid(format!("template '{}' has no components", self.name)));
        }
        let names = layout.names();
        if self.specs.len() != names.len() {
            return Err(invalid(format!(
                "template '{}' has {} parameter specs, its model needs {}",
                self.name,
                self.specs.len(),
                names.len()
            )));
        }
        if let Some((spec, want)) = self.specs.iter().zip(&names).find(|(s, n)| &s.name != *n) {
            return Err(invalid(format!(
                "template '{}': parameter '{}' found where '{}' was expected",
                self.name, spec.name, want
            )));
        }
        let (lo, hi) = spectrum.field_range();
        for spec in self.specs.iter().filter(|s| s.name.ends_with(".center")) {
            if !(spec.initial >= lo && spec.initial <= hi) {
                return Err(invalid(format!(
                    "template '{}': initial {} = {} lies outside the spectrum [{lo}, {hi}] T",
                    self.name, spec.name, spec.initial
                )));
            }
        }
        Ok(())
    }
}

/// Optional components of the built-in templates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemplateOptions {
    pub pedestal: bool,
    pub half_field_gaussian: bool,
    pub hydrogen_satellites: bool,
}

impl Default for TemplateOptions {
    fn default() -> Self {
        Self { pedestal: true, half_field_gaussian: false, hydrogen_satellites: false }
    }
}

/// Moving average over `2·half + 1` points, shrinking at the edges.
fn smooth(values: &[f64], half: usize) -> Vec<f64> {
    (0..values.len())
        .map(|i| {
            let a = i.saturating_sub(half);
            let b = (i + half + 1).min(values.len());
            values[a..b].iter().sum::<f64>() / (b - a) as f64
        })
        .collect()
}

fn interpolate(fields: &[f64], values: &[f64], b: f64) -> f64 {
    match fields.partition_point(|&f| f < b) {
        0 => values[0],
        i if i >= fields.len() => values[fields.len() - 1],
        i => {
            let t = (b - fields[i - 1]) / (fields[i] - fields[i - 1]);
            values[i - 1] + t * (values[i] - values[i - 1])
        }
    }
}

fn quantile(mut xs: Vec<f64>, q: f64) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    Some(xs[((xs.len() - 1) as f64 * q).round() as usize])
}

/// Data-derived starting points shared by the built-in templates.
struct Seeds {
    center: f64,
    height: f64,
    fwhm: f64,
    baseline: f64,
    step: f64,
    smoothed: Vec<f64>,
}

fn seeds(spectrum: &EsrSpectrum) -> Seeds {
    let fields = &spectrum.fields;
    let smoothed = smooth(&spectrum.qb_inverse, 2);
    let (lo, hi) = spectrum.field_range();
    let step = (hi - lo) / (fields.len() - 1) as f64;
    let imax = smoothed
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map_or(0, |(i, _)| i);
    let center = fields[imax];
    let window: Vec<f64> = fields
        .iter()
        .zip(&smoothed)
        .filter(|(b, _)| **b >= 0.35 * center && **b <= 0.85 * center)
        .map(|(_, v)| *v)
        .collect();
    let baseline = quantile(window, 0.25).unwrap_or(0.0).max(0.0);
    let height = (smoothed[imax] - baseline).max(f64::MIN_POSITIVE);
    let half = baseline + 0.5 * height;
    let left = (0..imax).rev().find(|&i| smoothed[i] < half).map_or(lo, |i| fields[i]);
    let right = (imax..fields.len()).find(|&i| smoothed[i] < half).map_or(hi, |i| fields[i]);
    let fwhm = (right - left).max(2.0 * step);
    Seeds { center, height, fwhm, baseline, step, smoothed }
}

fn lorentzian_specs(i: usize, center: f64, fwhm: f64, amplitude: f64, range: (f64, f64), step: f64) -> [ParameterSpec; 3] {
    let span = range.1 - range.0;
    [
        ParameterSpec::bounded(format!("lorentzian[{i}].center"), center, range.0, range.1),
        ParameterSpec::bounded(format!("lorentzian[{i}].fwhm"), fwhm, 0.25 * step, span),
        ParameterSpec::positive(format!("lorentzian[{i}].amplitude"), amplitude),
    ]
}

fn build_template(
    name: &str,
    spectrum: &EsrSpectrum,
    lines: &[(f64, f64)],
    s: &Seeds,
    options: &TemplateOptions,
) -> Result<SpectrumTemplate> {
    let range = spectrum.field_range();
    let mut specs = Vec::new();
    let mut model = CompositeSpectrumModel::default();
    for (i, &(fwhm, amplitude)) in lines.iter().enumerate() {
        model.lorentzians.push(LorentzianPeak { center: s.center, fwhm, amplitude });
        specs.extend(lorentzian_specs(i, s.center, fwhm, amplitude, range, s.step));
    }
    if options.half_field_gaussian {
        let c = 0.5 * s.center;
        if c < range.0 || c > range.1 {
            return Err(invalid("half-field position lies outside the spectrum"));
        }
        let fwhm = (0.25 * c).max(4.0 * s.step);
        let amplitude = (interpolate(&spectrum.fields, &s.smoothed, c) - s.baseline).max(0.05 * s.height);
        model.gaussians.push(GaussianPeak { center: c, fwhm, amplitude });
        specs.extend([
            ParameterSpec::bounded("gaussian[0].center", c, 0.85 * c, (1.15 * c).min(range.1)),
            ParameterSpec::bounded("gaussian[0].fwhm", fwhm, 2.0 * s.step, 0.5 * c),
            ParameterSpec::positive("gaussian[0].amplitude", amplitude),
        ]);
    }
    if options.hydrogen_satellites {
        let g = g_factor_from_peak(s.center, spectrum.resonator_f0)?;
        let split = hyperfine_splitting_field(HYDROGEN_HYPERFINE_HZ, g)?;
        let fwhm = s.fwhm.min(0.25 * split).max(2.0 * s.step);
        let side = 0.5
            * (interpolate(&spectrum.fields, &s.smoothed, s.center - 0.5 * split)
                + interpolate(&spectrum.fields, &s.smoothed, s.center + 0.5 * split));
        let amplitude = (side - s.baseline).max(0.05 * s.height);
        model.satellites.push(SatellitePair { center: s.center, splitting: split, fwhm, amplitude });
        specs.extend([
            ParameterSpec::bounded(
                "satellites[0].center",
                s.center,
                (s.center - 0.25 * split).max(range.0),
                (s.center + 0.25 * split).min(range.1),
            ),
            ParameterSpec::bounded("satellites[0].splitting", split, 0.8 * split, 1.2 * split),
            ParameterSpec::bounded("satellites[0].fwhm", fwhm, 0.25 * s.step, 0.5 * split),
            ParameterSpec::positive("satellites[0].amplitude", amplitude),
        ]);
    }
    if options.pedestal {
        let bg = PedestalBackground {
            onset_field: 0.3 * s.center,
            transition_width: 0.005,
            height: s.baseline.max(1e-3 * s.height),
            decay_scale: 0.3,
        };
        model.background = Some(bg);
        specs.extend([
            ParameterSpec::bounded("pedestal.onset_field", bg.onset_field, range.0.min(0.0), s.center),
            ParameterSpec::bounded("pedestal.transition_width", bg.transition_width, s.step, 0.5 * s.center),
            ParameterSpec::positive("pedestal.height", bg.height),
            ParameterSpec::bounded("pedestal.decay_scale", bg.decay_scale, 0.02, 20.0),
        ]);
    }
    specs.push(ParameterSpec::free("constant_offset", 0.0).with_scale(s.height));
    let template = SpectrumTemplate { name: name.to_string(), model, specs };
    template.validate(spectrum)?;
    Ok(template)
}

/// Single Lorentzian seeded at the spectrum maximum with its half-height width.
pub fn one_lorentzian_template(spectrum: &EsrSpectrum, options: &TemplateOptions) -> Result<SpectrumTemplate> {
    spectrum.validate()?;
    let s = seeds(spectrum);
    build_template("one-lorentzian", spectrum, &[(s.fwhm, s.height)], &s, options)
}

/// Two Lorentzians sharing a center at the spectrum maximum, seeded at
/// 1 mT and 20 mT widths.
pub fn two_lorentzian_template(spectrum: &EsrSpectrum, options: &TemplateOptions) -> Result<SpectrumTemplate> {
    spectrum.validate()?;
    let s = seeds(spectrum);
    let narrow = 1e-3_f64.max(s.step);
    let broad = 20e-3_f64.max(4.0 * s.step);
    build_template("two-lorentzian", spectrum, &[(narrow, 0.5 * s.height), (broad, 0.5 * s.height)], &s, options)
}

/// The built-in candidate set: one and two Lorentzians, same options.
pub fn standard_candidates(spectrum: &EsrSpectrum, options: &TemplateOptions) -> Result<Vec<SpectrumTemplate>> {
    Ok(vec![one_lorentzian_template(spectrum, options)?, two_lorentzian_template(spectrum, options)?])
}

/// The standard candidates for every combination of the optional half-field
/// Gaussian and hydrogen satellite pair that `options` leaves off, simplest
/// first. Names carry `+half-field` / `+satellites` suffixes. Variants whose
/// template cannot be built for this spectrum are skipped.
pub fn extended_candidates(spectrum: &EsrSpectrum, options: &TemplateOptions) -> Result<Vec<SpectrumTemplate>> {
    let mut variants = vec![(*options, String::new())];
    if !options.half_field_gaussian {
        let with: Vec<_> = variants
            .iter()
            .map(|(o, n)| (TemplateOptions { half_field_gaussian: true, ..*o }, format!("{n}+half-field")))
            .collect();
        variants.extend(with);
    }
    if !options.hydrogen_satellites {
        let with: Vec<_> = variants
            .iter()
            .map(|(o, n)| (TemplateOptions { hydrogen_satellites: true, ..*o }, format!("{n}+satellites")))
            .collect();
        variants.extend(with);
    }
    let mut out = standard_candidates(spectrum, options)?;
    for (opts, suffix) in &variants[1..] {
        match standard_candidates(spectrum, opts) {
            Ok(templates) => out.extend(templates.into_iter().map(|mut t| {
                t.name.push_str(suffix);
                t
            })),
            Err(e) => warn!("skipping {suffix} candidates: {e}"),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeakKind {
    Lorentzian,
    Gaussian,
    Satellites,
}

/// Derived quantities for one fitted peak.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakRecord {
    pub label: String,
    pub kind: PeakKind,
    pub center: f64,
    pub center_uncertainty: f64,
    pub fwhm: f64,
    pub fwhm_uncertainty: f64,
    pub amplitude: f64,
    pub amplitude_uncertainty: f64,
    pub g_factor: f64,
    /// Linewidth expressed as a frequency, Hz.
    pub fwhm_as_rate: f64,
    pub t2e: f64,
    pub area: f64,
    pub area_uncertainty: f64,
    /// Satellite pairs only.
    pub splitting: Option<f64>,
    pub splitting_uncertainty: Option<f64>,
    pub splitting_frequency: Option<f64>,
    pub splitting_frequency_uncertainty: Option<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionResult {
    pub template: String,
    pub resonator_f0: f64,
    pub model: CompositeSpectrumModel,
    pub fit: FitResult,
    pub per_peak: Vec<PeakRecord>,
    /// Trapezoidal pedestal area over the spectrum's field grid.
    pub pedestal_area: Option<f64>,
    pub pedestal_area_uncertainty: Option<f64>,
    /// Peak areas plus pedestal area.
    pub total_area: f64,
    pub total_area_uncertainty: f64,
    pub converged: bool,
    pub warnings: Vec<String>,
}

impl DecompositionResult {
    pub fn peak(&self, label: &str) -> Option<&PeakRecord> {
        self.per_peak.iter().find(|p| p.label == label)
    }

    /// Lorentzian records ordered by ascending width (Peak A first).
    pub fn lorentzian_peaks(&self) -> impl Iterator<Item = &PeakRecord> {
        self.per_peak.iter().filter(|p| p.kind == PeakKind::Lorentzian)
    }
}

/// σ of a linear combination `gᵀ p` under covariance `cov`.
fn propagate(cov: &[Vec<f64>], grad: &[(usize, f64)]) -> f64 {
    let mut var = 0.0;
    for &(i, gi) in grad {
        for &(j, gj) in grad {
            var += gi * gj * cov[i][j];
        }
    }
    if var >= 0.0 {
        var.sqrt()
    } else {
        f64::NAN
    }
}

fn letter_label(i: usize) -> String {
    let mut n = i;
    let mut s = String::new();
    loop {
        s.insert(0, (b'A' + (n % 26) as u8) as char);
        if n < 26 {
            break;
        }
        n = n / 26 - 1;
    }
    s
}

fn numbered(prefix: &str, i: usize, total: usize) -> String {
    if total == 1 && prefix == "H" {
        prefix.to_string()
    } else {
        format!("{prefix}{}", i + 1)
    }
}

/// Fit a spectrum with a template and derive per-peak linewidths, T2e and areas.
pub fn decompose(
    spectrum: &EsrSpectrum,
    template: &SpectrumTemplate,
    resonator_f0: f64,
    options: &FitOptions,
) -> Result<DecompositionResult> {
    spectrum.validate()?;
    template.validate(spectrum)?;
    let layout = Layout::of(&template.model);
    let model = CompositeFitModel { layout };
    let fit = least_squares(&model, &spectrum.fields, &spectrum.qb_inverse, None, &template.specs, options)?;
    let p = &fit.parameters;
    let fitted = layout.model(p);
    let cov = &fit.covariance;
    let se = &fit.standard_errors;
    let mut warnings = Vec::new();
    if !fit.converged {
        warnings.push(format!("fit did not converge: {}", fit.message));
    }

    let pinned = |range: std::ops::Range<usize>| -> Vec<String> {
        range
            .filter(|&k| fit.at_bound[k])
            .map(|k| format!("{} pinned at a bound ({})", fit.names[k], p[k]))
            .collect()
    };

    let mut per_peak = Vec::new();
    let mut total_grad: Vec<(usize, f64)> = Vec::new();
    let mut total_area = 0.0;

    let lorentz_k = PI / 2.0;
    let mut order: Vec<usize> = (0..layout.lorentzians).collect();
    order.sort_by(|&a, &b| p[3 * a + 1].total_cmp(&p[3 * b + 1]).then(a.cmp(&b)));
    for (rank, &i) in order.iter().enumerate() {
        let k = 3 * i;
        let peak = layout.lorentzian(p, i);
        let grad = [(k + 1, lorentz_k * peak.amplitude), (k + 2, lorentz_k * peak.fwhm)];
        total_grad.extend(grad);
        let area = peak.area();
        total_area += area;
        per_peak.push(peak_record(
            letter_label(rank),
            PeakKind::Lorentzian,
            (peak.center, se[k]),
            (peak.fwhm, se[k + 1]),
            (peak.amplitude, se[k + 2]),
            (area, propagate(cov, &grad)),
            resonator_f0,
            pinned(k..k + 3),
        )?);
    }

    let gauss_k = (PI / (4.0 * LN_2)).sqrt();
    let mut order: Vec<usize> = (0..layout.gaussians).collect();
    order.sort_by(|&a, &b| {
        let (ka, kb) = (layout.gaussian_start() + 3 * a, layout.gaussian_start() + 3 * b);
        p[ka].total_cmp(&p[kb]).then(a.cmp(&b))
    });
    for (rank, &i) in order.iter().enumerate() {
        let k = layout.gaussian_start() + 3 * i;
        let peak = layout.gaussian(p, i);
        let grad = [(k + 1, gauss_k * peak.amplitude), (k + 2, gauss_k * peak.fwhm)];
        total_grad.extend(grad);
        let area = peak.area();
        total_area += area;
        per_peak.push(peak_record(
            numbered("S", rank, layout.gaussians),
            PeakKind::Gaussian,
            (peak.center, se[k]),
            (peak.fwhm, se[k + 1]),
            (peak.amplitude, se[k + 2]),
            (area, propagate(cov, &grad)),
            resonator_f0,
            pinned(k..k + 3),
        )?);
    }

    for i in 0..layout.satellites {
        let k = layout.satellite_start() + 4 * i;
        let pair = layout.satellite(p, i);
        let grad = [(k + 2, PI * pair.amplitude), (k + 3, PI * pair.fwhm)];
        total_grad.extend(grad);
        let area = pair.area();
        total_area += area;
        let mut rec = peak_record(
            numbered("H", i, layout.satellites),
            PeakKind::Satellites,
            (pair.center, se[k]),
            (pair.fwhm, se[k + 2]),
            (pair.amplitude, se[k + 3]),
            (area, propagate(cov, &grad)),
            resonator_f0,
            pinned(k..k + 4),
        )?;
        let freq = splitting_field_to_frequency(pair.splitting, rec.g_factor)?;
        rec.splitting = Some(pair.splitting);
        rec.splitting_uncertainty = Some(se[k + 1]);
        rec.splitting_frequency = Some(freq);
        rec.splitting_frequency_uncertainty = Some(freq / pair.splitting * se[k + 1]);
        per_peak.push(rec);
    }

    let (pedestal_area, pedestal_area_uncertainty) = match fitted.background {
        Some(_) => {
            let k = layout.background_start();
            let area_of = |q: &[f64]| -> Result<f64> {
                let b = layout.pedestal(q).expect("layout has a pedestal");
                let values: Vec<f64> = spectrum.fields.iter().map(|&x| b.value(x)).collect();
                numeric_area(&spectrum.fields, &values)
            };
            let area = area_of(p)?;
            let mut grad = Vec::new();
            let mut q = p.clone();
            for j in k..k + 4 {
                if fit.standard_errors[j] == 0.0 {
                    continue;
                }
                let h = 1e-6 * p[j].abs().max(1e-9);
                q[j] = p[j] + h;
                let up = area_of(&q)?;
                q[j] = p[j] - h;
                let down = area_of(&q)?;
                q[j] = p[j];
                grad.push((j, (up - down) / (2.0 * h)));
            }
            total_grad.extend(grad.iter().copied());
            total_area += area;
            warnings.extend(pinned(k..k + 4));
            (Some(area), Some(propagate(cov, &grad)))
        }
        None => (None, None),
    };

    let converged = fit.converged;
    Ok(DecompositionResult {
        template: template.name.clone(),
        resonator_f0,
        model: fitted,
        total_area_uncertainty: propagate(cov, &total_grad),
        fit,
        per_peak,
        pedestal_area,
        pedestal_area_uncertainty,
        total_area,
        converged,
        warnings,
    })
}

#[allow(clippy::too_many_arguments)]
fn peak_record(
    label: String,
    kind: PeakKind,
    center: (f64, f64),
    fwhm: (f64, f64),
    amplitude: (f64, f64),
    area: (f64, f64),
    resonator_f0: f64,
    warnings: Vec<String>,
) -> Result<PeakRecord> {
    let g = g_factor_from_peak(center.0, resonator_f0)?;
    let rate = linewidth_to_rate(fwhm.0, g)?;
    Ok(PeakRecord {
        label,
        kind,
        center: center.0,
        center_uncertainty: center.1,
        fwhm: fwhm.0,
        fwhm_uncertainty: fwhm.1,
        amplitude: amplitude.0,
        amplitude_uncertainty: amplitude.1,
        g_factor: g,
        fwhm_as_rate: rate,
        t2e: rate_to_t2e(rate)?,
        area: area.0,
        area_uncertainty: area.1,
        splitting: None,
        splitting_uncertainty: None,
        splitting_frequency: None,
        splitting_frequency_uncertainty: None,
        warnings,
    })
}

/// One candidate's standing in a model selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSummary {
    pub template: String,
    pub converged: bool,
    pub n_free: Option<usize>,
    pub aic: Option<f64>,
    pub delta_aic: Option<f64>,
    /// Why a candidate could not be ranked.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSelection {
    pub best: DecompositionResult,
    /// Ranking of the converged candidates; `index` refers to `candidates`.
    pub ranking: ModelRanking,
    pub candidates: Vec<CandidateSummary>,
    pub selected_index: usize,
    /// AIC of the next-best converged candidate minus that of the selection,
    /// if any other candidate converged.
    pub delta_aic_to_next: Option<f64>,
    pub notes: Vec<String>,
}

/// Fit every candidate and pick one by AIC.
///
/// The lowest-AIC model wins unless a model with fewer free parameters lies
/// within [`DECISIVE_DELTA_AIC`] of it, in which case the simplest such
/// model is returned. Exact ties keep the first-listed template.
pub fn auto_model_select(
    spectrum: &EsrSpectrum,
    candidates: &[SpectrumTemplate],
    options: &FitOptions,
) -> Result<ModelSelection> {
    if candidates.len() < 2 {
        return Err(invalid("model selection needs at least two candidate templates"));
    }
    let results = parallel::map(candidates, |t| decompose(spectrum, t, spectrum.resonator_f0, options));
    let mut summaries = Vec::new();
    let mut ok: Vec<(usize, &DecompositionResult)> = Vec::new();
    for (i, (t, r)) in candidates.iter().zip(&results).enumerate() {
        match r {
            Ok(d) if d.converged => {
                ok.push((i, d));
                summaries.push(CandidateSummary {
                    template: t.name.clone(),
                    converged: true,
                    n_free: Some(d.fit.n_free),
                    aic: Some(d.fit.aic()),
                    delta_aic: None,
                    failure: None,
                });
            }
            Ok(d) => summaries.push(CandidateSummary {
                template: t.name.clone(),
                converged: false,
                n_free: Some(d.fit.n_free),
                aic: Some(d.fit.aic()),
                delta_aic: None,
                failure: Some(d.fit.message.clone()),
            }),
            Err(e) => summaries.push(CandidateSummary {
                template: t.name.clone(),
                converged: false,
                n_free: None,
                aic: None,
                delta_aic: None,
                failure: Some(e.to_string()),
            }),
        }
    }
    if ok.is_empty() {
        let reasons: Vec<String> =
            summaries.iter().map(|s| format!("{}: {}", s.template, s.failure.as_deref().unwrap_or("?"))).collect();
        return Err(EsrError::FitFailed(format!("no candidate template converged ({})", reasons.join("; "))));
    }
    let fits: Vec<&FitResult> = ok.iter().map(|(_, d)| &d.fit).collect();
    let mut ranking = compare_models(&fits)?;
    for entry in &mut ranking.entries {
        entry.index = ok[entry.index].0;
        summaries[entry.index].delta_aic = Some(entry.delta_aic);
    }
    let lowest = ranking.best().clone();
    let chosen = ranking
        .entries
        .iter()
        .filter(|e| e.delta_aic < DECISIVE_DELTA_AIC)
        .min_by(|a, b| a.n_free.cmp(&b.n_free).then(a.index.cmp(&b.index)))
        .expect("the best entry always qualifies")
        .clone();
    let mut notes = Vec::new();
    if chosen.index != lowest.index {
        notes.push(format!(
            "'{}' has the lowest AIC but is within ΔAIC = {:.3} < {DECISIVE_DELTA_AIC} of the simpler '{}'; keeping the simpler model",
            candidates[lowest.index].name, chosen.delta_aic, candidates[chosen.index].name
        ));
    }
    for e in ranking.entries.iter().filter(|e| e.index != chosen.index) {
        if (e.aic - chosen.aic).abs() <= 1e-9 * chosen.aic.abs().max(1.0) && e.n_free == chosen.n_free {
            notes.push(format!(
                "'{}' ties with '{}' at ΔAIC = 0; the first-listed template is kept",
                candidates[e.index].name, candidates[chosen.index].name
            ));
        }
    }
    let delta_aic_to_next = ranking
        .entries
        .iter()
        .filter(|e| e.index != chosen.index)
        .map(|e| e.aic - chosen.aic)
        .min_by(f64::total_cmp);
    let mut results = results;
    let best = results.swap_remove(chosen.index).expect("chosen candidate fitted");
    Ok(ModelSelection {
        best,
        ranking,
        candidates: summaries,
        selected_index: chosen.index,
        delta_aic_to_next,
        notes,
    })
}

/// AIC of a constant-only model minus the AIC of `result`: how strongly the
/// data prefer the decomposition over a flat line.
pub fn delta_aic_vs_flat(spectrum: &EsrSpectrum, result: &DecompositionResult) -> f64 {
    let n = spectrum.len() as f64;
    let mean = spectrum.qb_inverse.iter().sum::<f64>() / n;
    let chi2: f64 = spectrum.qb_inverse.iter().map(|v| (v - mean).powi(2)).sum();
    let flat_aic = n * (chi2 / n).max(f64::MIN_POSITIVE).ln() + 2.0;
    flat_aic - result.fit.aic()
}

/// A Gaussian found near half the g ≈ 2 field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfFieldPeak {
    pub peak: GaussianPeak,
    pub center_uncertainty: f64,
    pub fwhm_uncertainty: f64,
    pub amplitude_uncertainty: f64,
    /// Fitted center over the g ≈ 2 field used as reference.
    pub center_ratio: f64,
    /// Residual RMS inside the fit window.
    pub residual_rms: f64,
    pub window: (f64, f64),
}

/// Result of a half-field search, detected or not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfFieldSearch {
    pub detected: Option<HalfFieldPeak>,
    pub reason: String,
}

struct HalfFieldModel {
    mid: f64,
}

impl Model for HalfFieldModel {
    type Input = f64;

    fn predict(&self, p: &[f64], &b: &f64) -> f64 {
        let x = (b - self.mid) / self.mid;
        GaussianPeak { center: p[0], fwhm: p[1], amplitude: p[2] }.value(b) + p[3] + p[4] * x + p[5] * x * x
    }

    fn has_gradient(&self) -> bool {
        true
    }

    fn gradient(&self, p: &[f64], &b: &f64, g: &mut [f64]) {
        let x = (b - self.mid) / self.mid;
        g[..3].copy_from_slice(&GaussianPeak { center: p[0], fwhm: p[1], amplitude: p[2] }.gradient(b));
        g[3] = 1.0;
        g[4] = x;
        g[5] = x * x;
    }
}

/// Look for an S = 1 half-field line: a Gaussian on a quadratic baseline in
/// [0.3, 0.7]·`g2_center`, center constrained to `g2_center/2` ± 15 %.
/// Detected when the fitted amplitude exceeds three times the residual RMS.
pub fn detect_half_field_peak(
    spectrum: &EsrSpectrum,
    g2_center: f64,
    options: &FitOptions,
) -> Result<HalfFieldSearch> {
    spectrum.validate()?;
    if !(g2_center.is_finite() && g2_center > 0.0) {
        return Err(invalid(format!("g≈2 center must be > 0, got {g2_center}")));
    }
    let (lo, hi) = (0.3 * g2_center, 0.7 * g2_center);
    let (bmin, bmax) = spectrum.field_range();
    let slack = 1e-9 * g2_center;
    if bmin > lo + slack || bmax < hi - slack {
        return Err(invalid(format!(
            "spectrum [{bmin}, {bmax}] T does not cover the half-field window [{lo}, {hi}] T"
        )));
    }
    let (fields, values): (Vec<f64>, Vec<f64>) = spectrum
        .fields
        .iter()
        .zip(&spectrum.qb_inverse)
        .filter(|(b, _)| **b >= lo && **b <= hi)
        .map(|(b, v)| (*b, *v))
        .unzip();
    if fields.len() < 12 {
        return Err(invalid(format!("only {} points inside the half-field window", fields.len())));
    }
    let mid = 0.5 * g2_center;
    let step = (hi - lo) / (fields.len() - 1) as f64;
    let smoothed = smooth(&values, 2);
    let base = quantile(smoothed.clone(), 0.5).unwrap_or(0.0);
    let bump = (interpolate(&fields, &smoothed, mid) - base).abs();
    let scale = smoothed.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let specs = vec![
        ParameterSpec::bounded("center", mid, 0.85 * mid, 1.15 * mid),
        ParameterSpec::bounded("fwhm", 0.25 * mid, 2.0 * step, mid),
        ParameterSpec::positive("amplitude", bump.max(0.05 * scale)),
        ParameterSpec::free("baseline_0", base).with_scale(scale),
        ParameterSpec::free("baseline_1", 0.0).with_scale(scale),
        ParameterSpec::free("baseline_2", 0.0).with_scale(scale),
    ];
    let fit = least_squares(&HalfFieldModel { mid }, &fields, &values, None, &specs, options)?;
    let p = &fit.parameters;
    let rms = fit.residual_rms();
    let peak = GaussianPeak { center: p[0], fwhm: p[1], amplitude: p[2] };
    let threshold = 3.0 * rms;
    if !fit.converged {
        return Ok(HalfFieldSearch { detected: None, reason: format!("fit did not converge: {}", fit.message) });
    }
    if fit.at_bound[0] || fit.at_bound[1] {
        return Ok(HalfFieldSearch {
            detected: None,
            reason: "Gaussian center or width pinned at a bound".to_string(),
        });
    }
    if !(peak.amplitude > threshold) {
        return Ok(HalfFieldSearch {
            detected: None,
            reason: format!("amplitude {:.3e} does not exceed 3 × residual RMS ({:.3e})", peak.amplitude, threshold),
        });
    }
    Ok(HalfFieldSearch {
        detected: Some(HalfFieldPeak {
            peak,
            center_uncertainty: fit.standard_errors[0],
            fwhm_uncertainty: fit.standard_errors[1],
            amplitude_uncertainty: fit.standard_errors[2],
            center_ratio: peak.center / g2_center,
            residual_rms: rms,
            window: (lo, hi),
        }),
        reason: format!("amplitude {:.3e} exceeds 3 × residual RMS ({:.3e})", peak.amplitude, threshold),
    })
}

/// A ratio with its propagated 1σ uncertainty; `None` when the reference is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub value: Option<f64>,
    pub uncertainty: Option<f64>,
}

impl Ratio {
    fn of(x: f64, sx: f64, x0: f64, s0: f64, is_reference: bool) -> Self {
        if is_reference {
            return Self { value: Some(1.0), uncertainty: Some(0.0) };
        }
        if x0 == 0.0 {
            return Self { value: None, uncertainty: None };
        }
        let r = x / x0;
        let rel = |v: f64, s: f64| if v == 0.0 { 0.0 } else { s / v };
        let u = r.abs() * (rel(x, sx).powi(2) + rel(x0, s0).powi(2)).sqrt();
        Self { value: Some(r), uncertainty: u.is_finite().then_some(u) }
    }

    /// Below 0.8 and more than 3σ below one.
    pub fn is_reduced(&self) -> bool {
        match (self.value, self.uncertainty) {
            (Some(r), Some(u)) => r < 0.8 && (1.0 - r) > 3.0 * u,
            (Some(r), None) => r < 0.8,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreatmentComparison {
    pub labels: Vec<String>,
    pub peak_labels: Vec<String>,
    /// `per_peak_area_ratios[entry][peak]`, relative to the first entry.
    pub per_peak_area_ratios: Vec<Vec<Ratio>>,
    pub total_area_ratios: Vec<Ratio>,
    pub notes: String,
}

/// Area ratios of every entry relative to the first.
pub fn compare_treatments(results: &[(String, DecompositionResult)]) -> Result<TreatmentComparison> {
    if results.len() < 2 {
        return Err(invalid("a treatment comparison needs at least two entries"));
    }
    let (_, reference) = &results[0];
    let peak_labels: Vec<String> = reference.per_peak.iter().map(|p| p.label.clone()).collect();
    for (label, r) in &results[1..] {
        let these: Vec<&str> = r.per_peak.iter().map(|p| p.label.as_str()).collect();
        if these != peak_labels.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(invalid(format!(
                "entry '{label}' has peaks [{}] but '{}' has [{}]",
                these.join(", "),
                results[0].0,
                peak_labels.join(", ")
            )));
        }
    }
    let mut per_peak = Vec::new();
    let mut totals = Vec::new();
    let mut notes = Vec::new();
    for (i, (label, r)) in results.iter().enumerate() {
        let row: Vec<Ratio> = r
            .per_peak
            .iter()
            .zip(&reference.per_peak)
            .map(|(p, p0)| Ratio::of(p.area, p.area_uncertainty, p0.area, p0.area_uncertainty, i == 0))
            .collect();
        let total = Ratio::of(
            r.total_area,
            r.total_area_uncertainty,
            reference.total_area,
            reference.total_area_uncertainty,
            i == 0,
        );
        if i > 0 {
            notes.extend(describe_entry(label, &results[0].0, &peak_labels, &row, &total));
        }
        per_peak.push(row);
        totals.push(total);
    }
    Ok(TreatmentComparison {
        labels: results.iter().map(|(l, _)| l.clone()).collect(),
        peak_labels,
        per_peak_area_ratios: per_peak,
        total_area_ratios: totals,
        notes: notes.join("\n"),
    })
}

fn format_ratio(r: &Ratio) -> String {
    match (r.value, r.uncertainty) {
        (Some(v), Some(u)) => format!("{v:.3} ± {u:.3}"),
        (Some(v), None) => format!("{v:.3}"),
        _ => "undefined (zero reference area)".to_string(),
    }
}

fn describe_entry(label: &str, reference: &str, peaks: &[String], row: &[Ratio], total: &Ratio) -> Vec<String> {
    let mut notes = Vec::new();
    let mut line = format!("{label}: total area {} of {reference}", format_ratio(total));
    if let Some(v) = total.value.filter(|v| *v > 0.0 && total.is_reduced()) {
        line.push_str(&format!(" ({:.2}-fold reduction)", 1.0 / v));
    }
    notes.push(line);
    let reduced: Vec<&str> = peaks.iter().zip(row).filter(|(_, r)| r.is_reduced()).map(|(p, _)| p.as_str()).collect();
    let kept: Vec<&str> = peaks.iter().zip(row).filter(|(_, r)| !r.is_reduced()).map(|(p, _)| p.as_str()).collect();
    for (p, r) in peaks.iter().zip(row) {
        notes.push(format!("{label}: Peak {p} area {} of {reference}", format_ratio(r)));
    }
    if !reduced.is_empty() && !kept.is_empty() {
        notes.push(format!(
            "{label}: selective reduction of Peak {} (Peak {} not significantly reduced)",
            reduced.join(", "),
            kept.join(", ")
        ));
    }
    notes
}
