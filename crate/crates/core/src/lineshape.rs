//! Spectral components (Lorentzian, Gaussian, hydrogen satellite pair,
//! pedestal background) and their composite.
//!
//! All widths are full widths at half maximum in tesla and all amplitudes
//! are peak heights of the loss `Q_B⁻¹`.

use std::f64::consts::{LN_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{domain, invalid, Result};

/// Height-parameterised Lorentzian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LorentzianPeak {
    pub center: f64,
    pub fwhm: f64,
    pub amplitude: f64,
}

impl LorentzianPeak {
    pub fn new(center: f64, fwhm: f64, amplitude: f64) -> Result<Self> {
        let peak = Self { center, fwhm, amplitude };
        peak.validate()?;
        Ok(peak)
    }

    pub fn validate(&self) -> Result<()> {
        validate_peak("lorentzian", self.center, self.fwhm, self.amplitude)
    }

    #[inline]
    pub fn value(&self, field: f64) -> f64 {
        let x = 2.0 * (field - self.center) / self.fwhm;
        self.amplitude / (1.0 + x * x)
    }

    /// Derivatives with respect to (center, fwhm, amplitude).
    #[inline]
    pub fn gradient(&self, field: f64) -> [f64; 3] {
        let x = 2.0 * (field - self.center) / self.fwhm;
        let d = 1.0 + x * x;
        let shape = 1.0 / d;
        let common = self.amplitude * shape * shape / self.fwhm;
        [4.0 * x * common, 2.0 * x * x * common, shape]
    }

    /// `amplitude·π·fwhm/2`.
    pub fn area(&self) -> f64 {
        self.amplitude * PI * self.fwhm / 2.0
    }
}

/// Height-parameterised Gaussian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianPeak {
    pub center: f64,
    pub fwhm: f64,
    pub amplitude: f64,
}

const FOUR_LN2: f64 = 4.0 * LN_2;

impl GaussianPeak {
    pub fn new(center: f64, fwhm: f64, amplitude: f64) -> Result<Self> {
        let peak = Self { center, fwhm, amplitude };
        peak.validate()?;
        Ok(peak)
    }

    pub fn validate(&self) -> Result<()> {
        validate_peak("gaussian", self.center, self.fwhm, self.amplitude)
    }

    #[inline]
    pub fn value(&self, field: f64) -> f64 {
        let u = (field - self.center) / self.fwhm;
        self.amplitude * (-FOUR_LN2 * u * u).exp()
    }

    /// Derivatives with respect to (center, fwhm, amplitude).
    #[inline]
    pub fn gradient(&self, field: f64) -> [f64; 3] {
        let u = (field - self.center) / self.fwhm;
        let shape = (-FOUR_LN2 * u * u).exp();
        let g = self.amplitude * shape;
        [
            g * 2.0 * FOUR_LN2 * u / self.fwhm,
            g * 2.0 * FOUR_LN2 * u * u / self.fwhm,
            shape,
        ]
    }

    /// `amplitude·fwhm·√(π/(4 ln 2))`.
    pub fn area(&self) -> f64 {
        self.amplitude * self.fwhm * (PI / FOUR_LN2).sqrt()
    }
}

/// Two Lorentzians of equal width and height at `center ± splitting/2`,
/// e.g. the atomic-hydrogen hyperfine doublet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SatellitePair {
    pub center: f64,
    pub splitting: f64,
    pub fwhm: f64,
    pub amplitude: f64,
}

impl SatellitePair {
    pub fn validate(&self) -> Result<()> {
        validate_peak("satellite pair", self.center, self.fwhm, self.amplitude)?;
        if !(self.splitting.is_finite() && self.splitting > 0.0) {
            return Err(domain(format!("satellite splitting must be > 0, got {}", self.splitting)));
        }
        Ok(())
    }

    pub fn lines(&self) -> [LorentzianPeak; 2] {
        let half = self.splitting / 2.0;
        [
            LorentzianPeak { center: self.center - half, fwhm: self.fwhm, amplitude: self.amplitude },
            LorentzianPeak { center: self.center + half, fwhm: self.fwhm, amplitude: self.amplitude },
        ]
    }

    #[inline]
    pub fn value(&self, field: f64) -> f64 {
        let [lo, hi] = self.lines();
        lo.value(field) + hi.value(field)
    }

    /// Derivatives with respect to (center, splitting, fwhm, amplitude).
    #[inline]
    pub fn gradient(&self, field: f64) -> [f64; 4] {
        let [lo, hi] = self.lines();
        let gl = lo.gradient(field);
        let gh = hi.gradient(field);
        [gl[0] + gh[0], 0.5 * (gh[0] - gl[0]), gl[1] + gh[1], gl[2] + gh[2]]
    }

    /// Combined area of both lines.
    pub fn area(&self) -> f64 {
        2.0 * self.amplitude * PI * self.fwhm / 2.0
    }
}

/// Broad background: a logistic step at `onset_field`, renormalised to vanish
/// at zero field, times an exponential roll-off above the onset.
///
/// `decay_scale = ∞` gives a flat plateau; it serialises as `null`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PedestalBackground {
    pub onset_field: f64,
    pub transition_width: f64,
    pub height: f64,
    #[serde(with = "infinite_as_null")]
    pub decay_scale: f64,
}

#[inline]
fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl PedestalBackground {
    pub fn validate(&self) -> Result<()> {
        if !self.onset_field.is_finite() {
            return Err(domain("pedestal onset must be finite"));
        }
        if !(self.transition_width.is_finite() && self.transition_width > 0.0) {
            return Err(domain(format!(
                "pedestal transition width must be > 0, got {}",
                self.transition_width
            )));
        }
        if !(self.height.is_finite() && self.height >= 0.0) {
            return Err(domain(format!("pedestal height must be >= 0, got {}", self.height)));
        }
        if self.decay_scale.is_nan() || self.decay_scale <= 0.0 {
            return Err(domain(format!("pedestal decay scale must be > 0, got {}", self.decay_scale)));
        }
        Ok(())
    }

    /// Normalised step, 0 at B = 0 and → 1 far above the onset.
    #[inline]
    fn step(&self, field: f64) -> f64 {
        let s0 = logistic(-self.onset_field / self.transition_width);
        let s = logistic((field - self.onset_field) / self.transition_width);
        (s - s0) / (1.0 - s0)
    }

    #[inline]
    fn rolloff(&self, field: f64) -> f64 {
        if self.decay_scale.is_infinite() {
            1.0
        } else {
            (-(field - self.onset_field).max(0.0) / self.decay_scale).exp()
        }
    }

    #[inline]
    pub fn value(&self, field: f64) -> f64 {
        self.height * self.step(field) * self.rolloff(field)
    }

    /// Derivatives with respect to (onset_field, transition_width, height, decay_scale).
    pub fn gradient(&self, field: f64) -> [f64; 4] {
        let w = self.transition_width;
        let z = (field - self.onset_field) / w;
        let z0 = -self.onset_field / w;
        let s = logistic(z);
        let s0 = logistic(z0);
        let ds = s * (1.0 - s);
        let ds0 = s0 * (1.0 - s0);
        let denom = 1.0 - s0;
        let step = (s - s0) / denom;
        // ∂step/∂s and ∂step/∂s0
        let d_s = 1.0 / denom;
        let d_s0 = (s - 1.0) / (denom * denom);

        let dstep_donset = d_s * (-ds / w) + d_s0 * (-ds0 / w);
        let dstep_dwidth = d_s * (-ds * z / w) + d_s0 * (-ds0 * z0 / w);

        let excess = (field - self.onset_field).max(0.0);
        let (roll, droll_donset, droll_ddecay) = if self.decay_scale.is_infinite() {
            (1.0, 0.0, 0.0)
        } else {
            let r = (-excess / self.decay_scale).exp();
            let d_on = if field > self.onset_field { r / self.decay_scale } else { 0.0 };
            (r, d_on, r * excess / (self.decay_scale * self.decay_scale))
        };
        let h = self.height;
        [
            h * (dstep_donset * roll + step * droll_donset),
            h * dstep_dwidth * roll,
            step * roll,
            h * step * droll_ddecay,
        ]
    }
}

mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &f64, s: S) -> Result<S::Ok, S::Error> {
        if value.is_infinite() {
            s.serialize_none()
        } else {
            s.serialize_some(value)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

fn validate_peak(kind: &str, center: f64, fwhm: f64, amplitude: f64) -> Result<()> {
    if !center.is_finite() {
        return Err(domain(format!("{kind} center must be finite")));
    }
    if !(fwhm.is_finite() && fwhm > 0.0) {
        return Err(domain(format!("{kind} fwhm must be > 0, got {fwhm}")));
    }
    if !(amplitude.is_finite() && amplitude >= 0.0) {
        return Err(domain(format!("{kind} amplitude must be >= 0, got {amplitude}")));
    }
    Ok(())
}

/// Sum of components plus a constant offset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CompositeSpectrumModel {
    #[serde(default)]
    pub lorentzians: Vec<LorentzianPeak>,
    #[serde(default)]
    pub gaussians: Vec<GaussianPeak>,
    #[serde(default)]
    pub satellites: Vec<SatellitePair>,
    #[serde(default)]
    pub background: Option<PedestalBackground>,
    #[serde(default)]
    pub constant_offset: f64,
}

impl CompositeSpectrumModel {
    pub fn validate(&self) -> Result<()> {
        for p in &self.lorentzians {
            p.validate()?;
        }
        for p in &self.gaussians {
            p.validate()?;
        }
        for p in &self.satellites {
            p.validate()?;
        }
        if let Some(bg) = &self.background {
            bg.validate()?;
        }
        if !self.constant_offset.is_finite() {
            return Err(domain("constant offset must be finite"));
        }
        Ok(())
    }

    /// Number of peak-like components (a satellite pair counts once).
    pub fn peak_count(&self) -> usize {
        self.lorentzians.len() + self.gaussians.len() + self.satellites.len()
    }

    #[inline]
    pub fn value(&self, field: f64) -> f64 {
        let mut v = self.constant_offset;
        if let Some(bg) = &self.background {
            v += bg.value(field);
        }
        for p in &self.lorentzians {
            v += p.value(field);
        }
        for p in &self.gaussians {
            v += p.value(field);
        }
        for p in &self.satellites {
            v += p.value(field);
        }
        v
    }

    /// Multiply every amplitude, the background height and the offset by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut m = self.clone();
        m.constant_offset *= factor;
        m.lorentzians.iter_mut().for_each(|p| p.amplitude *= factor);
        m.gaussians.iter_mut().for_each(|p| p.amplitude *= factor);
        m.satellites.iter_mut().for_each(|p| p.amplitude *= factor);
        if let Some(bg) = m.background.as_mut() {
            bg.height *= factor;
        }
        m
    }
}

/// Pointwise evaluation of the composite at each field.
pub fn evaluate_model(model: &CompositeSpectrumModel, fields: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = fields.iter().find(|b| !b.is_finite()) {
        return Err(domain(format!("field values must be finite, got {bad}")));
    }
    if let Some(neg) = fields.iter().find(|b| **b < 0.0) {
        return Err(domain(format!("field values must be >= 0, got {neg}")));
    }
    Ok(fields.iter().map(|&b| model.value(b)).collect())
}

/// A component with a closed-form area.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PeakComponent {
    Lorentzian(LorentzianPeak),
    Gaussian(GaussianPeak),
    Satellites(SatellitePair),
}

impl PeakComponent {
    pub fn value(&self, field: f64) -> f64 {
        match self {
            Self::Lorentzian(p) => p.value(field),
            Self::Gaussian(p) => p.value(field),
            Self::Satellites(p) => p.value(field),
        }
    }

    pub fn center(&self) -> f64 {
        match self {
            Self::Lorentzian(p) => p.center,
            Self::Gaussian(p) => p.center,
            Self::Satellites(p) => p.center,
        }
    }

    pub fn fwhm(&self) -> f64 {
        match self {
            Self::Lorentzian(p) => p.fwhm,
            Self::Gaussian(p) => p.fwhm,
            Self::Satellites(p) => p.fwhm,
        }
    }
}

/// Closed-form area of a component.
pub fn analytic_area(component: &PeakComponent) -> f64 {
    match component {
        PeakComponent::Lorentzian(p) => p.area(),
        PeakComponent::Gaussian(p) => p.area(),
        PeakComponent::Satellites(p) => p.area(),
    }
}

/// Trapezoidal integral of sampled values.
pub fn numeric_area(fields: &[f64], values: &[f64]) -> Result<f64> {
    if fields.len() != values.len() {
        return Err(invalid(format!(
            "fields ({}) and values ({}) differ in length",
            fields.len(),
            values.len()
        )));
    }
    if fields.len() < 2 {
        return Err(invalid("numeric area needs at least two samples"));
    }
    if fields.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(invalid("fields must be strictly increasing"));
    }
    Ok(fields
        .windows(2)
        .zip(values.windows(2))
        .map(|(b, v)| 0.5 * (b[1] - b[0]) * (v[0] + v[1]))
        .sum())
}
