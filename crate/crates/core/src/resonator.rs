//! Internal quality factor extraction from complex transmission and
//! assembly of the field-dependent loss spectrum.
//!
//! The notch (side-coupled) model with impedance mismatch is
//!
//! ```text
//! S21(f) = a·e^{iα}·e^{−2πifτ}·[1 − (Ql/|Qc|)·e^{iφ} / (1 + 2i·Ql·(f/f0 − 1))]
//! ```
//!
//! and the internal quality factor follows from the diameter-corrected
//! relation `1/Qi = 1/Ql − cos(φ)/|Qc|`.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use log::warn;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, require_non_negative, require_positive, EsrError, Result};
use crate::fit::{least_squares, FitOptions, FitResult, Model, ParameterSpec};
use crate::physics::HBAR;

/// Measurement conditions attached to a trace.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TraceMetadata {
    pub applied_field: f64,
    pub drive_power: f64,
    pub temperature: f64,
}

/// A frequency sweep of complex (linear) transmission.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexTrace {
    pub frequencies: Vec<f64>,
    pub s21: Vec<Complex64>,
    pub metadata: TraceMetadata,
}

pub const MIN_TRACE_POINTS: usize = 16;

impl ComplexTrace {
    pub fn new(frequencies: Vec<f64>, s21: Vec<Complex64>, metadata: TraceMetadata) -> Result<Self> {
        let trace = Self { frequencies, s21, metadata };
        trace.validate()?;
        Ok(trace)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frequencies.len() != self.s21.len() {
            return Err(invalid(format!(
                "trace has {} frequencies but {} S21 samples",
                self.frequencies.len(),
                self.s21.len()
            )));
        }
        if self.frequencies.len() < MIN_TRACE_POINTS {
            return Err(invalid(format!(
                "trace needs at least {MIN_TRACE_POINTS} points, got {}",
                self.frequencies.len()
            )));
        }
        if self.frequencies.iter().any(|f| !f.is_finite())
            || self.s21.iter().any(|z| !z.re.is_finite() || !z.im.is_finite())
        {
            return Err(invalid("trace contains non-finite samples"));
        }
        if self.frequencies.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("trace frequencies must be strictly increasing"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.is_empty()
    }
}

/// 1σ uncertainties of a [`ResonatorFit`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ResonatorUncertainties {
    pub f0: f64,
    pub q_loaded: f64,
    pub q_coupling: f64,
    pub q_internal: f64,
    pub mismatch_angle: f64,
    pub amplitude_scale: f64,
    pub phase_offset: f64,
    pub cable_delay: f64,
}

/// Notch-resonator parameters, either fitted or used as simulation truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResonatorFit {
    pub f0: f64,
    pub q_loaded: f64,
    /// |Qc|
    pub q_coupling: f64,
    pub q_internal: f64,
    pub mismatch_angle: f64,
    pub amplitude_scale: f64,
    /// Environment phase α, referenced to zero frequency.
    pub phase_offset: f64,
    pub cable_delay: f64,
    #[serde(default)]
    pub uncertainties: ResonatorUncertainties,
    #[serde(default = "yes")]
    pub converged: bool,
    #[serde(default)]
    pub chi_squared: f64,
    #[serde(default)]
    pub warnings: Vec<String>,
}

fn yes() -> bool {
    true
}

impl ResonatorFit {
    /// Ideal resonator from internal and coupling Q; Ql follows from them.
    pub fn from_qi_qc(f0: f64, q_internal: f64, q_coupling: f64, mismatch_angle: f64) -> Result<Self> {
        require_positive("f0", f0)?;
        require_positive("Qi", q_internal)?;
        require_positive("Qc", q_coupling)?;
        let inv_ql = 1.0 / q_internal + mismatch_angle.cos() / q_coupling;
        if !(inv_ql > 0.0) {
            return Err(invalid("mismatch angle gives non-positive loaded loss"));
        }
        Ok(Self {
            f0,
            q_loaded: 1.0 / inv_ql,
            q_coupling,
            q_internal,
            mismatch_angle,
            amplitude_scale: 1.0,
            phase_offset: 0.0,
            cable_delay: 0.0,
            uncertainties: ResonatorUncertainties::default(),
            converged: true,
            chi_squared: 0.0,
            warnings: Vec::new(),
        })
    }

    pub fn with_environment(mut self, amplitude_scale: f64, phase_offset: f64, cable_delay: f64) -> Self {
        self.amplitude_scale = amplitude_scale;
        self.phase_offset = phase_offset;
        self.cable_delay = cable_delay;
        self
    }

    pub fn validate(&self) -> Result<()> {
        require_positive("f0", self.f0)?;
        require_positive("Ql", self.q_loaded)?;
        require_positive("Qc", self.q_coupling)?;
        require_positive("Qi", self.q_internal)?;
        require_positive("amplitude scale", self.amplitude_scale)?;
        if !self.mismatch_angle.is_finite() || !self.phase_offset.is_finite() || !self.cable_delay.is_finite() {
            return Err(invalid("resonator angles and delay must be finite"));
        }
        Ok(())
    }

    /// Model transmission at frequency `f`.
    pub fn s21(&self, f: f64) -> Complex64 {
        notch_s21(
            f,
            self.f0,
            self.q_loaded,
            self.q_coupling,
            self.mismatch_angle,
            self.amplitude_scale,
            self.phase_offset,
            self.cable_delay,
        )
    }
}

/// Notch-model transmission.
#[allow(clippy::too_many_arguments)]
pub fn notch_s21(f: f64, f0: f64, ql: f64, qc: f64, phi: f64, a: f64, alpha: f64, tau: f64) -> Complex64 {
    let env = Complex64::from_polar(a, alpha - TAU * f * tau);
    let k = Complex64::from_polar(ql / qc, phi);
    let d = Complex64::new(1.0, 2.0 * ql * (f / f0 - 1.0));
    env * (1.0 - k / d)
}

/// Options for [`fit_s21_notch`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NotchFitOptions {
    pub fit: FitOptions,
    /// Fraction of the trace at each end treated as off-resonant baseline.
    pub edge_fraction: f64,
    /// Required dip depth in units of the baseline noise.
    pub min_dip_snr: f64,
}

impl Default for NotchFitOptions {
    fn default() -> Self {
        Self {
            fit: FitOptions::default(),
            edge_fraction: 0.1,
            min_dip_snr: 3.0,
        }
    }
}

// Parameter layout: f0, Ql, Qc, φ, a, α (at f_ref), τ.
const F0: usize = 0;
const QL: usize = 1;
const QC: usize = 2;
const PHI: usize = 3;
const AMP: usize = 4;
const ALPHA: usize = 5;
const TAU_IDX: usize = 6;

/// Notch model in real/imaginary parts, with the delay phase referenced to
/// `f_ref` so that α and τ decouple.
struct NotchModel {
    f_ref: f64,
}

#[derive(Clone, Copy)]
struct NotchPoint {
    f: f64,
    imag: bool,
}

impl NotchModel {
    fn complex(&self, p: &[f64], f: f64) -> Complex64 {
        let env = Complex64::from_polar(p[AMP], p[ALPHA] - TAU * (f - self.f_ref) * p[TAU_IDX]);
        let k = Complex64::from_polar(p[QL] / p[QC], p[PHI]);
        let d = Complex64::new(1.0, 2.0 * p[QL] * (f / p[F0] - 1.0));
        env * (1.0 - k / d)
    }
}

impl Model for NotchModel {
    type Input = NotchPoint;

    fn predict(&self, p: &[f64], x: &NotchPoint) -> f64 {
        let s = self.complex(p, x.f);
        if x.imag {
            s.im
        } else {
            s.re
        }
    }

    fn has_gradient(&self) -> bool {
        true
    }

    fn gradient(&self, p: &[f64], x: &NotchPoint, grad: &mut [f64]) {
        let f = x.f;
        let (f0, ql, qc, phi, a) = (p[F0], p[QL], p[QC], p[PHI], p[AMP]);
        let i = Complex64::i();
        let env = Complex64::from_polar(a, p[ALPHA] - TAU * (f - self.f_ref) * p[TAU_IDX]);
        let eiphi = Complex64::from_polar(1.0, phi);
        let k = eiphi * (ql / qc);
        let d = Complex64::new(1.0, 2.0 * ql * (f / f0 - 1.0));
        let s = env * (1.0 - k / d);
        let d2 = d * d;
        let parts = [
            -env * k * i * (2.0 * ql * f / (f0 * f0)) / d2,
            -env * eiphi / (qc * d2),
            env * k / (qc * d),
            -env * i * k / d,
            s / a,
            i * s,
            -i * (TAU * (f - self.f_ref)) * s,
        ];
        for (g, z) in grad.iter_mut().zip(parts) {
            *g = if x.imag { z.im } else { z.re };
        }
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Algebraic (Kåsa) circle fit; returns (center, radius).
fn fit_circle(points: &[Complex64]) -> Option<(Complex64, f64)> {
    let n = points.len();
    let a = DMatrix::from_fn(n, 3, |r, c| match c {
        0 => points[r].re,
        1 => points[r].im,
        _ => 1.0,
    });
    let b = DVector::from_iterator(n, points.iter().map(|z| -(z.norm_sqr())));
    let sol = a.svd(true, true).solve(&b, 1e-14).ok()?;
    let center = Complex64::new(-sol[0] / 2.0, -sol[1] / 2.0);
    let r2 = center.norm_sqr() - sol[2];
    (r2 > 0.0).then(|| (center, r2.sqrt()))
}

fn unwrap_phase(z: &[Complex64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(z.len());
    let mut offset = 0.0;
    let mut prev = z[0].arg();
    out.push(prev);
    for s in &z[1..] {
        let ph = s.arg();
        let d = ph - prev;
        if d > PI {
            offset -= TAU;
        } else if d < -PI {
            offset += TAU;
        }
        out.push(ph + offset);
        prev = ph;
    }
    out
}

fn linear_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx > 0.0 {
        sxy / sxx
    } else {
        0.0
    }
}

fn remove_delay(trace: &ComplexTrace, f_ref: f64, tau: f64) -> Vec<Complex64> {
    trace
        .s21
        .iter()
        .zip(&trace.frequencies)
        .map(|(z, &fi)| z * Complex64::from_polar(1.0, TAU * (fi - f_ref) * tau))
        .collect()
}

/// Squared distance of the delay-corrected points from their best circle.
fn circle_misfit(trace: &ComplexTrace, f_ref: f64, tau: f64) -> f64 {
    let z = remove_delay(trace, f_ref, tau);
    match fit_circle(&z) {
        Some((c, r)) => z.iter().map(|p| ((p - c).norm() - r).powi(2)).sum::<f64>(),
        None => f64::INFINITY,
    }
}

/// Grid search over `guess ± half_width` followed by golden-section refinement.
fn refine_delay(trace: &ComplexTrace, f_ref: f64, guess: f64, half_width: f64) -> f64 {
    const GRID: usize = 40;
    let step = half_width / GRID as f64;
    let (mut best, mut best_cost) = (guess, circle_misfit(trace, f_ref, guess));
    for k in 0..=2 * GRID {
        let t = guess - half_width + k as f64 * step;
        let c = circle_misfit(trace, f_ref, t);
        if c < best_cost {
            best = t;
            best_cost = c;
        }
    }
    let (mut a, mut b) = (best - step, best + step);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let (mut c1, mut c2) = (circle_misfit(trace, f_ref, x1), circle_misfit(trace, f_ref, x2));
    for _ in 0..40 {
        if c1 < c2 {
            b = x2;
            x2 = x1;
            c2 = c1;
            x1 = b - g * (b - a);
            c1 = circle_misfit(trace, f_ref, x1);
        } else {
            a = x1;
            x1 = x2;
            c1 = c2;
            x2 = a + g * (b - a);
            c2 = circle_misfit(trace, f_ref, x2);
        }
    }
    let t = 0.5 * (a + b);
    if circle_misfit(trace, f_ref, t) <= best_cost {
        t
    } else {
        best
    }
}

struct Seed {
    params: [f64; 7],
}

fn edge_indices(n: usize, fraction: f64) -> Vec<usize> {
    let k = ((n as f64 * fraction).round() as usize).clamp(4, n / 2);
    (0..k).chain(n - k..n).collect()
}

/// Parameter-free initial estimates.
fn seed(trace: &ComplexTrace, f_ref: f64, options: &NotchFitOptions) -> Result<Seed> {
    let n = trace.len();
    let f = &trace.frequencies;
    let mags: Vec<f64> = trace.s21.iter().map(|z| z.norm()).collect();
    let edges = edge_indices(n, options.edge_fraction);

    // Dip detection against the baseline noise floor.
    let mut edge_mags: Vec<f64> = edges.iter().map(|&i| mags[i]).collect();
    let baseline = median(&mut edge_mags);
    let mut diffs: Vec<f64> = edges
        .windows(2)
        .filter(|w| w[1] == w[0] + 1)
        .map(|w| (mags[w[1]] - mags[w[0]]).abs())
        .collect();
    let noise = if diffs.is_empty() { 0.0 } else { median(&mut diffs) / 0.6745 / 2f64.sqrt() };
    let (imin, &min_mag) = mags
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty trace");
    let depth = baseline - min_mag;
    if !(depth > options.min_dip_snr * noise && depth > 1e-9 * baseline) {
        return Err(EsrError::NoResonance(format!(
            "dip depth {depth:.3e} is not above {}x the noise floor {noise:.3e}",
            options.min_dip_snr
        )));
    }

    // Cable delay from the phase slope of the baseline.
    let phase = unwrap_phase(&trace.s21);
    let ef: Vec<f64> = edges.iter().map(|&i| f[i] - f_ref).collect();
    let ep: Vec<f64> = edges.iter().map(|&i| phase[i]).collect();
    let edge_tau = -linear_slope(&ef, &ep) / TAU;
    // The resonance itself bends the edge phase, most strongly when
    // overcoupled, so refine the delay by making the corrected data circular.
    let span = f[n - 1] - f[0];
    let tau = refine_delay(trace, f_ref, edge_tau, 1.0 / span);

    let corrected = remove_delay(trace, f_ref, tau);
    let (center, radius) = fit_circle(&corrected)
        .ok_or_else(|| EsrError::NoResonance("circle fit of the resonance failed".into()))?;

    // Off-resonant point: the baseline direction projected onto the circle.
    let edge_mean = edges.iter().map(|&i| corrected[i]).sum::<Complex64>() / edges.len() as f64;
    let dir = edge_mean - center;
    let off_res = if dir.norm() > 0.0 { center + dir * (radius / dir.norm()) } else { edge_mean };

    let f0 = f[imin];
    // −3 dB bandwidth of |S21|² around the minimum.
    let base2 = off_res.norm_sqr();
    let level = 0.5 * (base2 + min_mag * min_mag);
    let left = (0..imin).rev().find(|&i| mags[i] * mags[i] >= level);
    let right = (imin + 1..n).find(|&i| mags[i] * mags[i] >= level);
    let bandwidth = match (left, right) {
        (Some(l), Some(r)) if f[r] > f[l] => f[r] - f[l],
        (Some(l), None) => 2.0 * (f0 - f[l]),
        (None, Some(r)) => 2.0 * (f[r] - f0),
        _ => span / 10.0,
    }
    .max(span / n as f64);
    let ql = f0 / bandwidth;

    let a = off_res.norm();
    let alpha = off_res.arg();
    let norm_center = center / off_res;
    let diameter = (2.0 * radius / a).clamp(1e-6, 0.999);
    let qc = ql / diameter;
    let phi = (1.0 - norm_center).arg().clamp(-FRAC_PI_2 + 0.05, FRAC_PI_2 - 0.05);

    Ok(Seed {
        params: [f0, ql, qc, phi, a, alpha, tau],
    })
}

/// Fit a complex transmission trace to the notch model.
///
/// Fails with [`EsrError::NoResonance`] when no dip stands out from the
/// baseline noise. A fit that does not converge is returned with
/// `converged = false` and a warning.
pub fn fit_s21_notch(trace: &ComplexTrace, options: &NotchFitOptions) -> Result<ResonatorFit> {
    trace.validate()?;
    let n = trace.len();
    let f = &trace.frequencies;
    let f_ref = 0.5 * (f[0] + f[n - 1]);
    let seed = seed(trace, f_ref, options)?;
    let [f0, ql, qc, phi, a, alpha, tau] = seed.params;
    let span = f[n - 1] - f[0];

    let specs = [
        ParameterSpec::bounded("f0", f0, f[0], f[n - 1]).with_scale(span),
        ParameterSpec::positive("q_loaded", ql),
        ParameterSpec::positive("q_coupling", qc),
        ParameterSpec::bounded("mismatch_angle", phi, -FRAC_PI_2, FRAC_PI_2),
        ParameterSpec::positive("amplitude_scale", a),
        ParameterSpec::free("phase_offset", alpha).with_scale(1.0),
        ParameterSpec::free("cable_delay", tau).with_scale(1.0 / span),
    ];
    let inputs: Vec<NotchPoint> = f
        .iter()
        .flat_map(|&fi| [NotchPoint { f: fi, imag: false }, NotchPoint { f: fi, imag: true }])
        .collect();
    let observations: Vec<f64> = trace.s21.iter().flat_map(|z| [z.re, z.im]).collect();
    let model = NotchModel { f_ref };
    let fit = least_squares(&model, &inputs, &observations, None, &specs, &options.fit)?;
    Ok(resonator_from_fit(&fit, f_ref))
}

fn resonator_from_fit(fit: &FitResult, f_ref: f64) -> ResonatorFit {
    let p = &fit.parameters;
    let (ql, qc, phi) = (p[QL], p[QC], p[PHI]);
    let inv_qi = 1.0 / ql - phi.cos() / qc;
    let qi = 1.0 / inv_qi;
    let mut warnings = Vec::new();
    if !fit.converged {
        warnings.push(format!("notch fit did not converge: {}", fit.message));
    }
    if !(inv_qi > 0.0) {
        warnings.push("fitted parameters imply non-positive internal loss".into());
    }
    // First-order propagation through Qi = 1/(1/Ql − cos φ/Qc).
    let grad = [
        (QL, qi * qi / (ql * ql)),
        (QC, -qi * qi * phi.cos() / (qc * qc)),
        (PHI, -qi * qi * phi.sin() / qc),
    ];
    let mut var_qi = 0.0;
    for &(i, gi) in &grad {
        for &(j, gj) in &grad {
            var_qi += gi * gj * fit.covariance[i][j];
        }
    }
    let se = &fit.standard_errors;
    let alpha = (p[ALPHA] + TAU * f_ref * p[TAU_IDX]).rem_euclid(TAU);
    let alpha = if alpha > PI { alpha - TAU } else { alpha };
    ResonatorFit {
        f0: p[F0],
        q_loaded: ql,
        q_coupling: qc,
        q_internal: qi,
        mismatch_angle: phi,
        amplitude_scale: p[AMP],
        phase_offset: alpha,
        cable_delay: p[TAU_IDX],
        uncertainties: ResonatorUncertainties {
            f0: se[F0],
            q_loaded: se[QL],
            q_coupling: se[QC],
            q_internal: var_qi.max(0.0).sqrt(),
            mismatch_angle: se[PHI],
            amplitude_scale: se[AMP],
            phase_offset: se[ALPHA],
            cable_delay: se[TAU_IDX],
        },
        converged: fit.converged && inv_qi > 0.0,
        chi_squared: fit.chi_squared,
        warnings,
    }
}

/// Field-dependent internal loss `Q_B⁻¹(B) = Qi⁻¹(B) − Qi⁻¹(B_ref)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EsrSpectrum {
    pub fields: Vec<f64>,
    pub qb_inverse: Vec<f64>,
    pub reference_qi_inverse: f64,
    pub resonator_f0: f64,
}

impl EsrSpectrum {
    pub fn new(fields: Vec<f64>, qb_inverse: Vec<f64>, reference_qi_inverse: f64, resonator_f0: f64) -> Result<Self> {
        let s = Self { fields, qb_inverse, reference_qi_inverse, resonator_f0 };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.fields.len() != self.qb_inverse.len() {
            return Err(invalid("spectrum fields and values differ in length"));
        }
        if self.fields.len() < 2 {
            return Err(invalid("spectrum needs at least two points"));
        }
        if self.fields.iter().chain(&self.qb_inverse).any(|v| !v.is_finite()) {
            return Err(invalid("spectrum contains non-finite values"));
        }
        if self.fields.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("spectrum fields must be strictly increasing"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn field_range(&self) -> (f64, f64) {
        (self.fields[0], self.fields[self.fields.len() - 1])
    }
}

/// How the loss reference is chosen when assembling a spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferencePolicy {
    /// Use B = 0 if present, else the lowest field (with a logged warning).
    #[default]
    ZeroOrLowest,
    /// Require a B = 0 entry.
    RequireZero,
}

/// Fields with |B| below this are treated as zero field.
pub const ZERO_FIELD_TOLERANCE: f64 = 1e-9;

/// Assemble the loss spectrum from per-field resonator fits.
pub fn build_esr_spectrum(fits: &[(f64, ResonatorFit)], policy: ReferencePolicy) -> Result<EsrSpectrum> {
    if fits.len() < 2 {
        return Err(invalid("a spectrum needs at least two field points"));
    }
    for (b, fit) in fits {
        if !b.is_finite() {
            return Err(invalid("field values must be finite"));
        }
        if !(fit.q_internal.is_finite() && fit.q_internal > 0.0) {
            return Err(invalid(format!("fit at B = {b} T has invalid Qi {}", fit.q_internal)));
        }
    }
    let mut order: Vec<usize> = (0..fits.len()).collect();
    order.sort_by(|&a, &b| fits[a].0.total_cmp(&fits[b].0));
    if order.windows(2).any(|w| fits[w[0]].0 == fits[w[1]].0) {
        return Err(invalid("duplicate field values"));
    }
    let zeros: Vec<usize> = order
        .iter()
        .copied()
        .filter(|&i| fits[i].0.abs() <= ZERO_FIELD_TOLERANCE)
        .collect();
    let reference = match (zeros.as_slice(), policy) {
        ([one], _) => *one,
        ([], ReferencePolicy::ZeroOrLowest) => {
            warn!(
                "no zero-field trace; using B = {} T as the loss reference",
                fits[order[0]].0
            );
            order[0]
        }
        ([], ReferencePolicy::RequireZero) => {
            return Err(invalid("no zero-field (B = 0) reference trace"));
        }
        _ => return Err(invalid("more than one zero-field trace")),
    };
    let ref_loss = 1.0 / fits[reference].1.q_internal;
    let fields = order.iter().map(|&i| fits[i].0).collect();
    let qb_inverse = order
        .iter()
        .map(|&i| if i == reference { 0.0 } else { 1.0 / fits[i].1.q_internal - ref_loss })
        .collect();
    EsrSpectrum::new(fields, qb_inverse, ref_loss, fits[reference].1.f0)
}

fn validate_for_power(fit: &ResonatorFit) -> Result<()> {
    require_positive("f0", fit.f0).map_err(|e| invalid(e.to_string()))?;
    require_positive("Ql", fit.q_loaded).map_err(|e| invalid(e.to_string()))?;
    require_positive("Qc", fit.q_coupling).map_err(|e| invalid(e.to_string()))?;
    Ok(())
}

/// `P_circ = 2·Ql²·P_drive/|Qc|`.
pub fn circulating_power(drive_power: f64, fit: &ResonatorFit) -> Result<f64> {
    require_non_negative("drive power", drive_power)?;
    validate_for_power(fit)?;
    Ok(2.0 * fit.q_loaded * fit.q_loaded * drive_power / fit.q_coupling)
}

/// Mean photon number `⟨n⟩ = P_circ / (ħ·ω0²)`.
pub fn photon_number(drive_power: f64, fit: &ResonatorFit) -> Result<f64> {
    let p_circ = circulating_power(drive_power, fit)?;
    let omega = TAU * fit.f0;
    Ok(p_circ / (HBAR * omega * omega))
}

/// Inverse of [`photon_number`].
pub fn drive_power_for_photons(photons: f64, fit: &ResonatorFit) -> Result<f64> {
    require_non_negative("photon number", photons)?;
    validate_for_power(fit)?;
    let omega = TAU * fit.f0;
    Ok(photons * HBAR * omega * omega * fit.q_coupling / (2.0 * fit.q_loaded * fit.q_loaded))
}
