//! Power dependence of resonator loss.
//!
//! * Interacting-TLS law: `1/Qi(n) = δ0 + (1/Q_TLS)·(1 + n/n_c)^(−β)`
//! * Spin saturation: `1/Q_B(P) = (1/Q_B0)·(1 + P/P_sat)^(−ε)`
//!
//! Both are fitted in loss (1/Q) space.

use serde::{Deserialize, Serialize};

use crate::error::{domain, invalid, require_positive, Result};
use crate::fit::{least_squares, FitOptions, FitResult, Model, ParameterSpec};
use crate::physics::gyromagnetic_ratio;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TlsLossParams {
    pub delta0: f64,
    /// Serialised as `null` when no power-dependent loss was resolved (Q_TLS = ∞).
    #[serde(with = "infinite_as_null")]
    pub q_tls: f64,
    pub n_c: f64,
    pub beta: f64,
}

impl TlsLossParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta0.is_finite() && self.delta0 >= 0.0) {
            return Err(invalid(format!("delta0 must be >= 0, got {}", self.delta0)));
        }
        if !(self.q_tls > 0.0) {
            return Err(invalid(format!("Q_TLS must be > 0, got {}", self.q_tls)));
        }
        if !(self.n_c.is_finite() && self.n_c > 0.0) {
            return Err(invalid(format!("n_c must be > 0, got {}", self.n_c)));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(invalid(format!("beta must lie in (0, 1], got {}", self.beta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaturationParams {
    pub qb0_inverse: f64,
    pub p_sat: f64,
    pub epsilon: f64,
}

impl SaturationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.qb0_inverse.is_finite() && self.qb0_inverse >= 0.0) {
            return Err(invalid(format!("1/Q_B0 must be >= 0, got {}", self.qb0_inverse)));
        }
        if !(self.p_sat.is_finite() && self.p_sat > 0.0) {
            return Err(invalid(format!("P_sat must be > 0, got {}", self.p_sat)));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 2.0) {
            return Err(invalid(format!("epsilon must lie in (0, 2], got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// Conversion from drive power to microwave field, B1 = α·√P.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldToPowerCoefficient {
    /// T/√W
    pub alpha: f64,
}

impl FieldToPowerCoefficient {
    pub fn new(alpha: f64) -> Result<Self> {
        require_positive("alpha", alpha)?;
        Ok(Self { alpha })
    }
}

mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// Interacting-TLS loss at mean photon number `n`.
pub fn tls_loss(n: f64, p: &TlsLossParams) -> Result<f64> {
    p.validate()?;
    if !(n.is_finite() && n >= 0.0) {
        return Err(domain(format!("photon number must be >= 0, got {n}")));
    }
    Ok(tls_value(n, &[p.delta0, p.q_tls, p.n_c, p.beta]))
}

#[inline]
fn tls_value(n: f64, p: &[f64]) -> f64 {
    p[0] + (1.0 + n / p[2]).powf(-p[3]) / p[1]
}

/// Spin-saturation loss at circulating power `p`.
pub fn saturation_loss(p: f64, s: &SaturationParams) -> Result<f64> {
    s.validate()?;
    if !(p.is_finite() && p >= 0.0) {
        return Err(domain(format!("power must be >= 0, got {p}")));
    }
    Ok(saturation_value(p, &[s.qb0_inverse, s.p_sat, s.epsilon]))
}

#[inline]
fn saturation_value(p: f64, q: &[f64]) -> f64 {
    q[0] * (1.0 + p / q[1]).powf(-q[2])
}

struct TlsModel;

impl Model for TlsModel {
    type Input = f64;

    fn predict(&self, p: &[f64], n: &f64) -> f64 {
        tls_value(*n, p)
    }

    fn has_gradient(&self) -> bool {
        true
    }

    fn gradient(&self, p: &[f64], n: &f64, g: &mut [f64]) {
        let (q, nc, beta) = (p[1], p[2], p[3]);
        let base = 1.0 + n / nc;
        let t = base.powf(-beta);
        g[0] = 1.0;
        g[1] = -t / (q * q);
        g[2] = beta * n / (q * nc * nc) * t / base;
        g[3] = -t * base.ln() / q;
    }
}

struct SaturationModel;

impl Model for SaturationModel {
    type Input = f64;

    fn predict(&self, q: &[f64], p: &f64) -> f64 {
        saturation_value(*p, q)
    }

    fn has_gradient(&self) -> bool {
        true
    }

    fn gradient(&self, q: &[f64], p: &f64, g: &mut [f64]) {
        let (q0, ps, eps) = (q[0], q[1], q[2]);
        let base = 1.0 + p / ps;
        let t = base.powf(-eps);
        g[0] = t;
        g[1] = q0 * eps * p / (ps * ps) * t / base;
        g[2] = -q0 * t * base.ln();
    }
}

/// Residual weighting for power-sweep fits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    Uniform,
    /// Residuals divided by the observed loss, for noise proportional to signal
    /// on log-spaced sweeps.
    #[default]
    Relative,
}

fn weights(values: &[f64], weighting: Weighting) -> Option<Vec<f64>> {
    match weighting {
        Weighting::Uniform => None,
        Weighting::Relative => {
            let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let floor = 1e-12 * scale.max(f64::MIN_POSITIVE);
            Some(values.iter().map(|v| 1.0 / v.abs().max(floor)).collect())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerFitOptions {
    pub fit: FitOptions,
    pub weighting: Weighting,
    /// Lower end of the fitted β range; a sweep without resolvable power
    /// dependence reports β pinned here.
    pub beta_min: f64,
    /// ΔAIC the TLS law must gain over a constant loss to count as resolved.
    pub decisive_delta_aic: f64,
}

impl Default for PowerFitOptions {
    fn default() -> Self {
        Self {
            fit: FitOptions::default(),
            weighting: Weighting::Relative,
            beta_min: 1e-3,
            decisive_delta_aic: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TlsFit {
    pub params: TlsLossParams,
    pub uncertainties: TlsLossParams,
    pub fit: FitResult,
    /// Conditions that flag the analysis (pinned parameters, non-convergence).
    pub warnings: Vec<String>,
    /// Informational remarks that do not flag the analysis.
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaturationFit {
    pub params: SaturationParams,
    pub uncertainties: SaturationParams,
    pub fit: FitResult,
    pub warnings: Vec<String>,
    pub notes: Vec<String>,
}

fn decades(xs: &[f64]) -> f64 {
    let positive = xs.iter().copied().filter(|x| *x > 0.0);
    let lo = positive.clone().fold(f64::INFINITY, f64::min);
    let hi = positive.fold(0.0, f64::max);
    if lo.is_finite() && hi > 0.0 {
        (hi / lo).log10()
    } else {
        0.0
    }
}

fn sorted_sweep(sweep: &[(f64, f64)], what: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    if sweep.iter().any(|(x, y)| !x.is_finite() || !y.is_finite() || *x < 0.0) {
        return Err(invalid(format!("{what} sweep must contain finite values with non-negative power")));
    }
    let mut pts = sweep.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    Ok(pts.into_iter().unzip())
}

fn geometric_mean_positive(xs: &[f64]) -> f64 {
    let logs: Vec<f64> = xs.iter().filter(|x| **x > 0.0).map(|x| x.ln()).collect();
    if logs.is_empty() {
        1.0
    } else {
        (logs.iter().sum::<f64>() / logs.len() as f64).exp()
    }
}

/// Fit the interacting-TLS law to `(photon number, Qi)` pairs.
pub fn fit_tls_law(sweep: &[(f64, f64)], options: &PowerFitOptions) -> Result<TlsFit> {
    if sweep.len() < 6 {
        return Err(invalid(format!("TLS fit needs at least 6 points, got {}", sweep.len())));
    }
    if sweep.iter().any(|(_, qi)| !(*qi > 0.0)) {
        return Err(invalid("Qi values must be positive"));
    }
    let (n, qi) = sorted_sweep(sweep, "TLS")?;
    let loss: Vec<f64> = qi.iter().map(|q| 1.0 / q).collect();
    let w = weights(&loss, options.weighting);
    let mut notes = Vec::new();
    let mut warnings = Vec::new();
    let span = decades(&n);
    if span < 2.0 {
        notes.push(format!(
            "photon-number range spans {span:.2} decades (< 2): parameters weakly constrained"
        ));
    }

    let nc0 = geometric_mean_positive(&n);
    let delta0_seed = loss[loss.len() - 1];
    let low = loss[0];
    let tls_seed = if low > delta0_seed { low - delta0_seed } else { 0.5 * low };
    let beta_min = options.beta_min;
    let specs = [
        ParameterSpec::positive("delta0", delta0_seed.max(1e-6 * low)),
        ParameterSpec::positive("q_tls", 1.0 / tls_seed),
        ParameterSpec::positive("n_c", nc0),
        ParameterSpec::bounded("beta", 0.3f64.max(beta_min * 2.0), beta_min, 1.0),
    ];
    let fit = least_squares(&TlsModel, &n, &loss, w.as_deref(), &specs, &options.fit)?;

    // A constant loss with the TLS term switched off (Q_TLS = ∞).
    let constant_specs = [
        ParameterSpec::positive("delta0", low),
        ParameterSpec::free("q_tls", f64::INFINITY).frozen(),
        ParameterSpec::free("n_c", nc0).frozen(),
        ParameterSpec::free("beta", beta_min).frozen(),
    ];
    let constant = least_squares(&TlsModel, &n, &loss, w.as_deref(), &constant_specs, &options.fit)?;

    let (fit, resolved) = if constant.aic() - fit.aic() > options.decisive_delta_aic {
        (fit, true)
    } else {
        warnings.push(format!(
            "no significant power dependence (ΔAIC vs constant loss {:.2} ≤ {}); beta pinned at lower bound {}",
            constant.aic() - fit.aic(),
            options.decisive_delta_aic,
            beta_min
        ));
        (constant, false)
    };
    if !fit.converged {
        warnings.push(format!("TLS fit did not converge: {}", fit.message));
    }
    if resolved {
        for (name, at) in fit.names.iter().zip(&fit.at_bound) {
            if *at {
                warnings.push(format!("{name} pinned at a bound"));
            }
        }
    }
    let p = &fit.parameters;
    let e = &fit.standard_errors;
    Ok(TlsFit {
        params: TlsLossParams { delta0: p[0], q_tls: p[1], n_c: p[2], beta: p[3] },
        uncertainties: TlsLossParams { delta0: e[0], q_tls: e[1], n_c: e[2], beta: e[3] },
        fit,
        warnings,
        notes,
    })
}

/// Power at which the loss first falls to half its low-power value,
/// log-interpolated; `None` if it never does.
fn half_loss_power(p: &[f64], y: &[f64]) -> Option<f64> {
    let target = 0.5 * y[0];
    let i = y.iter().position(|&v| v <= target)?;
    if i == 0 {
        return Some(p[0]);
    }
    let (p0, p1) = (p[i - 1].max(f64::MIN_POSITIVE), p[i]);
    let t = (y[i - 1] - target) / (y[i - 1] - y[i]);
    Some((p0.ln() + t * (p1.ln() - p0.ln())).exp())
}

/// Fit the spin-saturation law to `(circulating power, Q_B⁻¹)` pairs.
pub fn fit_saturation(sweep: &[(f64, f64)], options: &PowerFitOptions) -> Result<SaturationFit> {
    if sweep.len() < 5 {
        return Err(invalid(format!("saturation fit needs at least 5 points, got {}", sweep.len())));
    }
    let (p, y) = sorted_sweep(sweep, "saturation")?;
    if !(y[0] > 0.0) {
        return Err(invalid("low-power spin loss must be positive"));
    }
    let w = weights(&y, options.weighting);
    let mut warnings = Vec::new();
    let mut notes = Vec::new();
    let span = decades(&p);
    if span < 2.0 {
        notes.push(format!("power range spans {span:.2} decades (< 2): parameters weakly constrained"));
    }
    let p_max = p[p.len() - 1];
    let knee = half_loss_power(&p, &y).unwrap_or(p_max).max(1e-300);
    let specs = [
        ParameterSpec::positive("qb0_inverse", y[0]),
        ParameterSpec::positive("p_sat", knee),
        ParameterSpec::bounded("epsilon", 1.0, 0.0, 2.0),
    ];
    let fit = least_squares(&SaturationModel, &p, &y, w.as_deref(), &specs, &options.fit)?;
    if !fit.converged {
        warnings.push(format!("saturation fit did not converge: {}", fit.message));
    }
    let q = &fit.parameters;
    let p_min = p.iter().copied().find(|x| *x > 0.0).unwrap_or(p_max);
    if q[1] < p_min {
        warnings.push("P_sat weakly constrained: sweep lies entirely above saturation".into());
    } else if q[1] > p_max {
        warnings.push("P_sat weakly constrained: sweep lies entirely below saturation".into());
    }
    for (name, at) in fit.names.iter().zip(&fit.at_bound) {
        if *at {
            warnings.push(format!("{name} pinned at a bound"));
        }
    }
    let e = &fit.standard_errors;
    Ok(SaturationFit {
        params: SaturationParams { qb0_inverse: q[0], p_sat: q[1], epsilon: q[2] },
        uncertainties: SaturationParams { qb0_inverse: e[0], p_sat: e[1], epsilon: e[2] },
        fit,
        warnings,
        notes,
    })
}

/// `P_sat = 1/(T1e·T2e·γe²·α²)` with γe = g·μB/ħ.
pub fn saturation_power(t1e: f64, t2e: f64, alpha: FieldToPowerCoefficient, g: f64) -> Result<f64> {
    require_positive("T1e", t1e)?;
    require_positive("T2e", t2e)?;
    require_positive("alpha", alpha.alpha)?;
    let gamma = gyromagnetic_ratio(g)?;
    Ok(1.0 / (t1e * t2e * gamma * gamma * alpha.alpha * alpha.alpha))
}

/// Spin-lattice time implied by a saturation power: `T1e = 1/(P_sat·T2e·γe²·α²)`.
pub fn invert_psat_for_t1e(p_sat: f64, t2e: f64, alpha: FieldToPowerCoefficient, g: f64) -> Result<f64> {
    require_positive("P_sat", p_sat)?;
    require_positive("T2e", t2e)?;
    require_positive("alpha", alpha.alpha)?;
    let gamma = gyromagnetic_ratio(g)?;
    Ok(1.0 / (p_sat * t2e * gamma * gamma * alpha.alpha * alpha.alpha))
}
