//! Bounded nonlinear least squares (Levenberg–Marquardt) with covariance
//! estimates and AIC model ranking. Every fit in the crate goes through
//! [`least_squares`].
//!
//! Bounds are enforced by reparameterisation: a parameter with one finite
//! bound is mapped through an exponential, one with two finite bounds through
//! a logistic. The optimiser itself is unconstrained. Covariances are
//! reported in the external (bounded) coordinates.

mod lm;
mod select;
mod transform;

use std::marker::PhantomData;

use serde::{Deserialize, Serialize};

pub use lm::least_squares;
pub use select::{compare_models, ModelRanking, RankedModel};

/// A model evaluated one data point at a time.
pub trait Model {
    type Input;

    fn predict(&self, params: &[f64], x: &Self::Input) -> f64;

    /// Whether [`Model::gradient`] is implemented.
    fn has_gradient(&self) -> bool {
        false
    }

    /// Fill `grad` with ∂prediction/∂params. Only called when
    /// [`Model::has_gradient`] returns true.
    fn gradient(&self, _params: &[f64], _x: &Self::Input, _grad: &mut [f64]) {}
}

/// Adapts a closure `(params, x) -> prediction` into a [`Model`].
pub struct FnModel<X, F> {
    f: F,
    _input: PhantomData<fn(&X)>,
}

impl<X, F: Fn(&[f64], &X) -> f64> FnModel<X, F> {
    pub fn new(f: F) -> Self {
        Self { f, _input: PhantomData }
    }
}

impl<X, F: Fn(&[f64], &X) -> f64> Model for FnModel<X, F> {
    type Input = X;

    fn predict(&self, params: &[f64], x: &X) -> f64 {
        (self.f)(params, x)
    }
}

/// One fit parameter: starting value, bounds and whether it is held fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSpec {
    pub name: String,
    pub initial: f64,
    #[serde(default = "neg_inf", with = "bound")]
    pub lower_bound: f64,
    #[serde(default = "pos_inf", with = "bound")]
    pub upper_bound: f64,
    #[serde(default)]
    pub frozen: bool,
    /// Typical magnitude, used to size finite-difference steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
}

fn neg_inf() -> f64 {
    f64::NEG_INFINITY
}

fn pos_inf() -> f64 {
    f64::INFINITY
}

mod bound {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

impl ParameterSpec {
    pub fn free(name: impl Into<String>, initial: f64) -> Self {
        Self {
            name: name.into(),
            initial,
            lower_bound: f64::NEG_INFINITY,
            upper_bound: f64::INFINITY,
            frozen: false,
            scale: None,
        }
    }

    /// Bounded below by zero.
    pub fn positive(name: impl Into<String>, initial: f64) -> Self {
        Self::free(name, initial).with_bounds(0.0, f64::INFINITY)
    }

    pub fn bounded(name: impl Into<String>, initial: f64, lower: f64, upper: f64) -> Self {
        Self::free(name, initial).with_bounds(lower, upper)
    }

    pub fn with_bounds(mut self, lower: f64, upper: f64) -> Self {
        self.lower_bound = lower;
        self.upper_bound = upper;
        self
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = Some(scale);
        self
    }

    pub fn frozen(mut self) -> Self {
        self.frozen = true;
        self
    }

    // A null bound in JSON means "unbounded"; which side is decided here.
    pub(crate) fn normalized_bounds(&self) -> (f64, f64) {
        let lo = if self.lower_bound.is_nan() { f64::NEG_INFINITY } else { self.lower_bound };
        let hi = if self.upper_bound.is_nan() { f64::INFINITY } else { self.upper_bound };
        (lo, hi)
    }
}

/// Solver controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    /// Converged when an accepted step reduces χ² by less than this fraction.
    pub ftol: f64,
    /// Converged when every internal step component is below this relative size.
    pub xtol: f64,
    /// Converged when the gradient is orthogonal to the residual to this cosine.
    pub gtol: f64,
    pub max_iterations: usize,
    /// Relative central-difference step.
    pub fd_step: f64,
    /// Use a model's analytic gradient when it provides one.
    pub analytic_gradient: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            ftol: 1e-10,
            xtol: 1e-12,
            gtol: 1e-12,
            max_iterations: 500,
            fd_step: 1e-6,
            analytic_gradient: true,
        }
    }
}

/// Outcome of a least-squares fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub names: Vec<String>,
    pub parameters: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    /// Observation minus prediction, unweighted.
    #[serde(skip)]
    pub residuals: Vec<f64>,
    pub chi_squared: f64,
    pub n_data: usize,
    pub n_free: usize,
    pub degrees_of_freedom: usize,
    pub converged: bool,
    pub iterations: usize,
    /// Parameters that ended on (or numerically at) a bound.
    pub at_bound: Vec<bool>,
    pub message: String,
    /// χ² after each accepted step, starting from the initial point.
    #[serde(skip)]
    pub chi_squared_history: Vec<f64>,
}

impl FitResult {
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.index_of(name).map(|i| self.parameters[i])
    }

    pub fn error(&self, name: &str) -> Option<f64> {
        self.index_of(name).map(|i| self.standard_errors[i])
    }

    /// Residual root-mean-square (unweighted).
    pub fn residual_rms(&self) -> f64 {
        if self.residuals.is_empty() {
            return 0.0;
        }
        (self.residuals.iter().map(|r| r * r).sum::<f64>() / self.residuals.len() as f64).sqrt()
    }

    /// AIC = n·ln(χ²/n) + 2k.
    pub fn aic(&self) -> f64 {
        let n = self.n_data as f64;
        let per_point = (self.chi_squared / n).max(f64::MIN_POSITIVE);
        n * per_point.ln() + 2.0 * self.n_free as f64
    }
}
