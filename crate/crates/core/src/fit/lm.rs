use nalgebra::{DMatrix, DVector};

use super::transform::Transform;
use super::{FitOptions, FitResult, Model, ParameterSpec};
use crate::error::{invalid, Result};

struct Problem<'a, M: Model> {
    model: &'a M,
    inputs: &'a [M::Input],
    observations: &'a [f64],
    weights: Option<&'a [f64]>,
    free: Vec<usize>,
    transforms: Vec<Transform>,
    fd_scale: Vec<f64>,
    options: &'a FitOptions,
}

impl<M: Model> Problem<'_, M> {
    fn weight(&self, i: usize) -> f64 {
        self.weights.map_or(1.0, |w| w[i])
    }

    fn expand(&self, full: &mut [f64], u: &[f64]) {
        for ((&j, t), &uj) in self.free.iter().zip(&self.transforms).zip(u) {
            full[j] = t.to_external(uj);
        }
    }

    /// Weighted residuals and χ².
    fn residuals(&self, params: &[f64]) -> (DVector<f64>, f64) {
        let r = DVector::from_iterator(
            self.inputs.len(),
            self.inputs
                .iter()
                .zip(self.observations)
                .enumerate()
                .map(|(i, (x, &y))| self.weight(i) * (y - self.model.predict(params, x))),
        );
        let chi2 = r.norm_squared();
        (r, chi2)
    }

    /// Weighted Jacobian of the predictions with respect to the free external parameters.
    fn jacobian(&self, params: &[f64]) -> DMatrix<f64> {
        let m = self.inputs.len();
        let nf = self.free.len();
        let mut jac = DMatrix::zeros(m, nf);
        if self.options.analytic_gradient && self.model.has_gradient() {
            let mut grad = vec![0.0; params.len()];
            for (i, x) in self.inputs.iter().enumerate() {
                self.model.gradient(params, x, &mut grad);
                let w = self.weight(i);
                for (c, &j) in self.free.iter().enumerate() {
                    jac[(i, c)] = w * grad[j];
                }
            }
        } else {
            let mut probe = params.to_vec();
            for (c, &j) in self.free.iter().enumerate() {
                let h = self.options.fd_step * params[j].abs().max(self.fd_scale[c]);
                probe[j] = params[j] + h;
                let up: Vec<f64> = self.inputs.iter().map(|x| self.model.predict(&probe, x)).collect();
                probe[j] = params[j] - h;
                for (i, x) in self.inputs.iter().enumerate() {
                    let down = self.model.predict(&probe, x);
                    jac[(i, c)] = self.weight(i) * (up[i] - down) / (2.0 * h);
                }
                probe[j] = params[j];
            }
        }
        jac
    }
}

fn validate(
    n_inputs: usize,
    observations: &[f64],
    weights: Option<&[f64]>,
    specs: &[ParameterSpec],
) -> Result<()> {
    if n_inputs != observations.len() {
        return Err(invalid(format!(
            "{} inputs but {} observations",
            n_inputs,
            observations.len()
        )));
    }
    if let Some(w) = weights {
        if w.len() != observations.len() {
            return Err(invalid("weights and observations differ in length"));
        }
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(invalid("weights must be finite and non-negative"));
        }
    }
    if observations.iter().any(|y| !y.is_finite()) {
        return Err(invalid("observations must be finite"));
    }
    for s in specs {
        let (lo, hi) = s.normalized_bounds();
        if !s.initial.is_finite() && !s.frozen {
            return Err(invalid(format!("parameter {} has a non-finite initial value", s.name)));
        }
        if lo >= hi {
            return Err(invalid(format!("parameter {} has invalid bounds [{lo}, {hi}]", s.name)));
        }
        if s.initial < lo || s.initial > hi {
            return Err(invalid(format!(
                "parameter {} initial value {} outside [{lo}, {hi}]",
                s.name, s.initial
            )));
        }
    }
    let n_free = specs.iter().filter(|s| !s.frozen).count();
    if observations.len() < n_free + 1 {
        return Err(invalid(format!(
            "{} observations cannot constrain {} free parameters",
            observations.len(),
            n_free
        )));
    }
    Ok(())
}

/// Weighted least squares by Levenberg–Marquardt.
///
/// `weights` multiply residuals (pass 1/σ for inverse-variance weighting).
/// Non-convergence is reported through [`FitResult::converged`], never as an
/// error; errors are reserved for malformed input.
pub fn least_squares<M: Model>(
    model: &M,
    inputs: &[M::Input],
    observations: &[f64],
    weights: Option<&[f64]>,
    specs: &[ParameterSpec],
    options: &FitOptions,
) -> Result<FitResult> {
    validate(inputs.len(), observations, weights, specs)?;

    let mut free = Vec::new();
    let mut transforms = Vec::new();
    let mut fd_scale = Vec::new();
    for (j, s) in specs.iter().enumerate() {
        if s.frozen {
            continue;
        }
        let (lo, hi) = s.normalized_bounds();
        free.push(j);
        transforms.push(Transform::for_bounds(lo, hi)?);
        let typical = s.scale.unwrap_or_else(|| s.initial.abs());
        fd_scale.push(if typical > 0.0 { typical } else { 1.0 });
    }
    let problem = Problem {
        model,
        inputs,
        observations,
        weights,
        free,
        transforms,
        fd_scale,
        options,
    };
    let nf = problem.free.len();

    let mut params: Vec<f64> = specs.iter().map(|s| s.initial).collect();
    let mut u: Vec<f64> = problem
        .free
        .iter()
        .zip(&problem.transforms)
        .map(|(&j, t)| t.to_internal(params[j]))
        .collect();
    problem.expand(&mut params, &u);

    let (mut r, mut chi2) = problem.residuals(&params);
    if !chi2.is_finite() {
        return Err(invalid("model is not finite at the initial parameters"));
    }
    let mut history = vec![chi2];
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut message = String::from("maximum iterations reached");
    let mut iterations = 0;
    let mut trial = params.clone();

    'outer: while iterations < options.max_iterations {
        iterations += 1;
        if chi2 == 0.0 || nf == 0 {
            converged = true;
            message = "exact fit".into();
            break;
        }
        let mut jac = problem.jacobian(&params);
        for (c, (t, &uc)) in problem.transforms.iter().zip(&u).enumerate() {
            let d = t.derivative(uc);
            jac.column_mut(c).scale_mut(d);
        }
        if jac.iter().any(|v| !v.is_finite()) {
            message = "Jacobian is not finite".into();
            break;
        }
        let a = jac.tr_mul(&jac);
        let g = jac.tr_mul(&r);

        let rnorm = chi2.sqrt();
        let gmax = (0..nf)
            .filter(|&c| a[(c, c)] > 0.0)
            .map(|c| g[c].abs() / (a[(c, c)].sqrt() * rnorm))
            .fold(0.0, f64::max);
        if gmax <= options.gtol {
            converged = true;
            message = "gradient orthogonal to residuals".into();
            break;
        }

        let max_diag = (0..nf).map(|c| a[(c, c)]).fold(0.0, f64::max);
        let floor = 1e-12 * max_diag.max(f64::MIN_POSITIVE);
        loop {
            let mut damped = a.clone();
            for c in 0..nf {
                damped[(c, c)] += lambda * a[(c, c)].max(floor);
            }
            let step = damped.cholesky().map(|ch| ch.solve(&g));
            let Some(delta) = step.filter(|d| d.iter().all(|x| x.is_finite())) else {
                lambda *= 10.0;
                if lambda > 1e20 {
                    message = "damping exhausted (singular normal equations)".into();
                    break 'outer;
                }
                continue;
            };

            let u_new: Vec<f64> = u.iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
            problem.expand(&mut trial, &u_new);
            let (r_new, chi_new) = problem.residuals(&trial);
            let small_step = delta
                .iter()
                .zip(&u)
                .all(|(d, uc)| d.abs() <= options.xtol * (uc.abs() + options.xtol));
            let predicted = 2.0 * delta.dot(&g) - delta.dot(&(&a * &delta));

            if chi_new.is_finite() && chi_new < chi2 {
                let relative = (chi2 - chi_new) / chi2;
                u = u_new;
                std::mem::swap(&mut params, &mut trial);
                r = r_new;
                chi2 = chi_new;
                history.push(chi2);
                lambda = (lambda / 10.0).max(1e-15);
                if relative <= options.ftol {
                    converged = true;
                    message = "relative chi-squared reduction below ftol".into();
                    break 'outer;
                }
                if small_step {
                    converged = true;
                    message = "step below xtol".into();
                    break 'outer;
                }
                break;
            }
            if small_step || predicted <= options.ftol * chi2 {
                converged = true;
                message = "no further reduction possible".into();
                break 'outer;
            }
            lambda *= 10.0;
            if lambda > 1e20 {
                message = "damping exhausted".into();
                break 'outer;
            }
        }
    }

    let n = observations.len();
    let dof = n - nf;
    let (covariance, rank_deficient) = covariance(&problem, &params, chi2 / dof as f64);
    let np = specs.len();
    let mut cov_full = vec![vec![0.0; np]; np];
    for (a, &ja) in problem.free.iter().enumerate() {
        for (b, &jb) in problem.free.iter().enumerate() {
            cov_full[ja][jb] = covariance[(a, b)];
        }
    }
    let standard_errors = (0..np)
        .map(|j| {
            let v = cov_full[j][j];
            if v.is_nan() {
                v
            } else {
                v.max(0.0).sqrt()
            }
        })
        .collect();
    let mut at_bound = vec![false; np];
    for (&j, t) in problem.free.iter().zip(&problem.transforms) {
        at_bound[j] = t.at_bound(params[j], specs[j].initial);
    }
    if rank_deficient {
        message.push_str("; covariance rank-deficient");
    }
    // Frozen parameters are handed back untouched.
    for (j, s) in specs.iter().enumerate() {
        if s.frozen {
            params[j] = s.initial;
        }
    }
    let residuals = inputs
        .iter()
        .zip(observations)
        .map(|(x, &y)| y - model.predict(&params, x))
        .collect();

    Ok(FitResult {
        names: specs.iter().map(|s| s.name.clone()).collect(),
        parameters: params,
        standard_errors,
        covariance: cov_full,
        residuals,
        chi_squared: chi2,
        n_data: n,
        n_free: nf,
        degrees_of_freedom: dof,
        converged,
        iterations,
        at_bound,
        message,
        chi_squared_history: history,
    })
}

/// s²·(JᵀJ)⁻¹ in external coordinates, inverted after diagonal equilibration.
fn covariance<M: Model>(problem: &Problem<'_, M>, params: &[f64], s2: f64) -> (DMatrix<f64>, bool) {
    let nf = problem.free.len();
    if nf == 0 {
        return (DMatrix::zeros(0, 0), false);
    }
    let jac = problem.jacobian(params);
    let a = jac.tr_mul(&jac);
    let d: Vec<f64> = (0..nf)
        .map(|c| if a[(c, c)] > 0.0 { 1.0 / a[(c, c)].sqrt() } else { 0.0 })
        .collect();
    let scaled = DMatrix::from_fn(nf, nf, |i, j| d[i] * a[(i, j)] * d[j]);
    // nalgebra's SVD does not terminate on non-finite input.
    if scaled.iter().any(|v| !v.is_finite()) {
        return (DMatrix::from_element(nf, nf, f64::NAN), true);
    }
    let svd = scaled.svd(true, true);
    let smax = svd.singular_values.max();
    let cutoff = 1e-13 * smax;
    let rank_deficient = d.contains(&0.0) || svd.singular_values.iter().any(|&s| s <= cutoff);
    let inv = svd
        .pseudo_inverse(cutoff.max(f64::MIN_POSITIVE))
        .unwrap_or_else(|_| DMatrix::zeros(nf, nf));
    let cov = DMatrix::from_fn(nf, nf, |i, j| s2 * d[i] * inv[(i, j)] * d[j]);
    (cov, rank_deficient)
}
