use serde::{Deserialize, Serialize};

use super::FitResult;
use crate::error::{invalid, Result};

/// One entry of an AIC ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedModel {
    /// Position of the fit in the input slice.
    pub index: usize,
    pub aic: f64,
    /// AIC minus the best AIC (0 for the winner).
    pub delta_aic: f64,
    pub n_free: usize,
    pub chi_squared: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRanking {
    pub entries: Vec<RankedModel>,
}

impl ModelRanking {
    pub fn best(&self) -> &RankedModel {
        &self.entries[0]
    }
}

/// Rank fits of the same data by AIC = n·ln(χ²/n) + 2k, ascending.
///
/// Ties go to the model with fewer free parameters, then to input order.
pub fn compare_models(fits: &[&FitResult]) -> Result<ModelRanking> {
    let first = fits.first().ok_or_else(|| invalid("no fits to compare"))?;
    if fits.iter().any(|f| f.n_data != first.n_data) {
        return Err(invalid("fits were performed on different data sets"));
    }
    let mut entries: Vec<RankedModel> = fits
        .iter()
        .enumerate()
        .map(|(index, f)| RankedModel {
            index,
            aic: f.aic(),
            delta_aic: 0.0,
            n_free: f.n_free,
            chi_squared: f.chi_squared,
        })
        .collect();
    // AIC differences below 1e-9 count as ties.
    let key = |aic: f64| (aic * 1e9).round();
    entries.sort_by(|a, b| {
        key(a.aic)
            .total_cmp(&key(b.aic))
            .then(a.n_free.cmp(&b.n_free))
            .then(a.index.cmp(&b.index))
    });
    let best = entries[0].aic;
    for e in &mut entries {
        e.delta_aic = e.aic - best;
    }
    Ok(ModelRanking { entries })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fake(chi2: f64, k: usize) -> FitResult {
        FitResult {
            names: vec![],
            parameters: vec![],
            standard_errors: vec![],
            covariance: vec![],
            residuals: vec![],
            chi_squared: chi2,
            n_data: 100,
            n_free: k,
            degrees_of_freedom: 100 - k,
            converged: true,
            iterations: 1,
            at_bound: vec![],
            message: String::new(),
            chi_squared_history: vec![],
        }
    }

    #[test]
    fn identical_fits_tie_at_zero() {
        let a = fake(1.0, 3);
        let b = fake(1.0, 3);
        let r = compare_models(&[&a, &b]).unwrap();
        assert_eq!(r.entries[0].index, 0);
        assert_eq!(r.entries[1].delta_aic, 0.0);
    }

    #[test]
    fn tie_prefers_fewer_parameters() {
        // Same AIC: 100 ln(x/100) + 2k equal when chi² compensates exactly.
        let simple = fake(1.0, 3);
        let mut complex = fake(1.0, 4);
        complex.chi_squared = (-2.0f64 / 100.0).exp();
        let r = compare_models(&[&complex, &simple]).unwrap();
        assert!(r.entries[1].delta_aic.abs() < 1e-9);
        assert_eq!(r.best().index, 1);
    }

    #[test]
    fn errors() {
        assert!(compare_models(&[]).is_err());
        let a = fake(1.0, 3);
        let mut b = fake(1.0, 3);
        b.n_data = 50;
        assert!(compare_models(&[&a, &b]).is_err());
    }

    #[test]
    fn better_fit_wins() {
        let a = fake(10.0, 3);
        let b = fake(1.0, 6);
        let r = compare_models(&[&a, &b]).unwrap();
        assert_eq!(r.best().index, 1);
        assert!((r.entries[1].delta_aic - (100.0 * 10f64.ln() - 6.0)).abs() < 1e-9);
    }
}
