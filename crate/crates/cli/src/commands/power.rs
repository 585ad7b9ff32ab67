//! `power`: TLS-law or saturation-law fit of a power sweep.

use std::collections::BTreeMap;
use std::fs::File;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use esr_core::io::{read_power_sweep, write_columns, LossColumn, PowerAxis};
use esr_core::power::{
    fit_saturation, fit_tls_law, invert_psat_for_t1e, saturation_loss, tls_loss, FieldToPowerCoefficient,
    SaturationFit, TlsFit,
};
use esr_core::resonator::photon_number;

use crate::config::PipelineConfig;
use crate::report::{stem, OutputDir, PlotEntry, Provenance};
use crate::Status;

#[derive(Debug, Serialize)]
struct T1eResult {
    t1e_seconds: f64,
    t2e_seconds: f64,
    alpha: f64,
    g_factor: f64,
}

#[derive(Debug, Serialize)]
struct PowerReport<'a> {
    provenance: Provenance,
    resonator_id: &'a str,
    source: String,
    power_axis: PowerAxis,
    loss_column: LossColumn,
    /// Abscissa the law was fitted against.
    fit_axis: &'static str,
    law: &'static str,
    tls: Option<TlsFit>,
    saturation: Option<SaturationFit>,
    t1e: Option<T1eResult>,
    null_reasons: BTreeMap<&'static str, String>,
    warnings: Vec<String>,
    notes: Vec<String>,
}

pub fn run(config: &PipelineConfig, mut out: OutputDir) -> Result<Status> {
    let mut flagged = false;
    for input in &config.inputs {
        let path = &input.path;
        let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let sweep = read_power_sweep(file).with_context(|| format!("reading power sweep from {}", path.display()))?;
        let mut null_reasons = BTreeMap::new();
        let name = stem(path);

        let (fit_axis, law, tls, saturation, points, model): (_, _, _, _, Vec<(f64, f64)>, Vec<f64>) = match sweep.loss {
            LossColumn::Qi => {
                let points: Vec<(f64, f64)> = match sweep.axis {
                    PowerAxis::Photons => sweep.points.clone(),
                    PowerAxis::DrivePowerWatt => {
                        let Some(r) = config.resonator else {
                            bail!(
                                "{}: a drive_power_watt TLS sweep needs `resonator` (f0_hz, q_loaded, q_coupling) in the config to convert to photons",
                                path.display()
                            );
                        };
                        let fit = r.to_fit()?;
                        sweep
                            .points
                            .iter()
                            .map(|&(p, q)| Ok((photon_number(p, &fit)?, q)))
                            .collect::<Result<_>>()?
                    }
                };
                let fit = fit_tls_law(&points, &config.power.fit).with_context(|| format!("fitting {}", path.display()))?;
                if fit.params.q_tls.is_infinite() {
                    null_reasons.insert("tls.params.q_tls", "no resolvable power-dependent loss (Q_TLS = ∞)".to_string());
                }
                let model = points.iter().map(|&(n, _)| 1.0 / tls_loss(n, &fit.params).unwrap_or(f64::NAN)).collect();
                null_reasons.insert("saturation", "sweep gives Qi, so the TLS law was fitted".to_string());
                ("photons", "tls", Some(fit), None, points, model)
            }
            LossColumn::QbInverse => {
                let fit = fit_saturation(&sweep.points, &config.power.fit)
                    .with_context(|| format!("fitting {}", path.display()))?;
                let model = sweep.points.iter().map(|&(p, _)| saturation_loss(p, &fit.params).unwrap_or(f64::NAN)).collect();
                null_reasons.insert("tls", "sweep gives qb_inverse, so the saturation law was fitted".to_string());
                (sweep.axis.column_name(), "saturation", None, Some(fit), sweep.points.clone(), model)
            }
        };

        let t1e = match (&saturation, &config.power.t1e) {
            (Some(fit), Some(t)) => {
                let alpha = FieldToPowerCoefficient::new(t.alpha)?;
                let g = config.species.g_seed;
                Some(T1eResult {
                    t1e_seconds: invert_psat_for_t1e(fit.params.p_sat, t.t2e_seconds, alpha, g)?,
                    t2e_seconds: t.t2e_seconds,
                    alpha: t.alpha,
                    g_factor: g,
                })
            }
            (Some(_), None) => {
                null_reasons.insert("t1e", "set power.t1e (t2e_seconds, alpha) in the config to convert P_sat".into());
                None
            }
            (None, _) => {
                null_reasons.insert("t1e", "T1e follows from a saturation fit only".into());
                None
            }
        };
        let (warnings, notes) = match (&tls, &saturation) {
            (Some(f), _) => (f.warnings.clone(), f.notes.clone()),
            (_, Some(f)) => (f.warnings.clone(), f.notes.clone()),
            _ => unreachable!("one law is always fitted"),
        };
        flagged |= !warnings.is_empty();

        if model.iter().all(|v| v.is_finite()) {
            let columns = vec![
                points.iter().map(|p| p.0).collect(),
                points.iter().map(|p| p.1).collect(),
                model,
            ];
            let loss = sweep.loss.column_name();
            let model_name = format!("{loss}_model");
            let curve = format!("{name}.power_curve.csv");
            out.write_with(&curve, |w| write_columns(w, &[fit_axis, loss, &model_name], &columns))?;
            out.add_plot(PlotEntry::linear(&curve, format!("{law} fit ({name})"), fit_axis, &[loss, &model_name]).log_x());
        }

        let report = PowerReport {
            provenance: Provenance::new("power", config, &[path.as_path()], None)?,
            resonator_id: &config.resonator_id,
            source: path.display().to_string(),
            power_axis: sweep.axis,
            loss_column: sweep.loss,
            fit_axis,
            law,
            tls,
            saturation,
            t1e,
            null_reasons,
            warnings,
            notes,
        };
        out.write_json(&format!("{name}.power.json"), &report)?;
    }
    out.finish("power")?;
    Ok(if flagged { Status::Flagged } else { Status::Success })
}
