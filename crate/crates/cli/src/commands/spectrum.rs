//! `spectrum`: loss spectrum assembly, decomposition, model selection and
//! half-field search.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;

use anyhow::{bail, Context, Result};
use log::info;
use serde::Serialize;

use esr_core::decompose::{
    auto_model_select, decompose, delta_aic_vs_flat, detect_half_field_peak, extended_candidates, one_lorentzian_template,
    standard_candidates, two_lorentzian_template, CandidateSummary, DecompositionResult, HalfFieldSearch, PeakKind,
    SpectrumTemplate, DECISIVE_DELTA_AIC,
};
use esr_core::io::{read_spectrum, write_columns, write_spectrum};
use esr_core::lineshape::{GaussianPeak, LorentzianPeak, SatellitePair};
use esr_core::resonator::{build_esr_spectrum, EsrSpectrum, ResonatorFit};

use crate::commands::fit_s21::FitRecords;
use crate::config::{PipelineConfig, TemplateName};
use crate::report::{OutputDir, PlotEntry, Provenance};
use crate::Status;

#[derive(Debug, Serialize)]
struct SpectrumSummary {
    points: usize,
    field_min_tesla: f64,
    field_max_tesla: f64,
    resonator_f0_hz: f64,
    reference_qi_inverse: f64,
    /// Fit records skipped because their fit failed or did not converge.
    skipped_records: usize,
}

#[derive(Debug, Serialize)]
struct SelectionSummary {
    selected_template: String,
    candidates: Vec<CandidateSummary>,
    delta_aic_to_next: Option<f64>,
    notes: Vec<String>,
}

#[derive(Debug, Serialize)]
struct SpectrumReport<'a> {
    provenance: Provenance,
    resonator_id: &'a str,
    spectrum: SpectrumSummary,
    significant_peaks: bool,
    /// AIC of a constant-loss model minus that of the selected decomposition.
    delta_aic_vs_flat: f64,
    selection: Option<SelectionSummary>,
    decomposition: Option<DecompositionResult>,
    half_field: Option<HalfFieldSearch>,
    null_reasons: BTreeMap<&'static str, String>,
    warnings: Vec<String>,
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

/// Spectrum from fit-record reports, or from a single spectrum CSV.
fn load_spectrum(config: &PipelineConfig, warnings: &mut Vec<String>) -> Result<(EsrSpectrum, usize)> {
    let paths: Vec<&Path> = config.inputs.iter().map(|i| i.path.as_path()).collect();
    if paths.iter().all(|p| is_json(p)) {
        let mut fits: Vec<(f64, ResonatorFit)> = Vec::new();
        let mut skipped = 0;
        for path in &paths {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let records: FitRecords = serde_json::from_str(&text)
                .with_context(|| format!("{} is not a fit-s21 report", path.display()))?;
            for r in records.records {
                match r.fit {
                    Some(fit) if fit.converged => fits.push((r.field_tesla, fit)),
                    _ => {
                        skipped += 1;
                        warnings.push(format!(
                            "{}: trace {} at B = {} T skipped (no converged fit)",
                            path.display(),
                            r.trace_index,
                            r.field_tesla
                        ));
                    }
                }
            }
        }
        let spectrum = build_esr_spectrum(&fits, config.reference).context("building the loss spectrum")?;
        return Ok((spectrum, skipped));
    }
    if paths.len() != 1 {
        bail!("pass either fit-s21 JSON reports or exactly one spectrum CSV");
    }
    let file = File::open(paths[0]).with_context(|| format!("opening {}", paths[0].display()))?;
    let parsed = read_spectrum(file).with_context(|| format!("reading spectrum from {}", paths[0].display()))?;
    let spectrum = parsed
        .into_spectrum(config.resonator.map(|r| r.f0_hz))
        .with_context(|| format!("{}", paths[0].display()))?;
    Ok((spectrum, 0))
}

/// Named per-component curves of a decomposition, evaluated on `fields`.
fn component_curves(result: &DecompositionResult, fields: &[f64]) -> Vec<(String, Vec<f64>)> {
    let mut curves = Vec::new();
    for p in &result.per_peak {
        let curve: Vec<f64> = match p.kind {
            PeakKind::Lorentzian => {
                let l = LorentzianPeak { center: p.center, fwhm: p.fwhm, amplitude: p.amplitude };
                fields.iter().map(|&b| l.value(b)).collect()
            }
            PeakKind::Gaussian => {
                let g = GaussianPeak { center: p.center, fwhm: p.fwhm, amplitude: p.amplitude };
                fields.iter().map(|&b| g.value(b)).collect()
            }
            PeakKind::Satellites => {
                let s = SatellitePair {
                    center: p.center,
                    splitting: p.splitting.unwrap_or(0.0),
                    fwhm: p.fwhm,
                    amplitude: p.amplitude,
                };
                fields.iter().map(|&b| s.value(b)).collect()
            }
        };
        curves.push((format!("peak_{}", p.label), curve));
    }
    if let Some(bg) = &result.model.background {
        curves.push(("pedestal".into(), fields.iter().map(|&b| bg.value(b)).collect()));
    }
    curves
}

fn decompose_with(
    spectrum: &EsrSpectrum,
    config: &PipelineConfig,
) -> Result<(DecompositionResult, Option<SelectionSummary>)> {
    let opts = &config.template.options;
    let single = |t: SpectrumTemplate| -> Result<(DecompositionResult, Option<SelectionSummary>)> {
        Ok((decompose(spectrum, &t, spectrum.resonator_f0, &config.fit)?, None))
    };
    match config.template.name {
        TemplateName::Auto => {
            let candidates = if config.template.explore {
                extended_candidates(spectrum, opts)?
            } else {
                standard_candidates(spectrum, opts)?
            };
            let sel = auto_model_select(spectrum, &candidates, &config.fit)?;
            let summary = SelectionSummary {
                selected_template: candidates[sel.selected_index].name.clone(),
                candidates: sel.candidates,
                delta_aic_to_next: sel.delta_aic_to_next,
                notes: sel.notes,
            };
            Ok((sel.best, Some(summary)))
        }
        TemplateName::OneLorentzian => single(one_lorentzian_template(spectrum, opts)?),
        TemplateName::TwoLorentzian => single(two_lorentzian_template(spectrum, opts)?),
        TemplateName::Custom => {
            let model = config.template.model.clone().expect("validated: custom template has a model");
            single(SpectrumTemplate::from_model("custom", model, spectrum.field_range()))
        }
    }
}

pub fn run(config: &PipelineConfig, mut out: OutputDir) -> Result<Status> {
    let mut warnings = Vec::new();
    let (spectrum, skipped) = load_spectrum(config, &mut warnings)?;
    info!("spectrum: {} points over {:?} T", spectrum.len(), spectrum.field_range());
    out.write_with("spectrum.csv", |w| write_spectrum(w, &spectrum))?;
    out.add_plot(PlotEntry::linear("spectrum.csv", "Spin-induced loss", "field_tesla", &["qb_inverse"]));

    let (result, selection) = decompose_with(&spectrum, config).context("decomposing the spectrum")?;
    let flat_delta = delta_aic_vs_flat(&spectrum, &result);
    let significant = flat_delta > DECISIVE_DELTA_AIC;
    let mut null_reasons = BTreeMap::new();
    let (decomposition, selection, half_field) = if significant {
        warnings.extend(result.warnings.iter().cloned());
        if !result.converged {
            warnings.push("selected decomposition did not converge".into());
        }
        let half_field = match result.peak("A") {
            Some(a) => Some(detect_half_field_peak(&spectrum, a.center, &config.fit)?),
            None => {
                null_reasons.insert("half_field", "no Lorentzian g ≈ 2 line to anchor the search".into());
                None
            }
        };
        if selection.is_none() {
            null_reasons.insert("selection", "template fixed by configuration".into());
        }
        (Some(result), selection, half_field)
    } else {
        let reason = format!(
            "no significant peaks: best decomposition improves AIC over a constant loss by {flat_delta:.2} (≤ {DECISIVE_DELTA_AIC})"
        );
        info!("{reason}");
        for key in ["decomposition", "selection", "half_field"] {
            null_reasons.insert(key, reason.clone());
        }
        (None, None, None)
    };

    let mut names = vec!["field_tesla".to_string(), "qb_inverse".to_string()];
    let mut columns = vec![spectrum.fields.clone(), spectrum.qb_inverse.clone()];
    if let Some(d) = &decomposition {
        let total: Vec<f64> = spectrum.fields.iter().map(|&b| d.model.value(b)).collect();
        let residual = spectrum.qb_inverse.iter().zip(&total).map(|(y, m)| y - m).collect();
        names.extend(["model_total".to_string(), "residual".to_string()]);
        columns.extend([total, residual]);
        for (name, curve) in component_curves(d, &spectrum.fields) {
            names.push(name);
            columns.push(curve);
        }
    }
    let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
    out.write_with("curves.csv", |w| write_columns(w, &name_refs, &columns))?;
    out.add_plot(PlotEntry::linear("curves.csv", "Decomposition", "field_tesla", &name_refs[1..]));

    let flagged = !warnings.is_empty();
    let report = SpectrumReport {
        provenance: Provenance::new(
            "spectrum",
            config,
            &config.inputs.iter().map(|i| i.path.as_path()).collect::<Vec<_>>(),
            None,
        )?,
        resonator_id: &config.resonator_id,
        spectrum: SpectrumSummary {
            points: spectrum.len(),
            field_min_tesla: spectrum.field_range().0,
            field_max_tesla: spectrum.field_range().1,
            resonator_f0_hz: spectrum.resonator_f0,
            reference_qi_inverse: spectrum.reference_qi_inverse,
            skipped_records: skipped,
        },
        significant_peaks: significant,
        delta_aic_vs_flat: flat_delta,
        selection,
        decomposition,
        half_field,
        null_reasons,
        warnings,
    };
    out.write_json("decomposition.json", &report)?;
    out.finish("spectrum")?;
    Ok(if flagged { Status::Flagged } else { Status::Success })
}
