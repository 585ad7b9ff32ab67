//! `fit-s21`: one resonator fit record per trace.

use std::fs::File;

use anyhow::{Context, Result};
use log::info;
use serde::{Deserialize, Serialize};

use esr_core::io::{read_traces, write_columns};
use esr_core::parallel;
use esr_core::resonator::{fit_s21_notch, ComplexTrace, ResonatorFit};

use crate::config::PipelineConfig;
use crate::report::{stem, OutputDir, PlotEntry, Provenance};
use crate::Status;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitRecord {
    pub trace_index: usize,
    pub field_tesla: f64,
    pub drive_power_watt: f64,
    pub temperature_kelvin: f64,
    pub points: usize,
    /// Null when no resonance could be fitted; see `failure`.
    pub fit: Option<ResonatorFit>,
    pub failure: Option<String>,
    pub flagged: bool,
}

#[derive(Debug, Serialize)]
struct FitReport<'a> {
    provenance: Provenance,
    resonator_id: &'a str,
    source: String,
    trace_count: usize,
    flagged_count: usize,
    records: Vec<FitRecord>,
}

/// Just the records, for reading a report back.
#[derive(Debug, Deserialize)]
pub struct FitRecords {
    pub records: Vec<FitRecord>,
}

fn fit_one(index: usize, trace: &ComplexTrace, config: &PipelineConfig) -> FitRecord {
    let m = trace.metadata;
    let (fit, failure) = match fit_s21_notch(trace, &config.notch) {
        Ok(fit) => (Some(fit), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let flagged = fit.as_ref().is_none_or(|f| !f.converged || !f.warnings.is_empty());
    FitRecord {
        trace_index: index,
        field_tesla: m.applied_field,
        drive_power_watt: m.drive_power,
        temperature_kelvin: m.temperature,
        points: trace.len(),
        fit,
        failure,
        flagged,
    }
}

pub fn run(config: &PipelineConfig, mut out: OutputDir) -> Result<Status> {
    let mut flagged = false;
    for input in &config.inputs {
        let path = &input.path;
        let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let traces = read_traces(file).with_context(|| format!("reading traces from {}", path.display()))?;
        info!("{}: fitting {} traces", path.display(), traces.len());
        let indexed: Vec<(usize, &ComplexTrace)> = traces.iter().enumerate().collect();
        let records = parallel::map(&indexed, |(i, t)| fit_one(*i, t, config));
        let flagged_count = records.iter().filter(|r| r.flagged).count();
        flagged |= flagged_count > 0;

        let name = stem(path);
        let fitted: Vec<&FitRecord> = records.iter().filter(|r| r.fit.is_some()).collect();
        let column = |f: &dyn Fn(&FitRecord, &ResonatorFit) -> f64| -> Vec<f64> {
            fitted.iter().map(|r| f(r, r.fit.as_ref().expect("filtered"))).collect()
        };
        let columns = vec![
            column(&|r, _| r.field_tesla),
            column(&|r, _| r.drive_power_watt),
            column(&|_, f| f.f0),
            column(&|_, f| f.q_internal),
            column(&|_, f| f.uncertainties.q_internal),
            column(&|_, f| f.q_coupling),
            column(&|_, f| f.q_loaded),
        ];
        let names = ["field_tesla", "drive_power_watt", "f0_hz", "q_internal", "q_internal_uncertainty", "q_coupling", "q_loaded"];
        let csv_name = format!("{name}.fits.csv");
        out.write_with(&csv_name, |w| write_columns(w, &names, &columns))?;
        out.add_plot(PlotEntry::linear(&csv_name, format!("Qi versus field ({name})"), "field_tesla", &["q_internal"]));

        let report = FitReport {
            provenance: Provenance::new("fit-s21", config, &[path.as_path()], None)?,
            resonator_id: &config.resonator_id,
            source: path.display().to_string(),
            trace_count: records.len(),
            flagged_count,
            records,
        };
        out.write_json(&format!("{name}.fits.json"), &report)?;
        if flagged_count > 0 {
            log::warn!("{}: {flagged_count} of {} fits flagged", path.display(), report.trace_count);
        }
    }
    out.finish("fit-s21")?;
    Ok(if flagged { Status::Flagged } else { Status::Success })
}
