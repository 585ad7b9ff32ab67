//! `compare`: area ratios between decompositions of treated samples.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::Value;

use esr_core::decompose::{compare_treatments, DecompositionResult, Ratio, TreatmentComparison};
use esr_core::io::format_float;

use crate::config::{InputSpec, PipelineConfig};
use crate::report::{stem, OutputDir, PlotEntry, Provenance};
use crate::Status;

#[derive(Debug, Serialize)]
struct QtlsEntry {
    label: String,
    q_tls: Option<f64>,
    q_tls_uncertainty: Option<f64>,
    source: String,
}

#[derive(Debug, Serialize)]
struct CompareReport {
    provenance: Provenance,
    comparison: TreatmentComparison,
    q_tls: Option<Vec<QtlsEntry>>,
    null_reasons: BTreeMap<&'static str, String>,
    warnings: Vec<String>,
}

fn read_json(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("{} is not valid JSON", path.display()))
}

fn label_for(input: &InputSpec) -> String {
    if let Some(l) = &input.label {
        return l.clone();
    }
    let s = stem(&input.path);
    if s == "decomposition" {
        if let Some(dir) = input.path.parent().and_then(|d| d.file_name()) {
            return dir.to_string_lossy().into_owned();
        }
    }
    s
}

fn load_decomposition(path: &Path) -> Result<DecompositionResult> {
    let value = read_json(path)?;
    match value.get("decomposition") {
        Some(Value::Null) => bail!("{} reports no significant peaks; nothing to compare", path.display()),
        Some(d) => serde_json::from_value(d.clone())
            .with_context(|| format!("{}: malformed decomposition section", path.display())),
        None => bail!("{} is not a spectrum report (no `decomposition` key)", path.display()),
    }
}

fn load_q_tls(label: &str, path: &Path) -> Result<QtlsEntry> {
    let value = read_json(path)?;
    let tls = value
        .get("tls")
        .filter(|t| !t.is_null())
        .with_context(|| format!("{} has no TLS fit", path.display()))?;
    Ok(QtlsEntry {
        label: label.to_string(),
        q_tls: tls["params"]["q_tls"].as_f64(),
        q_tls_uncertainty: tls["uncertainties"]["q_tls"].as_f64(),
        source: path.display().to_string(),
    })
}

fn cell(v: Option<f64>) -> String {
    v.map(format_float).unwrap_or_default()
}

fn md_ratio(r: &Ratio) -> String {
    match (r.value, r.uncertainty) {
        (Some(v), Some(u)) => format!("{v:.3} ± {u:.3}"),
        (Some(v), None) => format!("{v:.3}"),
        _ => "n/a".into(),
    }
}

fn markdown(c: &TreatmentComparison, q_tls: Option<&[QtlsEntry]>) -> String {
    let mut s = String::from("# Treatment comparison\n\nArea ratios relative to ");
    let _ = writeln!(s, "`{}`.\n", c.labels[0]);
    let _ = write!(s, "| treatment |");
    for p in &c.peak_labels {
        let _ = write!(s, " Peak {p} |");
    }
    s.push_str(" total |\n|---|");
    s.push_str(&"---|".repeat(c.peak_labels.len() + 1));
    s.push('\n');
    for (i, label) in c.labels.iter().enumerate() {
        let _ = write!(s, "| {label} |");
        for r in &c.per_peak_area_ratios[i] {
            let _ = write!(s, " {} |", md_ratio(r));
        }
        let _ = writeln!(s, " {} |", md_ratio(&c.total_area_ratios[i]));
    }
    if let Some(q) = q_tls {
        s.push_str("\n| treatment | Q_TLS |\n|---|---|\n");
        for e in q {
            let v = match (e.q_tls, e.q_tls_uncertainty) {
                (Some(v), Some(u)) => format!("{v:.4e} ± {u:.2e}"),
                (Some(v), None) => format!("{v:.4e}"),
                _ => "unresolved".into(),
            };
            let _ = writeln!(s, "| {} | {v} |", e.label);
        }
    }
    if !c.notes.is_empty() {
        s.push_str("\n## Notes\n\n");
        for line in c.notes.lines() {
            let _ = writeln!(s, "- {line}");
        }
    }
    s
}

fn ratio_csv(c: &TreatmentComparison) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["treatment", "peak", "area_ratio", "area_ratio_uncertainty"])?;
    for (i, label) in c.labels.iter().enumerate() {
        let rows = c.peak_labels.iter().zip(&c.per_peak_area_ratios[i]);
        for (peak, r) in rows.chain(std::iter::once((&"total".to_string(), &c.total_area_ratios[i]))) {
            w.write_record([label.as_str(), peak.as_str(), &cell(r.value), &cell(r.uncertainty)])?;
        }
    }
    w.into_inner().context("flushing CSV")
}

pub fn run(config: &PipelineConfig, mut out: OutputDir) -> Result<Status> {
    if config.inputs.len() < 2 {
        bail!("compare needs at least two labelled decomposition reports");
    }
    let mut entries = Vec::new();
    let mut warnings = Vec::new();
    for input in &config.inputs {
        let label = label_for(input);
        if entries.iter().any(|(l, _)| *l == label) {
            bail!("duplicate treatment label '{label}'; name inputs as LABEL=PATH");
        }
        let d = load_decomposition(&input.path)?;
        if !d.converged || !d.warnings.is_empty() {
            warnings.push(format!("{label}: input decomposition was flagged ({})", d.warnings.join("; ")));
        }
        entries.push((label, d));
    }
    let comparison = compare_treatments(&entries).context("comparing treatments")?;

    let mut null_reasons = BTreeMap::new();
    let q_tls = if config.inputs.iter().all(|i| i.power_report.is_some()) {
        Some(
            config
                .inputs
                .iter()
                .zip(&entries)
                .map(|(i, (label, _))| load_q_tls(label, i.power_report.as_deref().expect("checked")))
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        null_reasons.insert("q_tls", "power_report not given for every input in the config".to_string());
        None
    };

    out.write_text("comparison.md", &markdown(&comparison, q_tls.as_deref()))?;
    let csv = ratio_csv(&comparison)?;
    out.write_text("area_ratios.csv", std::str::from_utf8(&csv).expect("CSV is UTF-8"))?;
    out.add_plot(PlotEntry::linear("area_ratios.csv", "Area ratio by treatment and peak", "treatment", &["area_ratio"]));

    let mut paths: Vec<&Path> = config.inputs.iter().map(|i| i.path.as_path()).collect();
    paths.extend(config.inputs.iter().filter_map(|i| i.power_report.as_deref()));
    let flagged = !warnings.is_empty();
    let report = CompareReport {
        provenance: Provenance::new("compare", config, &paths, None)?,
        comparison,
        q_tls,
        null_reasons,
        warnings,
    };
    out.write_json("comparison.json", &report)?;
    out.finish("compare")?;
    Ok(if flagged { Status::Flagged } else { Status::Success })
}
