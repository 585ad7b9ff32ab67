use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use esr_core::io::{write_power_sweep, write_spectrum, write_traces, LossColumn, PowerAxis, PowerSweep};
use esr_core::lineshape::CompositeSpectrumModel;
use esr_core::resonator::{ResonatorFit, TraceMetadata};
use esr_core::synth::{linear_grid, log_grid, resonance_grid, simulate_esr_spectrum, simulate_s21, NoiseSpec, Preset};
use serde_json::Value;
use tempfile::TempDir;

fn esr(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_esr")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn write(path: PathBuf, f: impl FnOnce(&mut Vec<u8>) -> esr_core::Result<()>) -> PathBuf {
    let mut buf = Vec::new();
    f(&mut buf).unwrap();
    fs::write(&path, buf).unwrap();
    path
}

fn peaks(report: &Value) -> &Vec<Value> {
    report["decomposition"]["per_peak"].as_array().unwrap()
}

fn peak<'a>(report: &'a Value, label: &str) -> &'a Value {
    peaks(report).iter().find(|p| p["label"] == label).unwrap()
}

fn within(x: f64, target: f64, rel: f64) -> bool {
    (x - target).abs() <= rel * target.abs()
}

#[test]
fn fit_s21_recovers_qi_and_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let truth = ResonatorFit::from_qi_qc(5.2e9, 2e5, 8e4, 0.15).unwrap().with_environment(0.7, 1.1, 25e-9);
    let f = resonance_grid(&truth, 1001, 3.0);
    let traces: Vec<_> = (0..3)
        .map(|i| {
            let meta = TraceMetadata { applied_field: 0.01 * i as f64, drive_power: 1e-15, temperature: 0.05 };
            simulate_s21(&truth, &f, meta, &NoiseSpec::snr(60.0, i)).unwrap()
        })
        .collect();
    write(dir.path().join("traces.csv"), |w| write_traces(w, &traces));

    let o = esr(&["fit-s21", "traces.csv", "--out", "a"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = json(dir.path().join("a/traces.fits.json"));
    let records = report["records"].as_array().unwrap();
    assert_eq!(records.len(), 3);
    for r in records {
        assert!(within(r["fit"]["q_internal"].as_f64().unwrap(), 2e5, 0.02), "{r}");
    }
    assert_eq!(report["provenance"]["command"], "fit-s21");

    let o = esr(&["fit-s21", "traces.csv", "--out", "b"], dir.path());
    assert_eq!(code(&o), 0);
    for name in ["traces.fits.json", "traces.fits.csv", "plot_manifest.json"] {
        assert_eq!(fs::read(dir.path().join("a").join(name)).unwrap(), fs::read(dir.path().join("b").join(name)).unwrap());
    }
}

#[test]
fn malformed_input_exits_one_with_line_number() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("empty.csv"), "").unwrap();
    let o = esr(&["fit-s21", "empty.csv", "--out", "o"], dir.path());
    assert_eq!(code(&o), 1);
    let header = "frequency_hz,s21_real,s21_imag,field_tesla,drive_power_watt,temperature_kelvin\n";
    fs::write(dir.path().join("bad.csv"), format!("# comment\n{header}1e9,1,0,0,0,0\n1e9,x,0,0,0,0\n")).unwrap();
    let o = esr(&["fit-s21", "bad.csv", "--out", "o"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("line 4"), "{}", stderr(&o));
    let o = esr(&["fit-s21", "missing.csv"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("inputs[0].path"), "{}", stderr(&o));
}

#[test]
fn usage_and_config_errors_exit_one() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&esr(&["bogus"], dir.path())), 1);
    assert_eq!(code(&esr(&["spectrum", "--template", "three", "x.csv"], dir.path())), 1);
    assert_eq!(code(&esr(&["--help"], dir.path())), 0);
    fs::write(dir.path().join("c.json"), r#"{"power": {"fit": {"weighting": "cubic"}}}"#).unwrap();
    let o = esr(&["simulate", "--config", "c.json"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("power.fit.weighting"), "{}", stderr(&o));
    assert_eq!(code(&esr(&["simulate", "quartz"], dir.path())), 1);
}

#[test]
fn simulate_is_deterministic_per_seed() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("c.json"), r#"{"simulate": {"traces": {"fields": 4, "points_per_trace": 64}}}"#).unwrap();
    for (out, seed) in [("a", "3"), ("b", "3"), ("c", "4")] {
        let o = esr(&["simulate", "--config", "c.json", "--seed", seed, "--out", out], dir.path());
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let read = |d: &str, f: &str| fs::read(dir.path().join(d).join(f)).unwrap();
    for f in ["spectrum.csv", "traces.csv", "power_tls.csv", "power_saturation.csv", "truth.json", "plot_manifest.json"] {
        assert_eq!(read("a", f), read("b", f), "{f}");
    }
    assert_ne!(read("a", "spectrum.csv"), read("c", "spectrum.csv"));
    assert_eq!(json(dir.path().join("a/truth.json"))["provenance"]["seed"], 3);
}

#[test]
fn silicon_spectrum_end_to_end() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&esr(&["simulate", "silicon", "--out", "sim"], dir.path())), 0);
    let o = esr(&["spectrum", "sim/spectrum.csv", "--out", "spec"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = json(dir.path().join("spec/decomposition.json"));
    assert_eq!(r["significant_peaks"], true);
    assert!(r["selection"]["selected_template"].as_str().unwrap().starts_with("two-lorentzian"));
    assert!(within(peak(&r, "A")["t2e"].as_f64().unwrap(), 30e-9, 0.15));
    assert!(within(peak(&r, "B")["t2e"].as_f64().unwrap(), 1.5e-9, 0.15));
    let ratio = r["half_field"]["detected"]["center_ratio"].as_f64().unwrap();
    assert!((ratio - 0.5).abs() < 0.02);
    let curves = fs::read_to_string(dir.path().join("spec/curves.csv")).unwrap();
    assert!(curves.starts_with("field_tesla,qb_inverse,model_total,residual,peak_A,peak_B"));
    let manifest = json(dir.path().join("spec/plot_manifest.json"));
    assert_eq!(manifest["plots"].as_array().unwrap().len(), 2);

    let o = esr(&["spectrum", "sim/spectrum.csv", "--out", "again"], dir.path());
    assert_eq!(code(&o), 0);
    for f in ["decomposition.json", "curves.csv", "spectrum.csv"] {
        assert_eq!(fs::read(dir.path().join("spec").join(f)).unwrap(), fs::read(dir.path().join("again").join(f)).unwrap());
    }
}

#[test]
fn sapphire_spectrum_finds_hydrogen_satellites() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&esr(&["simulate", "sapphire", "--out", "sim"], dir.path())), 0);
    let o = esr(&["spectrum", "sim/spectrum.csv", "--out", "spec"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = json(dir.path().join("spec/decomposition.json"));
    assert_eq!(r["selection"]["selected_template"], "one-lorentzian+satellites");
    let h = peak(&r, "H");
    assert!(within(h["splitting_frequency"].as_f64().unwrap(), 1.42e9, 0.02));
}

#[test]
fn traces_to_spectrum_chain() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("c.json"), r#"{"simulate": {"traces": {"fields": 126, "points_per_trace": 201}}}"#).unwrap();
    assert_eq!(code(&esr(&["simulate", "--config", "c.json", "--out", "sim"], dir.path())), 0);
    let o = esr(&["fit-s21", "sim/traces.csv", "--out", "fits"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = esr(&["spectrum", "fits/traces.fits.json", "--out", "spec"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = json(dir.path().join("spec/decomposition.json"));
    assert_eq!(r["spectrum"]["points"], 126);
    assert!(within(peak(&r, "A")["center"].as_f64().unwrap(), 0.162, 0.01));
}

#[test]
fn missing_zero_field_reference_exits_one() {
    let dir = TempDir::new().unwrap();
    let truth = ResonatorFit::from_qi_qc(5e9, 1e5, 5e4, 0.0).unwrap();
    let f = resonance_grid(&truth, 201, 3.0);
    let traces: Vec<_> = [0.1, 0.2]
        .iter()
        .map(|&b| {
            let meta = TraceMetadata { applied_field: b, drive_power: 1e-15, temperature: 0.05 };
            simulate_s21(&truth, &f, meta, &NoiseSpec::none()).unwrap()
        })
        .collect();
    write(dir.path().join("t.csv"), |w| write_traces(w, &traces));
    assert_eq!(code(&esr(&["fit-s21", "t.csv", "--out", "f"], dir.path())), 0);
    let o = esr(&["spectrum", "f/t.fits.json", "--out", "s"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("zero-field"), "{}", stderr(&o));
}

#[test]
fn flat_spectrum_reports_no_significant_peaks() {
    let dir = TempDir::new().unwrap();
    let p = Preset::silicon();
    let fields = linear_grid(0.0, 0.25, 2001);
    let s = simulate_esr_spectrum(&CompositeSpectrumModel::default(), &fields, &p.setup(), &NoiseSpec::sigma(1e-7, 1))
        .unwrap();
    write(dir.path().join("flat.csv"), |w| write_spectrum(w, &s));
    let o = esr(&["spectrum", "flat.csv", "--out", "o"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = json(dir.path().join("o/decomposition.json"));
    assert_eq!(r["significant_peaks"], false);
    assert!(r["decomposition"].is_null());
    assert!(r["null_reasons"]["decomposition"].as_str().unwrap().contains("no significant peaks"));
}

fn sweep(dir: &Path, name: &str, axis: PowerAxis, loss: LossColumn, points: Vec<(f64, f64)>) {
    write(dir.join(name), |w| write_power_sweep(w, &PowerSweep { axis, loss, points }));
}

#[test]
fn power_fits_recover_oracle_parameters() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&esr(&["simulate", "--out", "sim"], dir.path())), 0);
    fs::write(dir.path().join("c.json"), r#"{"power": {"t1e": {"t2e_seconds": 30e-9, "alpha": 0.21}}}"#).unwrap();
    let o = esr(
        &["power", "sim/power_tls.csv", "sim/power_saturation.csv", "--config", "c.json", "--out", "p"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let tls = json(dir.path().join("p/power_tls.power.json"));
    assert!((tls["tls"]["params"]["beta"].as_f64().unwrap() - 0.2).abs() < 0.05);
    assert!(tls["tls"]["uncertainties"]["beta"].as_f64().unwrap() > 0.0);
    let sat = json(dir.path().join("p/power_saturation.power.json"));
    assert!(within(sat["saturation"]["params"]["p_sat"].as_f64().unwrap(), 0.71e-9, 0.15));
    assert!(sat["t1e"]["t1e_seconds"].as_f64().unwrap() > 0.0);
    assert!(tls["t1e"].is_null());
    assert!(tls["null_reasons"]["t1e"].is_string());
}

#[test]
fn degenerate_and_narrow_power_sweeps() {
    let dir = TempDir::new().unwrap();
    let flat = log_grid(0.1, 1e6, 30).into_iter().map(|n| (n, 1e5)).collect();
    sweep(dir.path(), "flat.csv", PowerAxis::Photons, LossColumn::Qi, flat);
    let o = esr(&["power", "flat.csv", "--out", "o"], dir.path());
    assert_eq!(code(&o), 2);
    let r = json(dir.path().join("o/flat.power.json"));
    assert!(r["warnings"][0].as_str().unwrap().contains("beta pinned"));
    assert!(r["tls"]["params"]["q_tls"].is_null());
    assert!(r["null_reasons"]["tls.params.q_tls"].is_string());

    let narrow = log_grid(1e-10, 3e-9, 20)
        .into_iter()
        .map(|p| (p, 2e-6 / (1.0 + p / 1e-9)))
        .collect();
    sweep(dir.path(), "narrow.csv", PowerAxis::DrivePowerWatt, LossColumn::QbInverse, narrow);
    let o = esr(&["power", "narrow.csv", "--out", "n"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = json(dir.path().join("n/narrow.power.json"));
    assert!(r["notes"][0].as_str().unwrap().contains("weakly constrained"));

    let watts = log_grid(1e-18, 1e-12, 20).into_iter().map(|p| (p, 1e5)).collect();
    sweep(dir.path(), "watts.csv", PowerAxis::DrivePowerWatt, LossColumn::Qi, watts);
    let o = esr(&["power", "watts.csv", "--out", "w"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("resonator"), "{}", stderr(&o));
}

/// Decomposition report for the silicon model scaled per component.
fn treated_report(dir: &Path, name: &str, a_scale: f64, b_scale: f64) -> PathBuf {
    let p = Preset::silicon();
    let mut model = p.model.clone();
    model.lorentzians[0].amplitude *= a_scale;
    model.lorentzians[1].amplitude *= b_scale;
    model.gaussians[0].amplitude *= b_scale;
    if let Some(bg) = model.background.as_mut() {
        bg.height *= b_scale;
    }
    let fields = p.field_grid.fields();
    let s = simulate_esr_spectrum(&model, &fields, &p.setup(), &NoiseSpec::sigma(1e-8, 9)).unwrap();
    write(dir.join(format!("{name}.csv")), |w| write_spectrum(w, &s));
    let o = esr(&["spectrum", &format!("{name}.csv"), "--out", name], dir);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    dir.join(name).join("decomposition.json")
}

#[test]
fn compare_treatments_end_to_end() {
    let dir = TempDir::new().unwrap();
    treated_report(dir.path(), "pristine", 1.0, 1.0);
    treated_report(dir.path(), "scaled", 0.25, 0.25);
    treated_report(dir.path(), "annealed", 0.25, 1.0);

    let o = esr(
        &["compare", "pristine/decomposition.json", "scaled/decomposition.json", "annealed/decomposition.json", "--out", "c"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = json(dir.path().join("c/comparison.json"));
    let cmp = &r["comparison"];
    assert_eq!(cmp["labels"], serde_json::json!(["pristine", "scaled", "annealed"]));
    let total = cmp["total_area_ratios"][1]["value"].as_f64().unwrap();
    assert!(within(1.0 / total, 4.0, 0.05), "{total}");
    let notes = cmp["notes"].as_str().unwrap();
    assert!(notes.contains("annealed: selective reduction of Peak A"), "{notes}");
    assert!(!notes.contains("scaled: selective"), "{notes}");
    let md = fs::read_to_string(dir.path().join("c/comparison.md")).unwrap();
    assert!(md.contains("| annealed |"));
    let csv = fs::read_to_string(dir.path().join("c/area_ratios.csv")).unwrap();
    assert!(csv.starts_with("treatment,peak,area_ratio,area_ratio_uncertainty\n"));

    let o = esr(&["compare", "x=pristine/decomposition.json", "y=pristine/decomposition.json", "--out", "same"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = json(dir.path().join("same/comparison.json"));
    for ratio in r["comparison"]["per_peak_area_ratios"][1].as_array().unwrap() {
        assert_eq!(ratio["value"].as_f64().unwrap(), 1.0);
    }
}

#[test]
fn compare_rejects_mismatched_peak_labels() {
    let dir = TempDir::new().unwrap();
    treated_report(dir.path(), "two", 1.0, 1.0);
    assert_eq!(code(&esr(&["simulate", "sapphire", "--out", "sap"], dir.path())), 0);
    assert_eq!(code(&esr(&["spectrum", "sap/spectrum.csv", "--out", "one"], dir.path())), 0);
    let o = esr(&["compare", "two/decomposition.json", "one/decomposition.json", "--out", "c"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("has peaks"), "{}", stderr(&o));
}

#[test]
fn config_inputs_resolve_relative_to_the_config_file() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&esr(&["simulate", "--out", "runs/sim"], dir.path())), 0);
    fs::write(
        dir.path().join("runs/cfg.json"),
        r#"{"inputs": [{"path": "sim/power_tls.csv"}], "out_dir": "power", "resonator_id": "R7"}"#,
    )
    .unwrap();
    let o = esr(&["power", "--config", "runs/cfg.json"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = json(dir.path().join("runs/power/power_tls.power.json"));
    assert_eq!(r["resonator_id"], "R7");
    assert_eq!(r["provenance"]["config_sha256"].as_str().unwrap().len(), 64);
}
