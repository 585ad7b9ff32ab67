use esr_core::io::*;
use esr_core::resonator::{ResonatorFit, TraceMetadata};
use esr_core::synth::*;
use esr_core::EsrError;
use proptest::prelude::*;

proptest! {
    #[test]
    fn floats_round_trip_exactly(v in any::<f64>().prop_filter("finite", |v| v.is_finite())) {
        let back: f64 = format_float(v).parse().unwrap();
        prop_assert_eq!(back, if v == 0.0 { 0.0 } else { v });
    }

    #[test]
    fn spectra_round_trip_exactly(seed in any::<u64>()) {
        let p = Preset::sapphire();
        let s = p.spectrum(seed).unwrap();
        let mut buf = Vec::new();
        write_spectrum(&mut buf, &s).unwrap();
        let back = read_spectrum(buf.as_slice()).unwrap().into_spectrum(None).unwrap();
        prop_assert_eq!(back, s);
    }
}

#[test]
fn traces_round_trip_and_split_by_metadata() {
    let r = ResonatorFit::from_qi_qc(5e9, 1e5, 5e4, 0.1).unwrap();
    let f = resonance_grid(&r, 64, 3.0);
    let traces: Vec<_> = (0..3)
        .map(|i| {
            let meta = TraceMetadata { applied_field: 0.01 * i as f64, drive_power: 1e-15, temperature: 0.3 };
            simulate_s21(&r, &f, meta, &NoiseSpec::snr(30.0, i)).unwrap()
        })
        .collect();
    let mut buf = Vec::new();
    write_traces(&mut buf, &traces).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with(&TRACE_COLUMNS.join(",")));
    assert_eq!(read_traces(buf.as_slice()).unwrap(), traces);
}

#[test]
fn power_sweeps_round_trip() {
    let sweep = PowerSweep {
        axis: PowerAxis::Photons,
        loss: LossColumn::Qi,
        points: vec![(0.1, 1e5), (1.0, 1.1e5), (10.0, 1.3e5)],
    };
    let mut buf = Vec::new();
    write_power_sweep(&mut buf, &sweep).unwrap();
    assert_eq!(read_power_sweep(buf.as_slice()).unwrap(), sweep);
}

#[test]
fn comments_and_column_order_are_tolerated() {
    let text = "# measured 2024\nqb_inverse, field_tesla\n# mid-file comment\n1e-6,0.1\n2e-6,0.2\n";
    let s = read_spectrum(text.as_bytes()).unwrap();
    assert_eq!(s.fields, vec![0.1, 0.2]);
    assert_eq!(s.qb_inverse, vec![1e-6, 2e-6]);
    assert_eq!(s.resonator_f0, None);
}

fn parse_line(result: Result<SpectrumFile, EsrError>) -> u64 {
    match result {
        Err(EsrError::Parse { line, .. }) => line,
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn malformed_files_report_line_numbers() {
    assert_eq!(parse_line(read_spectrum("0.1,1e-6\n".as_bytes())), 1);
    assert_eq!(parse_line(read_spectrum("".as_bytes())), 1);
    assert_eq!(parse_line(read_spectrum("field_tesla,qb_inverse\n0.1,1e-6\n0.2,abc\n".as_bytes())), 3);
    assert_eq!(parse_line(read_spectrum("field_tesla,qb_inverse\n0.1,1e-6\n0.2\n".as_bytes())), 3);
    assert_eq!(parse_line(read_spectrum("field_tesla,qb_inverse\n0.2,1e-6\n0.1,1e-6\n".as_bytes())), 3);
    assert_eq!(parse_line(read_spectrum("field_tesla,qb_inverse\n0.1,NaN\n".as_bytes())), 2);
    assert_eq!(parse_line(read_spectrum("field_tesla\n0.1\n".as_bytes())), 1);
}

#[test]
fn ambiguous_power_sweeps_are_rejected() {
    let text = "drive_power_watt,photons,qi\n1e-15,1,1e5\n";
    assert!(read_power_sweep(text.as_bytes()).is_err());
    let text = "photons,qi\n0,1e5\n";
    assert!(read_power_sweep(text.as_bytes()).is_err());
}

#[derive(serde::Serialize)]
struct Report {
    zeta: f64,
    alpha: f64,
    missing: f64,
    third: f64,
}

#[test]
fn report_json_keeps_field_order_and_uses_nulls() {
    let text = to_report_json(&Report { zeta: 1.0, alpha: 0.1, missing: f64::NAN, third: 1.0 / 3.0 }).unwrap();
    let z = text.find("zeta").unwrap();
    let a = text.find("alpha").unwrap();
    assert!(z < a);
    assert!(text.contains("\"missing\": null"));
    assert!(text.contains("3.3333333333333331e-1"));
    assert!(text.ends_with('\n'));
    let value: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(value["alpha"].as_f64(), Some(0.1));
}
