use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use esr_core::decompose::{decompose, two_lorentzian_template, TemplateOptions};
use esr_core::fit::FitOptions;
use esr_core::parallel;
use esr_core::resonator::{fit_s21_notch, ComplexTrace, NotchFitOptions, ResonatorFit, TraceMetadata};
use esr_core::synth::{derive_seed, resonance_grid, simulate_s21, NoiseSpec, Preset};

fn traces(n: u64) -> Vec<ComplexTrace> {
    let truth = ResonatorFit::from_qi_qc(4.47e9, 1e5, 5e4, 0.1)
        .unwrap()
        .with_environment(0.8, 0.3, 30e-9);
    let f = resonance_grid(&truth, 1001, 3.0);
    (0..n)
        .map(|i| simulate_s21(&truth, &f, TraceMetadata::default(), &NoiseSpec::snr(40.0, derive_seed(7, i))).unwrap())
        .collect()
}

fn s21_sweep(c: &mut Criterion) {
    let data = traces(32);
    let opts = NotchFitOptions::default();
    let mut group = c.benchmark_group("s21_fits");
    group.sample_size(10);
    group.bench_with_input(BenchmarkId::new("parallel", data.len()), &data, |b, d| {
        b.iter(|| parallel::map(d, |t| fit_s21_notch(black_box(t), &opts).map(|f| f.q_internal).ok()))
    });
    group.bench_with_input(BenchmarkId::new("sequential", data.len()), &data, |b, d| {
        b.iter(|| parallel::map_seq(d, |t| fit_s21_notch(black_box(t), &opts).map(|f| f.q_internal).ok()))
    });
    group.finish();
}

fn decomposition_sweep(c: &mut Criterion) {
    let preset = Preset::silicon();
    let spectra: Vec<_> = (0..8).map(|s| preset.spectrum(s).unwrap()).collect();
    let template_opts = TemplateOptions { half_field_gaussian: true, ..TemplateOptions::default() };
    let run = |s: &esr_core::resonator::EsrSpectrum| {
        let t = two_lorentzian_template(s, &template_opts).unwrap();
        decompose(black_box(s), &t, preset.resonator.f0, &FitOptions::default()).map(|r| r.total_area).ok()
    };
    let mut group = c.benchmark_group("decompositions");
    group.sample_size(10);
    group.bench_with_input(BenchmarkId::new("parallel", spectra.len()), &spectra, |b, d| {
        b.iter(|| parallel::map(d, run))
    });
    group.bench_with_input(BenchmarkId::new("sequential", spectra.len()), &spectra, |b, d| {
        b.iter(|| parallel::map_seq(d, run))
    });
    group.finish();
}

criterion_group!(benches, s21_sweep, decomposition_sweep);
criterion_main!(benches);
