//! `simulate`: seeded synthetic data from a built-in preset.

use anyhow::{Context, Result};
use serde::Serialize;

use esr_core::io::{write_power_sweep, write_spectrum, write_traces, LossColumn, PowerAxis, PowerSweep};
use esr_core::power::{SaturationParams, TlsLossParams};
use esr_core::synth::{derive_seed, linear_grid, log_grid, simulate_power_sweep, NoiseSpec, PowerLawTruth, Preset};

use crate::config::{LogGrid, PipelineConfig, TraceSweepConfig};
use crate::report::{OutputDir, PlotEntry, Provenance};
use crate::Status;

#[derive(Debug, Serialize)]
struct Seeds {
    spectrum: u64,
    traces: u64,
    tls: u64,
    saturation: u64,
}

#[derive(Debug, Serialize)]
struct Truth<'a> {
    provenance: Provenance,
    preset: Preset,
    seeds: Seeds,
    traces: &'a TraceSweepConfig,
    tls: &'a TlsLossParams,
    tls_photons: &'a LogGrid,
    saturation: &'a SaturationParams,
    saturation_powers: &'a LogGrid,
    power_noise: f64,
}

pub fn run(config: &PipelineConfig, mut out: OutputDir, seed: u64) -> Result<Status> {
    let sim = &config.simulate;
    let preset = Preset::by_name(&sim.preset)?;
    let seeds = Seeds {
        spectrum: seed,
        traces: derive_seed(seed, 1),
        tls: derive_seed(seed, 2),
        saturation: derive_seed(seed, 3),
    };

    let spectrum = preset.spectrum(seeds.spectrum)?;
    out.write_with("spectrum.csv", |w| write_spectrum(w, &spectrum))?;
    out.add_plot(PlotEntry::linear("spectrum.csv", format!("Synthetic loss spectrum ({})", preset.name), "field_tesla", &["qb_inverse"]));

    let t = &sim.traces;
    let grid = preset.field_grid;
    let fields = linear_grid(grid.start, grid.stop, t.fields);
    let traces = preset
        .field_sweep_traces(&fields, t.points_per_trace, t.half_span_linewidths, t.snr, seeds.traces)
        .context("simulating the field sweep")?;
    out.write_with("traces.csv", |w| write_traces(w, &traces))?;

    let photons = log_grid(sim.tls_photons.start, sim.tls_photons.stop, sim.tls_photons.points);
    let tls = PowerSweep {
        axis: PowerAxis::Photons,
        loss: LossColumn::Qi,
        points: simulate_power_sweep(&PowerLawTruth::Tls(sim.tls), &photons, &NoiseSpec::relative(sim.power_noise, seeds.tls))?,
    };
    out.write_with("power_tls.csv", |w| write_power_sweep(w, &tls))?;
    out.add_plot(PlotEntry::linear("power_tls.csv", "Synthetic TLS sweep", "photons", &["qi"]).log_x());

    let g = &sim.saturation_powers;
    let powers = log_grid(g.start, g.stop, g.points);
    let saturation = PowerSweep {
        axis: PowerAxis::DrivePowerWatt,
        loss: LossColumn::QbInverse,
        points: simulate_power_sweep(
            &PowerLawTruth::Saturation(sim.saturation),
            &powers,
            &NoiseSpec::relative(sim.power_noise, seeds.saturation),
        )?,
    };
    out.write_with("power_saturation.csv", |w| write_power_sweep(w, &saturation))?;
    out.add_plot(
        PlotEntry::linear("power_saturation.csv", "Synthetic saturation sweep", "drive_power_watt", &["qb_inverse"]).log_x(),
    );

    let truth = Truth {
        provenance: Provenance::new("simulate", config, &[], Some(seed))?,
        preset,
        seeds,
        traces: &sim.traces,
        tls: &sim.tls,
        tls_photons: &sim.tls_photons,
        saturation: &sim.saturation,
        saturation_powers: &sim.saturation_powers,
        power_noise: sim.power_noise,
    };
    out.write_json("truth.json", &truth)?;
    out.finish("simulate")?;
    Ok(Status::Success)
}
