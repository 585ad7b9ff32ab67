//! CSV interchange and deterministic JSON output.
//!
//! All CSV files carry a mandatory header row; lines starting with `#` are
//! comments. Spectrum files may carry `# key=value` metadata comments for the
//! resonator frequency and the reference loss. Floats are written with 17
//! significant digits so files round-trip exactly.

use std::collections::HashMap;
use std::io::{Read, Write};

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{invalid, EsrError, Result};
use crate::resonator::{ComplexTrace, EsrSpectrum, TraceMetadata};

pub const TRACE_COLUMNS: [&str; 6] = [
    "frequency_hz",
    "s21_real",
    "s21_imag",
    "field_tesla",
    "drive_power_watt",
    "temperature_kelvin",
];
pub const SPECTRUM_COLUMNS: [&str; 2] = ["field_tesla", "qb_inverse"];

/// Format a float with 17 significant digits; non-finite values have no
/// textual form in our outputs and are rejected by the writers.
pub fn format_float(v: f64) -> String {
    if v == 0.0 {
        // Avoid "-0" so reruns that differ only in the sign of zero agree.
        return "0.0000000000000000e0".to_string();
    }
    format!("{v:.16e}")
}

fn parse_err(line: u64, message: impl Into<String>) -> EsrError {
    EsrError::Parse { line, message: message.into() }
}

/// A parsed CSV table: column name → index, plus numeric rows with line numbers.
struct Table {
    columns: HashMap<String, usize>,
    rows: Vec<(u64, Vec<f64>)>,
    /// `# key=value` comments seen anywhere in the file.
    metadata: HashMap<String, String>,
}

impl Table {
    fn column(&self, name: &str) -> Option<usize> {
        self.columns.get(name).copied()
    }

    fn require(&self, name: &str) -> Result<usize> {
        self.column(name)
            .ok_or_else(|| parse_err(1, format!("missing required column '{name}'")))
    }
}

fn csv_err(e: csv::Error) -> EsrError {
    let line = e.position().map_or(0, |p| p.line());
    let message = match e.kind() {
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => {
            format!("expected {expected_len} fields, found {len}")
        }
        _ => e.to_string(),
    };
    parse_err(line, message)
}

fn read_table<R: Read>(mut reader: R) -> Result<Table> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    let metadata = text
        .lines()
        .filter_map(|l| l.trim().strip_prefix('#'))
        .filter_map(|c| c.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect();
    let mut csv = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = csv.headers().map_err(csv_err)?.clone();
    let header_line = text
        .lines()
        .position(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map_or(1, |i| i as u64 + 1);
    if header.is_empty() || header.iter().all(str::is_empty) {
        return Err(parse_err(1, "file is empty (no header row)"));
    }
    if header.iter().any(|c| c.parse::<f64>().is_ok()) {
        return Err(parse_err(header_line, "expected a header row before data"));
    }
    let mut columns = HashMap::new();
    for (i, name) in header.iter().enumerate() {
        if columns.insert(name.to_string(), i).is_some() {
            return Err(parse_err(header_line, format!("duplicate column '{name}'")));
        }
    }
    let mut rows = Vec::new();
    for record in csv.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map_or(0, |p| p.line());
        let values = record
            .iter()
            .zip(header.iter())
            .map(|(c, name)| match c.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(parse_err(line, format!("column '{name}': '{c}' is not a finite number"))),
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push((line, values));
    }
    if rows.is_empty() {
        return Err(parse_err(header_line, "no data rows"));
    }
    Ok(Table { columns, rows, metadata })
}

/// Read one or more traces. Consecutive rows sharing field, drive power and
/// temperature form one trace.
pub fn read_traces<R: Read>(reader: R) -> Result<Vec<ComplexTrace>> {
    let table = read_table(reader)?;
    let idx: Vec<usize> = TRACE_COLUMNS.iter().map(|c| table.require(c)).collect::<Result<_>>()?;
    let mut traces = Vec::new();
    let mut current: Option<(u64, TraceMetadata, Vec<f64>, Vec<Complex64>)> = None;
    for (line, row) in &table.rows {
        let meta = TraceMetadata { applied_field: row[idx[3]], drive_power: row[idx[4]], temperature: row[idx[5]] };
        let f = row[idx[0]];
        let s = Complex64::new(row[idx[1]], row[idx[2]]);
        match &mut current {
            Some((_, m, fs, ss)) if *m == meta => {
                if f <= *fs.last().expect("non-empty") {
                    return Err(parse_err(*line, "frequencies must increase within a trace"));
                }
                fs.push(f);
                ss.push(s);
            }
            _ => {
                if let Some(done) = current.take() {
                    traces.push(finish_trace(done)?);
                }
                current = Some((*line, meta, vec![f], vec![s]));
            }
        }
    }
    if let Some(done) = current {
        traces.push(finish_trace(done)?);
    }
    Ok(traces)
}

fn finish_trace((line, meta, fs, ss): (u64, TraceMetadata, Vec<f64>, Vec<Complex64>)) -> Result<ComplexTrace> {
    ComplexTrace::new(fs, ss, meta).map_err(|e| parse_err(line, format!("trace starting here: {e}")))
}

fn write_row<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    let mut line = String::new();
    for (i, v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(invalid("refusing to write a non-finite value to CSV"));
        }
        if i > 0 {
            line.push(',');
        }
        line.push_str(&format_float(*v));
    }
    line.push('\n');
    w.write_all(line.as_bytes())?;
    Ok(())
}

pub fn write_traces<W: Write>(mut w: W, traces: &[ComplexTrace]) -> Result<()> {
    writeln!(w, "{}", TRACE_COLUMNS.join(","))?;
    for t in traces {
        let m = &t.metadata;
        for (f, s) in t.frequencies.iter().zip(&t.s21) {
            write_row(&mut w, &[*f, s.re, s.im, m.applied_field, m.drive_power, m.temperature])?;
        }
    }
    Ok(())
}

/// Spectrum columns plus whatever metadata the file carried.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumFile {
    pub fields: Vec<f64>,
    pub qb_inverse: Vec<f64>,
    pub resonator_f0: Option<f64>,
    pub reference_qi_inverse: Option<f64>,
}

impl SpectrumFile {
    /// Build a spectrum, using `default_f0` when the file did not record one.
    pub fn into_spectrum(self, default_f0: Option<f64>) -> Result<EsrSpectrum> {
        let f0 = self
            .resonator_f0
            .or(default_f0)
            .ok_or_else(|| invalid("spectrum file has no resonator_f0_hz and none was configured"))?;
        EsrSpectrum::new(self.fields, self.qb_inverse, self.reference_qi_inverse.unwrap_or(0.0), f0)
    }
}

fn metadata_float(table: &Table, key: &str) -> Result<Option<f64>> {
    table
        .metadata
        .get(key)
        .map(|v| {
            v.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| parse_err(1, format!("metadata '{key}': '{v}' is not a finite number")))
        })
        .transpose()
}

pub fn read_spectrum<R: Read>(reader: R) -> Result<SpectrumFile> {
    let table = read_table(reader)?;
    let bi = table.require(SPECTRUM_COLUMNS[0])?;
    let qi = table.require(SPECTRUM_COLUMNS[1])?;
    for pair in table.rows.windows(2) {
        if pair[1].1[bi] <= pair[0].1[bi] {
            return Err(parse_err(pair[1].0, "fields must be strictly increasing"));
        }
    }
    Ok(SpectrumFile {
        fields: table.rows.iter().map(|(_, r)| r[bi]).collect(),
        qb_inverse: table.rows.iter().map(|(_, r)| r[qi]).collect(),
        resonator_f0: metadata_float(&table, "resonator_f0_hz")?,
        reference_qi_inverse: metadata_float(&table, "reference_qi_inverse")?,
    })
}

pub fn write_spectrum<W: Write>(mut w: W, spectrum: &EsrSpectrum) -> Result<()> {
    writeln!(w, "# resonator_f0_hz={}", format_float(spectrum.resonator_f0))?;
    writeln!(w, "# reference_qi_inverse={}", format_float(spectrum.reference_qi_inverse))?;
    writeln!(w, "{}", SPECTRUM_COLUMNS.join(","))?;
    for (b, q) in spectrum.fields.iter().zip(&spectrum.qb_inverse) {
        write_row(&mut w, &[*b, *q])?;
    }
    Ok(())
}

/// Abscissa of a power sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerAxis {
    DrivePowerWatt,
    Photons,
}

/// Ordinate of a power sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LossColumn {
    Qi,
    QbInverse,
}

impl PowerAxis {
    pub fn column_name(self) -> &'static str {
        match self {
            PowerAxis::DrivePowerWatt => "drive_power_watt",
            PowerAxis::Photons => "photons",
        }
    }
}

impl LossColumn {
    pub fn column_name(self) -> &'static str {
        match self {
            LossColumn::Qi => "qi",
            LossColumn::QbInverse => "qb_inverse",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerSweep {
    pub axis: PowerAxis,
    pub loss: LossColumn,
    pub points: Vec<(f64, f64)>,
}

fn pick<T: Copy>(table: &Table, options: [(T, &str); 2], what: &str) -> Result<(T, usize)> {
    let found: Vec<(T, usize)> =
        options.iter().filter_map(|(t, name)| table.column(name).map(|i| (*t, i))).collect();
    match found.as_slice() {
        [one] => Ok(*one),
        [] => Err(parse_err(
            1,
            format!("missing {what} column (expected '{}' or '{}')", options[0].1, options[1].1),
        )),
        _ => Err(parse_err(
            1,
            format!("ambiguous {what}: both '{}' and '{}' present", options[0].1, options[1].1),
        )),
    }
}

pub fn read_power_sweep<R: Read>(reader: R) -> Result<PowerSweep> {
    let table = read_table(reader)?;
    let (axis, xi) = pick(
        &table,
        [(PowerAxis::DrivePowerWatt, "drive_power_watt"), (PowerAxis::Photons, "photons")],
        "power",
    )?;
    let (loss, yi) = pick(&table, [(LossColumn::Qi, "qi"), (LossColumn::QbInverse, "qb_inverse")], "loss")?;
    for (line, row) in &table.rows {
        if row[xi] <= 0.0 {
            return Err(parse_err(*line, "power values must be positive"));
        }
    }
    Ok(PowerSweep { axis, loss, points: table.rows.iter().map(|(_, r)| (r[xi], r[yi])).collect() })
}

pub fn write_power_sweep<W: Write>(mut w: W, sweep: &PowerSweep) -> Result<()> {
    writeln!(w, "{},{}", sweep.axis.column_name(), sweep.loss.column_name())?;
    for (x, y) in &sweep.points {
        write_row(&mut w, &[*x, *y])?;
    }
    Ok(())
}

/// Write named columns of equal length as CSV.
pub fn write_columns<W: Write>(mut w: W, names: &[&str], columns: &[Vec<f64>]) -> Result<()> {
    if names.len() != columns.len() || columns.windows(2).any(|c| c[0].len() != c[1].len()) {
        return Err(invalid("column names and data do not line up"));
    }
    writeln!(w, "{}", names.join(","))?;
    let rows = columns.first().map_or(0, Vec::len);
    let mut row = vec![0.0; columns.len()];
    for i in 0..rows {
        for (slot, col) in row.iter_mut().zip(columns) {
            *slot = col[i];
        }
        write_row(&mut w, &row)?;
    }
    Ok(())
}

/// Pretty printer that writes every float with 17 significant digits.
/// serde_json already renders NaN and ±Inf as `null`.
struct ReportFormatter<'a>(serde_json::ser::PrettyFormatter<'a>);

impl serde_json::ser::Formatter for ReportFormatter<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()> {
        writer.write_all(format_float(value).as_bytes())
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> std::io::Result<()> {
        self.write_f64(writer, value as f64)
    }

    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_array(w)
    }

    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_array(w)
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_array_value(w)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_object(w)
    }

    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_object(w)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Serialize with struct-declaration key order and fixed float formatting.
pub fn to_report_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, ReportFormatter(Default::default()));
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}
