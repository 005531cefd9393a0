//! Result rows and their CSV form.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub const HEADER: [&str; 9] = ["method", "mode", "bits_w", "bits_a", "seed", "dataset", "split", "metric", "value"];

/// Bit-width recorded for float-mode rows.
pub const FLOAT_BITS: u32 = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub mode: String,
    pub bits_w: u32,
    pub bits_a: u32,
    pub seed: u64,
    pub dataset: String,
    pub split: String,
    pub metric: String,
    pub value: f64,
}

/// Shortest decimal with at most nine significant digits.
pub fn format_value(v: f64) -> String {
    if v.is_nan() {
        return "NaN".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific notation");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let s = format!("{v:.decimals$}");
        trim_zeros(&s).to_string()
    } else {
        format!("{}e{exp}", trim_zeros(mantissa))
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Serialises rows one at a time behind a header.
pub struct CsvSink<W: Write> {
    writer: csv::Writer<W>,
}

impl<W: Write> CsvSink<W> {
    pub fn new(w: W) -> Result<Self> {
        let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        writer.write_record(HEADER)?;
        Ok(Self { writer })
    }

    pub fn write(&mut self, row: &ResultRow) -> Result<()> {
        self.writer.write_record([
            row.method.as_str(),
            row.mode.as_str(),
            &row.bits_w.to_string(),
            &row.bits_a.to_string(),
            &row.seed.to_string(),
            row.dataset.as_str(),
            row.split.as_str(),
            row.metric.as_str(),
            &format_value(row.value),
        ])?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.writer.flush().map_err(|e| HarnessError::Csv(e.into()))
    }

    pub fn into_inner(self) -> Result<W> {
        self.writer
            .into_inner()
            .map_err(|e| HarnessError::Format(format!("flushing CSV: {}", e.error())))
    }
}

pub fn emit_csv<W: Write>(rows: &[ResultRow], w: W) -> Result<()> {
    let mut sink = CsvSink::new(w)?;
    for r in rows {
        sink.write(r)?;
    }
    sink.flush()
}

pub fn emit_csv_file(rows: &[ResultRow], path: &std::path::Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(crate::error::io_err(path))?;
    emit_csv(rows, std::io::BufWriter::new(file))
}

pub fn parse_csv<R: Read>(r: R) -> Result<Vec<ResultRow>> {
    let mut reader = csv::Reader::from_reader(r);
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != HEADER {
        return Err(HarnessError::Format(format!("unexpected CSV header {headers:?}")));
    }
    let mut rows = Vec::new();
    for rec in reader.deserialize() {
        rows.push(rec?);
    }
    Ok(rows)
}
