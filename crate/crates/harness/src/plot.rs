//! Long-format tables for metric-versus-bit-width figures.
//!
//! One table per `(dataset, split, metric)`: every `(method, mode, bits_w,
//! bits_a)` group with the mean and sample standard deviation over seeds.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{io_err, Result};
use crate::results::{format_value, ResultRow};

#[derive(Clone, Debug, PartialEq)]
pub struct SeriesPoint {
    pub method: String,
    pub mode: String,
    pub bits_w: u32,
    pub bits_a: u32,
    pub seeds: usize,
    pub mean: f64,
    pub std: f64,
}

type TableKey = (String, String, String);
type GroupKey = (String, String, u32, u32);

pub fn tables(rows: &[ResultRow]) -> BTreeMap<TableKey, Vec<SeriesPoint>> {
    let mut groups: BTreeMap<TableKey, BTreeMap<GroupKey, Vec<f64>>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.dataset.clone(), r.split.clone(), r.metric.clone()))
            .or_default()
            .entry((r.method.clone(), r.mode.clone(), r.bits_w, r.bits_a))
            .or_default()
            .push(r.value);
    }
    groups
        .into_iter()
        .map(|(k, g)| {
            let points = g
                .into_iter()
                .map(|((method, mode, bits_w, bits_a), vals)| {
                    let n = vals.len() as f64;
                    let mean = vals.iter().sum::<f64>() / n;
                    let std = if vals.len() > 1 {
                        (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
                    } else {
                        0.0
                    };
                    SeriesPoint {
                        method,
                        mode,
                        bits_w,
                        bits_a,
                        seeds: vals.len(),
                        mean,
                        std,
                    }
                })
                .collect();
            (k, points)
        })
        .collect()
}

fn safe(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' }).collect()
}

/// Writes each table to `dir/<dataset>__<split>__<metric>.csv` and returns
/// the paths in order.
pub fn write_tables(rows: &[ResultRow], dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();
    for ((dataset, split, metric), points) in tables(rows) {
        let path = dir.join(format!("{}__{}__{}.csv", safe(&dataset), safe(&split), safe(&metric)));
        let file = std::fs::File::create(&path).map_err(io_err(&path))?;
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(file);
        w.write_record(["method", "mode", "bits_w", "bits_a", "seeds", "mean", "std"])?;
        for p in points {
            w.write_record([
                p.method,
                p.mode,
                p.bits_w.to_string(),
                p.bits_a.to_string(),
                p.seeds.to_string(),
                format_value(p.mean),
                format_value(p.std),
            ])?;
        }
        w.flush().map_err(io_err(&path))?;
        written.push(path);
    }
    Ok(written)
}
