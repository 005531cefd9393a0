//! Train, fine-tune and evaluate one experiment cell, and the sweep over
//! cells.

use std::collections::BTreeMap;
use std::sync::mpsc;

use rayon::prelude::*;

use qbnn::bayes::{predictive, BayesianModel, Executable, Method, Mode, QuantisedModel, Task};
use qbnn::metrics::MetricsReport;
use qbnn::rng::splitmix64;
use qbnn::train::{qat_finetune, train_model, QatConfig, QatOutcome, TrainConfig, TrainLog};
use qbnn::SeededRng;

use crate::augment::augment;
use crate::config::{DatasetSpec, ExperimentConfig};
use crate::data::{load_csv_regression, load_idx_images, prepare_images, prepare_regression, synth_regression, EvalSet, Prepared, Targets};
use crate::error::{HarnessError, Result};
use crate::results::{ResultRow, FLOAT_BITS};

/// Independent generator for one purpose within a seed.
pub fn stream(seed: u64, parts: &[u64]) -> SeededRng {
    let mut s = splitmix64(seed);
    for &p in parts {
        s = splitmix64(s ^ splitmix64(p.wrapping_add(0x51ed)));
    }
    SeededRng::new(s)
}

const DATA: u64 = 1;
const TRAIN: u64 = 2;
const QAT: u64 = 3;
const EVAL: u64 = 4;

fn method_id(m: Method) -> u64 {
    Method::ALL.iter().position(|x| *x == m).expect("listed") as u64
}

pub fn prepare_data(cfg: &ExperimentConfig, seed: u64) -> Result<Prepared> {
    let mut rng = stream(seed, &[DATA]);
    match &cfg.dataset {
        DatasetSpec::Synthetic { size, noise, split } => {
            let d = synth_regression(&mut rng, *size, *noise)?;
            let features = d.x.iter().map(|&x| vec![x]).collect();
            prepare_regression("synthetic", features, d.y, *split, &mut rng)
        }
        DatasetSpec::Csv { path, split } => load_csv_regression(path, *split, &mut rng),
        DatasetSpec::Idx { images, labels, split } => {
            let imgs = load_idx_images(images, labels)?;
            prepare_images(&cfg.dataset.name(), &imgs, *split, &mut rng)
        }
    }
}

/// The test split plus every configured corrupted copy of it.
pub fn eval_sets(cfg: &ExperimentConfig, data: &Prepared) -> Result<Vec<EvalSet>> {
    let mut sets = vec![data.test.clone()];
    for spec in &cfg.eval_sets {
        let (h, w) = data
            .image_shape
            .ok_or_else(|| HarnessError::Config("augmented evaluation sets need image data".into()))?;
        let mut x = data.test.x.clone();
        for a in &spec.augment {
            x = augment(&x, h, w, a.kind, a.strength)?;
        }
        sets.push(EvalSet {
            name: spec.name.clone(),
            x,
            targets: data.test.targets.clone(),
        });
    }
    Ok(sets)
}

/// Training settings with the observation noise expressed in standardised
/// target units.
pub fn train_config(cfg: &ExperimentConfig, data: &Prepared) -> TrainConfig {
    TrainConfig {
        obs_std: cfg.obs_std / data.y_std,
        ..cfg.train.clone()
    }
}

pub fn widths(cfg: &ExperimentConfig, data: &Prepared) -> Vec<usize> {
    let mut w = vec![data.train.x.cols()];
    w.extend(&cfg.hidden);
    w.push(data.train.y.cols());
    w
}

pub fn train_float(
    cfg: &ExperimentConfig,
    data: &Prepared,
    method: Method,
    seed: u64,
    log: &mut TrainLog<'_>,
) -> Result<BayesianModel<f32>> {
    let mut rng = stream(seed, &[TRAIN, method_id(method)]);
    let (model, _) = train_model(
        method,
        &widths(cfg, data),
        cfg.task,
        &data.train,
        &train_config(cfg, data),
        &mut rng,
        log,
    )?;
    Ok(model)
}

#[allow(clippy::too_many_arguments)]
pub fn quantise_model(
    cfg: &ExperimentConfig,
    data: &Prepared,
    model: &BayesianModel<f32>,
    seed: u64,
    bits_w: u32,
    bits_a: u32,
    log: &mut TrainLog<'_>,
) -> Result<QatOutcome<f32>> {
    let q = QatConfig {
        bits_w,
        bits_a,
        ..cfg.qat.clone()
    };
    let mut rng = stream(seed, &[QAT, method_id(model.method()), u64::from(bits_w), u64::from(bits_a)]);
    Ok(qat_finetune(model, &data.train, &train_config(cfg, data), &q, &mut rng, log)?)
}

/// Metrics of one executable on one set.
pub fn evaluate_set(
    cfg: &ExperimentConfig,
    data: &Prepared,
    exe: &Executable<'_, f32>,
    set: &EvalSet,
    rng: &mut SeededRng,
) -> Result<MetricsReport> {
    let samples = exe.snapshots().map_or(cfg.samples, |n| n.min(cfg.samples));
    let summary = predictive(exe, &set.x, samples, rng, false)?;
    Ok(match (&set.targets, exe.task()) {
        (Targets::Regression(y), Task::Regression) => MetricsReport::regression(
            &summary.mean,
            &summary.variance,
            y,
            data.y_mean,
            data.y_std,
            cfg.obs_std * cfg.obs_std,
        )?,
        (Targets::Classification(labels), Task::Classification) => {
            MetricsReport::classification(&summary.mean, labels, cfg.ece_bins)?
        }
        _ => return Err(HarnessError::Config("model task does not match the evaluation data".into())),
    })
}

#[allow(clippy::too_many_arguments)]
fn rows_for(
    method: Method,
    mode: Mode,
    bits: (u32, u32),
    seed: u64,
    dataset: &str,
    split: &str,
    report: &MetricsReport,
) -> Vec<ResultRow> {
    report
        .entries()
        .into_iter()
        .map(|(metric, value)| ResultRow {
            method: method.to_string(),
            mode: mode.to_string(),
            bits_w: bits.0,
            bits_a: bits.1,
            seed,
            dataset: dataset.to_string(),
            split: split.to_string(),
            metric: metric.to_string(),
            value,
        })
        .collect()
}

fn failure_row(method: Method, mode: &str, bits: (u32, u32), seed: u64, dataset: &str, stage: &str, err: &HarnessError) -> ResultRow {
    eprintln!("warning: {method} seed {seed} bits {}/{}: {stage} failed: {err}", bits.0, bits.1);
    ResultRow {
        method: method.to_string(),
        mode: mode.to_string(),
        bits_w: bits.0,
        bits_a: bits.1,
        seed,
        dataset: dataset.to_string(),
        split: "-".into(),
        metric: format!("failed-{stage}"),
        value: f64::NAN,
    }
}

/// Evaluates `exe` on every set, with generators shared across modes so
/// that simulated and integer runs see identical noise.
pub fn evaluate_all(
    cfg: &ExperimentConfig,
    data: &Prepared,
    sets: &[EvalSet],
    exe: &Executable<'_, f32>,
    seed: u64,
    bits: (u32, u32),
    mode: Mode,
) -> Result<Vec<ResultRow>> {
    let mut rows = Vec::new();
    for (i, set) in sets.iter().enumerate() {
        let mut rng = stream(seed, &[EVAL, method_id(exe.method()), u64::from(bits.0), u64::from(bits.1), i as u64]);
        let report = evaluate_set(cfg, data, exe, set, &mut rng)?;
        rows.extend(rows_for(exe.method(), mode, bits, seed, &data.name, &set.name, &report));
    }
    Ok(rows)
}

/// All rows for one `(method, seed)`: float once, then each bit-width cell.
pub fn run_group(cfg: &ExperimentConfig, method: Method, seed: u64) -> Vec<ResultRow> {
    let name = cfg.dataset.name();
    let float_bits = (FLOAT_BITS, FLOAT_BITS);
    let data = match prepare_data(cfg, seed) {
        Ok(d) => d,
        Err(e) => return vec![failure_row(method, "float", float_bits, seed, &name, "data", &e)],
    };
    let sets = match eval_sets(cfg, &data) {
        Ok(s) => s,
        Err(e) => return vec![failure_row(method, "float", float_bits, seed, &name, "data", &e)],
    };
    let model = match train_float(cfg, &data, method, seed, &mut TrainLog::none()) {
        Ok(m) => m,
        Err(e) => return vec![failure_row(method, "float", float_bits, seed, &name, "train", &e)],
    };
    let mut rows = Vec::new();
    if cfg.modes.contains(&Mode::Float) {
        match evaluate_all(cfg, &data, &sets, &Executable::Float(&model), seed, float_bits, Mode::Float) {
            Ok(r) => rows.extend(r),
            Err(e) => rows.push(failure_row(method, "float", float_bits, seed, &name, "eval", &e)),
        }
    }
    let quantised_modes: Vec<Mode> = cfg.modes.iter().copied().filter(|m| *m != Mode::Float).collect();
    if quantised_modes.is_empty() {
        return rows;
    }
    for bits in cfg.cells() {
        let outcome = match quantise_model(cfg, &data, &model, seed, bits.0, bits.1, &mut TrainLog::none()) {
            Ok(o) => o,
            Err(e) => {
                rows.push(failure_row(method, "-", bits, seed, &name, "qat", &e));
                continue;
            }
        };
        for &mode in &quantised_modes {
            let exe = match Executable::select(&model, Some(&outcome.quantised), mode, cfg.requant) {
                Ok(x) => x,
                Err(e) => {
                    rows.push(failure_row(method, mode.name(), bits, seed, &name, "eval", &e.into()));
                    continue;
                }
            };
            match evaluate_all(cfg, &data, &sets, &exe, seed, bits, mode) {
                Ok(r) => rows.extend(r),
                Err(e) => rows.push(failure_row(method, mode.name(), bits, seed, &name, "eval", &e)),
            }
        }
    }
    rows
}

/// Runs every `(method, seed)` group, possibly in parallel, and hands rows
/// to `sink` group by group in configuration order.
pub fn run_sweep(cfg: &ExperimentConfig, mut sink: impl FnMut(&[ResultRow]) -> Result<()>) -> Result<()> {
    cfg.validate()?;
    if !cfg.sweep.overflow_guard {
        eprintln!(
            "WARNING: overflow guard disabled; cells with bits_a >= bits_w may overflow the 32-bit accumulator"
        );
    } else {
        let skipped = cfg.sweep.bits_w.len() * cfg.sweep.bits_a.len() - cfg.cells().len();
        if skipped > 0 {
            eprintln!("note: overflow guard skips {skipped} cell(s) with bits_a >= bits_w");
        }
    }
    let groups: Vec<(Method, u64)> = cfg
        .methods
        .iter()
        .flat_map(|&m| cfg.seeds.iter().map(move |&s| (m, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.sweep.threads)
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
    let (tx, rx) = mpsc::channel::<(usize, Vec<ResultRow>)>();
    let mut result = Ok(());
    pool.in_place_scope(|scope| {
        let groups = &groups;
        scope.spawn(move |_| {
            groups.par_iter().enumerate().for_each_with(tx, |tx, (i, &(m, s))| {
                let _ = tx.send((i, run_group(cfg, m, s)));
            });
        });
        // Reassemble in order so the output does not depend on scheduling.
        let mut pending = BTreeMap::new();
        let mut next = 0;
        for (i, rows) in rx {
            pending.insert(i, rows);
            while let Some(rows) = pending.remove(&next) {
                if result.is_ok() {
                    result = sink(&rows);
                }
                next += 1;
            }
        }
    });
    result
}

/// Convenience wrapper for a float model with an optional quantised one.
pub fn select<'a>(
    model: &'a BayesianModel<f32>,
    quantised: Option<&'a QuantisedModel<f32>>,
    mode: Mode,
    cfg: &ExperimentConfig,
) -> Result<Executable<'a, f32>> {
    Ok(Executable::select(model, quantised, mode, cfg.requant)?)
}
