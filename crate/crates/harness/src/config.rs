//! Experiment configuration, read from TOML. Unknown keys are errors at
//! every level. See `docs/config.md` for the schema.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use qbnn::bayes::{Method, Mode, Task};
use qbnn::quant::RequantMode;
use qbnn::train::{QatConfig, TrainConfig};

use crate::augment::Augmentation;
use crate::error::{io_err, HarnessError, Result};

fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3]
}

fn default_samples() -> usize {
    20
}

fn default_hidden() -> Vec<usize> {
    vec![100, 100, 100]
}

fn default_modes() -> Vec<Mode> {
    Mode::ALL.to_vec()
}

fn default_bins() -> usize {
    10
}

fn default_obs_std() -> f64 {
    1.0
}

fn default_size() -> usize {
    3000
}

fn default_noise() -> f64 {
    1.0
}

fn default_split() -> [f64; 3] {
    [0.8, 0.0, 0.2]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetSpec {
    Synthetic {
        #[serde(default = "default_size")]
        size: usize,
        #[serde(default = "default_noise")]
        noise: f64,
        #[serde(default = "default_split")]
        split: [f64; 3],
    },
    Csv {
        path: PathBuf,
        #[serde(default = "default_split")]
        split: [f64; 3],
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default = "default_split")]
        split: [f64; 3],
    },
}

impl DatasetSpec {
    pub fn name(&self) -> String {
        match self {
            DatasetSpec::Synthetic { .. } => "synthetic".into(),
            DatasetSpec::Csv { path, .. } => stem(path),
            DatasetSpec::Idx { images, .. } => stem(images.parent().unwrap_or(images)),
        }
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match self {
            DatasetSpec::Synthetic { .. } => {}
            DatasetSpec::Csv { path, .. } => fix(path),
            DatasetSpec::Idx { images, labels, .. } => {
                fix(images);
                fix(labels);
            }
        }
    }
}

fn stem(p: &Path) -> String {
    p.file_stem().map_or_else(|| "data".to_string(), |s| s.to_string_lossy().into_owned())
}

/// An extra evaluation set: the test split with corruptions applied in order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSetSpec {
    pub name: String,
    pub augment: Vec<Augmentation>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    pub bits_w: Vec<u32>,
    pub bits_a: Vec<u32>,
    /// Skip cells with `bits_a > bits_w - 1`.
    pub overflow_guard: bool,
    /// Worker threads; `0` uses the rayon default.
    pub threads: usize,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            bits_w: vec![8],
            bits_a: vec![7],
            overflow_guard: true,
            threads: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    pub dataset: DatasetSpec,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Predictive passes `L`.
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Hidden layer widths; input and output widths come from the data.
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_modes")]
    pub modes: Vec<Mode>,
    #[serde(default)]
    pub requant: RequantMode,
    /// Regression observation noise in original target units.
    #[serde(default = "default_obs_std")]
    pub obs_std: f64,
    #[serde(default = "default_bins")]
    pub ece_bins: usize,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub qat: QatConfig,
    #[serde(default)]
    pub sweep: SweepSpec,
    #[serde(default)]
    pub eval_sets: Vec<EvalSetSpec>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative dataset paths are taken relative to it.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg = Self::parse(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        cfg.dataset.resolve(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.methods.is_empty() || self.seeds.is_empty() || self.modes.is_empty() {
            return bad("methods, seeds and modes must be non-empty".into());
        }
        if self.samples == 0 {
            return bad("samples must be at least 1".into());
        }
        if self.hidden.contains(&0) {
            return bad("hidden widths must be positive".into());
        }
        if self.obs_std.is_nan() || self.obs_std <= 0.0 {
            return bad("obs_std must be positive".into());
        }
        if self.ece_bins == 0 {
            return bad("ece_bins must be at least 1".into());
        }
        if self.sweep.bits_w.is_empty() || self.sweep.bits_a.is_empty() {
            return bad("sweep bit-width lists must be non-empty".into());
        }
        for &w in &self.sweep.bits_w {
            for &a in &self.sweep.bits_a {
                QatConfig {
                    bits_w: w,
                    bits_a: a,
                    ..self.qat.clone()
                }
                .validate()?;
            }
        }
        self.train.validate()?;
        if self.task == Task::Regression && !self.eval_sets.is_empty() {
            return bad("augmented evaluation sets need image data".into());
        }
        if let DatasetSpec::Synthetic { noise, .. } = &self.dataset {
            if noise.is_nan() || *noise < 0.0 {
                return bad("synthetic noise must be non-negative".into());
            }
        }
        let image_task = matches!(self.dataset, DatasetSpec::Idx { .. });
        if image_task != (self.task == Task::Classification) {
            return bad("classification uses IDX images; regression uses synthetic or CSV data".into());
        }
        Ok(())
    }

    /// `(bits_w, bits_a)` cells of the sweep; with the overflow guard on,
    /// cells with `bits_a >= bits_w` are skipped.
    pub fn cells(&self) -> Vec<(u32, u32)> {
        let mut out = Vec::new();
        for &w in &self.sweep.bits_w {
            for &a in &self.sweep.bits_a {
                if !self.sweep.overflow_guard || a < w {
                    out.push((w, a));
                }
            }
        }
        out
    }
}
