//! Dataset ingestion: numeric CSV regression tables, IDX image files and
//! the built-in synthetic regression problem.

use std::path::Path;

use qbnn::metrics::one_hot;
use qbnn::train::TrainData;
use qbnn::{SeededRng, Tensor};

use crate::error::{io_err, HarnessError, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const NUM_CLASSES: usize = 10;

/// Targets of an evaluation set, in original units.
#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    Regression(Vec<f32>),
    Classification(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSet {
    pub name: String,
    pub x: Tensor<f32>,
    pub targets: Targets,
}

/// A split, standardised dataset ready for training and evaluation.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub name: String,
    pub train: TrainData<f32>,
    pub val: Option<EvalSet>,
    pub test: EvalSet,
    /// Target de-standardisation; identity for classification.
    pub y_mean: f64,
    pub y_std: f64,
    /// Image geometry for augmentation, when the inputs are images.
    pub image_shape: Option<(usize, usize)>,
}

/// Mean and population standard deviation per column, fitted on one split.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardiser {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardiser {
    /// Constant columns get unit scale.
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let n = rows.len().max(1) as f64;
        let d = rows.first().map_or(0, Vec::len);
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m).powi(2);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let s = (s / n).sqrt();
                if s > 0.0 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

/// Sizes of the train, validation and test parts of `n` rows. Train and
/// validation are rounded down; test takes the remainder.
pub fn split_sizes(n: usize, fractions: [f64; 3]) -> Result<[usize; 3]> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(HarnessError::Config(format!("split fractions {fractions:?} must be in [0, 1] and sum to 1")));
    }
    let train = (fractions[0] * n as f64 + 1e-9).floor() as usize;
    let val = (fractions[1] * n as f64 + 1e-9).floor() as usize;
    Ok([train, val, n - train - val])
}

/// A seeded permutation of `0..n` cut into train, validation and test.
pub fn split_indices(n: usize, fractions: [f64; 3], rng: &mut SeededRng) -> Result<[Vec<usize>; 3]> {
    let [a, b, _] = split_sizes(n, fractions)?;
    let mut idx: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut idx);
    let test = idx.split_off(a + b);
    let val = idx.split_off(a);
    Ok([idx, val, test])
}

fn to_tensor(rows: &[Vec<f64>]) -> Result<Tensor<f32>> {
    let d = rows.first().map_or(0, Vec::len);
    Ok(Tensor::new(
        vec![rows.len(), d],
        rows.iter().flatten().map(|&v| v as f32).collect(),
    )?)
}

fn regression_set(name: &str, xs: &Standardiser, rows: &[Vec<f64>], y: &[f64]) -> Result<EvalSet> {
    let x: Vec<Vec<f64>> = rows.iter().map(|r| xs.apply(r)).collect();
    Ok(EvalSet {
        name: name.to_string(),
        x: to_tensor(&x)?,
        targets: Targets::Regression(y.iter().map(|&v| v as f32).collect()),
    })
}

/// Splits feature rows and targets, standardises both with statistics of
/// the training part, and packages the result.
pub fn prepare_regression(
    name: &str,
    features: Vec<Vec<f64>>,
    targets: Vec<f64>,
    fractions: [f64; 3],
    rng: &mut SeededRng,
) -> Result<Prepared> {
    let n = features.len();
    if n == 0 || targets.len() != n {
        return Err(HarnessError::Format(format!("{name}: {n} feature rows for {} targets", targets.len())));
    }
    let [tr, va, te] = split_indices(n, fractions, rng)?;
    if tr.is_empty() || te.is_empty() {
        return Err(HarnessError::Config(format!("{name}: split leaves an empty train or test set")));
    }
    let pick = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<f64>) {
        (idx.iter().map(|&i| features[i].clone()).collect(), idx.iter().map(|&i| targets[i]).collect())
    };
    let (xtr, ytr) = pick(&tr);
    let xs = Standardiser::fit(&xtr);
    let ys = Standardiser::fit(&ytr.iter().map(|&v| vec![v]).collect::<Vec<_>>());
    let (y_mean, y_std) = (ys.mean[0], ys.std[0]);
    let xtr_s: Vec<Vec<f64>> = xtr.iter().map(|r| xs.apply(r)).collect();
    let ytr_s: Vec<Vec<f64>> = ytr.iter().map(|&v| vec![(v - y_mean) / y_std]).collect();
    let train = TrainData::new(to_tensor(&xtr_s)?, to_tensor(&ytr_s)?)?;
    let val = if va.is_empty() {
        None
    } else {
        let (x, y) = pick(&va);
        Some(regression_set("val", &xs, &x, &y)?)
    };
    let (x, y) = pick(&te);
    Ok(Prepared {
        name: name.to_string(),
        train,
        val,
        test: regression_set("test", &xs, &x, &y)?,
        y_mean,
        y_std,
        image_shape: None,
    })
}

/// Reads a numeric CSV with a header row; the last column is the target.
pub fn read_csv_table(path: &Path) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let mut features = Vec::new();
    let mut targets = Vec::new();
    let mut width = None;
    for (r, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row = r + 2;
        if rec.len() < 2 {
            return Err(HarnessError::Format(format!("{}: row {row} has fewer than two columns", path.display())));
        }
        if *width.get_or_insert(rec.len()) != rec.len() {
            return Err(HarnessError::Format(format!("{}: row {row} has {} columns", path.display(), rec.len())));
        }
        let mut vals = Vec::with_capacity(rec.len());
        for (c, cell) in rec.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| HarnessError::Parse {
                path: path.to_path_buf(),
                row,
                column: c + 1,
                value: cell.to_string(),
            })?;
            if !v.is_finite() {
                return Err(HarnessError::Parse {
                    path: path.to_path_buf(),
                    row,
                    column: c + 1,
                    value: cell.to_string(),
                });
            }
            vals.push(v);
        }
        targets.push(vals.pop().expect("at least two columns"));
        features.push(vals);
    }
    if features.is_empty() {
        return Err(HarnessError::Format(format!("{}: no data rows", path.display())));
    }
    Ok((features, targets))
}

pub fn load_csv_regression(path: &Path, fractions: [f64; 3], rng: &mut SeededRng) -> Result<Prepared> {
    let (features, targets) = read_csv_table(path)?;
    let name = path.file_stem().map_or_else(|| "csv".to_string(), |s| s.to_string_lossy().into_owned());
    prepare_regression(&name, features, targets, fractions, rng)
}

/// Images scaled to `[0, 1]` as an `N x (rows * cols)` matrix, with labels.
#[derive(Clone, Debug, PartialEq)]
pub struct IdxImages {
    pub images: Tensor<f32>,
    pub labels: Vec<u8>,
    pub rows: usize,
    pub cols: usize,
}

impl IdxImages {
    pub fn one_hot(&self) -> Result<Tensor<f32>> {
        let labels: Vec<usize> = self.labels.iter().map(|&l| usize::from(l)).collect();
        Ok(one_hot(&labels, NUM_CLASSES)?)
    }
}

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| HarnessError::Format(format!("{what}: truncated header")))
}

/// Parses an IDX unsigned-byte file with the given magic; returns the
/// dimension sizes and the payload.
pub fn parse_idx(bytes: &[u8], magic: u32, what: &str) -> Result<(Vec<usize>, Vec<u8>)> {
    let found = be_u32(bytes, 0, what)?;
    if found != magic {
        return Err(HarnessError::Format(format!("{what}: magic {found:#010x}, expected {magic:#010x}")));
    }
    let ndim = (magic & 0xff) as usize;
    let dims = (0..ndim)
        .map(|i| be_u32(bytes, 4 + 4 * i, what).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let start = 4 + 4 * ndim;
    let len: usize = dims.iter().product();
    let payload = &bytes[start..];
    if payload.len() != len {
        return Err(HarnessError::Format(format!(
            "{what}: payload has {} bytes, header promises {len}",
            payload.len()
        )));
    }
    Ok((dims, payload.to_vec()))
}

pub fn load_idx_images(images: &Path, labels: &Path) -> Result<IdxImages> {
    let ib = std::fs::read(images).map_err(io_err(images))?;
    let lb = std::fs::read(labels).map_err(io_err(labels))?;
    let (idims, pixels) = parse_idx(&ib, IDX_IMAGES_MAGIC, &images.display().to_string())?;
    let (ldims, labels_raw) = parse_idx(&lb, IDX_LABELS_MAGIC, &labels.display().to_string())?;
    if idims[0] != ldims[0] {
        return Err(HarnessError::Format(format!("{} images but {} labels", idims[0], ldims[0])));
    }
    if let Some(&bad) = labels_raw.iter().find(|&&l| usize::from(l) >= NUM_CLASSES) {
        return Err(HarnessError::Format(format!("label {bad} outside 0..{NUM_CLASSES}")));
    }
    let (n, rows, cols) = (idims[0], idims[1], idims[2]);
    if n == 0 || rows == 0 || cols == 0 {
        return Err(HarnessError::Format("empty image file".into()));
    }
    Ok(IdxImages {
        images: Tensor::new(vec![n, rows * cols], pixels.iter().map(|&p| f32::from(p) / 255.0).collect())?,
        labels: labels_raw,
        rows,
        cols,
    })
}

/// Splits an image set; inputs stay in `[0, 1]`.
pub fn prepare_images(name: &str, data: &IdxImages, fractions: [f64; 3], rng: &mut SeededRng) -> Result<Prepared> {
    let [tr, va, te] = split_indices(data.labels.len(), fractions, rng)?;
    if tr.is_empty() || te.is_empty() {
        return Err(HarnessError::Config(format!("{name}: split leaves an empty train or test set")));
    }
    let y = data.one_hot()?;
    let set = |label: &str, idx: &[usize]| -> Result<EvalSet> {
        Ok(EvalSet {
            name: label.to_string(),
            x: data.images.select_rows(idx)?,
            targets: Targets::Classification(idx.iter().map(|&i| usize::from(data.labels[i])).collect()),
        })
    };
    Ok(Prepared {
        name: name.to_string(),
        train: TrainData::new(data.images.select_rows(&tr)?, y.select_rows(&tr)?)?,
        val: if va.is_empty() { None } else { Some(set("val", &va)?) },
        test: set("test", &te)?,
        y_mean: 0.0,
        y_std: 1.0,
        image_shape: Some((data.rows, data.cols)),
    })
}

/// `x ~ U(-2, 2)`, `y = 2x + 8 + eps` with `eps ~ N(0, noise^2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Synthetic {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// `2x + 8`.
    pub y_clean: Vec<f64>,
}

pub fn synth_regression(rng: &mut SeededRng, n: usize, noise: f64) -> Result<Synthetic> {
    if n == 0 {
        return Err(HarnessError::Config("synthetic dataset needs at least one point".into()));
    }
    let mut out = Synthetic {
        x: Vec::with_capacity(n),
        y: Vec::with_capacity(n),
        y_clean: Vec::with_capacity(n),
    };
    for _ in 0..n {
        let x = rng.uniform_range(-2.0, 2.0);
        let clean = 2.0 * x + 8.0;
        out.x.push(x);
        out.y_clean.push(clean);
        out.y.push(clean + noise * rng.normal());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes_round_down() {
        assert_eq!(split_sizes(100, [0.8, 0.1, 0.1]).unwrap(), [80, 10, 10]);
        assert_eq!(split_sizes(3000, [2.0 / 3.0, 0.0, 1.0 / 3.0]).unwrap(), [2000, 0, 1000]);
        assert!(split_sizes(10, [0.5, 0.5, 0.5]).is_err());
    }

    #[test]
    fn standardiser_handles_constant_columns() {
        let s = Standardiser::fit(&[vec![1.0, 5.0], vec![3.0, 5.0]]);
        assert_eq!(s.mean, vec![2.0, 5.0]);
        assert_eq!(s.std, vec![1.0, 1.0]);
        assert_eq!(s.apply(&[3.0, 5.0]), vec![1.0, 0.0]);
    }

    #[test]
    fn noiseless_synthetic_is_the_line() {
        let d = synth_regression(&mut SeededRng::new(3), 50, 0.0).unwrap();
        for (x, y) in d.x.iter().zip(&d.y) {
            assert!((y - (2.0 * x + 8.0)).abs() < 1e-12);
            assert!((-2.0..2.0).contains(x));
        }
    }
}
