//! Datasets, CSV loading, splitting, baselines and feature scaling.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::points::PointSet;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Regression,
    Classification,
}

/// Features, labels and the kind of learning task.
///
/// Construction validates that there is at least one point with at least
/// one feature, that everything is finite, and that classification labels
/// are exactly `-1.0` or `+1.0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: PointSet,
    labels: Vec<f64>,
    task: Task,
}

impl Dataset {
    pub fn new(features: PointSet, labels: Vec<f64>, task: Task) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::NoRows);
        }
        if features.len() != labels.len() {
            return Err(Error::invalid(format!(
                "{} feature rows but {} labels",
                features.len(),
                labels.len()
            )));
        }
        if !features.all_finite() || labels.iter().any(|y| !y.is_finite()) {
            return Err(Error::invalid("dataset contains non-finite values"));
        }
        if task == Task::Classification && labels.iter().any(|&y| y != 1.0 && y != -1.0) {
            return Err(Error::invalid("classification labels must be -1 or +1"));
        }
        Ok(Self {
            features,
            labels,
            task,
        })
    }

    pub fn features(&self) -> &PointSet {
        &self.features
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.dim()
    }

    /// Rows `indices`, in that order. Panics on an empty selection.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        assert!(!indices.is_empty(), "empty dataset selection");
        Dataset {
            features: self.features.select(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            task: self.task,
        }
    }

    /// Same labels and task, new features. Row counts must agree.
    pub fn with_features(&self, features: PointSet) -> Result<Dataset> {
        Dataset::new(features, self.labels.clone(), self.task)
    }
}

/// Reads a comma-separated file whose last column is the label.
///
/// Data rows are numbered from 1 in error messages (a header line, if
/// present, is not counted). For classification, two distinct raw label
/// values are remapped so that the smaller becomes `-1` and the larger `+1`.
pub fn load_csv(path: impl AsRef<Path>, task: Task, has_header: bool) -> Result<Dataset> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(file, task, has_header)
}

pub fn read_csv<R: std::io::Read>(reader: R, task: Task, has_header: bool) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Parse {
            row,
            msg: e.to_string(),
        })?;
        if record.len() < 2 {
            return Err(Error::Parse {
                row,
                msg: "need at least one feature and a label".into(),
            });
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(Error::Parse {
                    row,
                    msg: format!("expected {w} fields, found {}", record.len()),
                })
            }
            _ => {}
        }
        let mut values = Vec::with_capacity(record.len());
        for field in record.iter() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                row,
                msg: format!("non-numeric cell {field:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    msg: format!("non-finite cell {field:?}"),
                });
            }
            values.push(v);
        }
        labels.push(values.pop().unwrap_or_default());
        data.extend(values);
    }
    let Some(width) = width else {
        return Err(Error::NoRows);
    };

    if task == Task::Classification {
        remap_binary_labels(&mut labels)?;
    }
    Dataset::new(PointSet::new(data, width - 1)?, labels, task)
}

fn remap_binary_labels(labels: &mut [f64]) -> Result<()> {
    let mut seen: Vec<f64> = Vec::with_capacity(2);
    for (i, &y) in labels.iter().enumerate() {
        if !seen.contains(&y) {
            if seen.len() == 2 {
                return Err(Error::Parse {
                    row: i + 1,
                    msg: format!("third distinct class label {y}"),
                });
            }
            seen.push(y);
        }
    }
    match seen.as_slice() {
        [a, b] => {
            let lo = a.min(*b);
            for y in labels.iter_mut() {
                *y = if *y == lo { -1.0 } else { 1.0 };
            }
            Ok(())
        }
        [a] if *a == 1.0 || *a == -1.0 => Ok(()),
        [a] => Err(Error::Parse {
            row: 1,
            msg: format!("single class label {a} is not -1 or +1"),
        }),
        _ => Err(Error::NoRows),
    }
}

/// Hold-out protocol: fraction of points reserved for testing, number of
/// repetitions and the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub repetitions: usize,
    pub seed: u64,
}

impl SplitSpec {
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::invalid("test_fraction must lie in (0, 1)"));
        }
        if self.repetitions == 0 {
            return Err(Error::invalid("repetitions must be positive"));
        }
        let n_test = self.test_size(n);
        if n_test < 1 || n_test >= n {
            return Err(Error::invalid(format!(
                "test_fraction {} leaves an empty train or test set for n = {n}",
                self.test_fraction
            )));
        }
        Ok(())
    }

    pub fn test_size(&self, n: usize) -> usize {
        (self.test_fraction * n as f64).floor() as usize
    }
}

/// Shuffled `(train, test)` index lists for repetition `rep`.
///
/// The permutation is a Fisher–Yates shuffle driven by a ChaCha8 stream
/// seeded from `(spec.seed, rep)`; the first `⌊test_fraction·n⌋` shuffled
/// indices form the test set.
pub fn split_indices(n: usize, spec: &SplitSpec, rep: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    spec.validate(n)?;
    if rep >= spec.repetitions {
        return Err(Error::invalid(format!(
            "repetition {rep} out of range 0..{}",
            spec.repetitions
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rng::prng(spec.seed, &[0x5711_7000, rep as u64]);
    order.shuffle(&mut rng);
    let train = order.split_off(spec.test_size(n));
    Ok((train, order))
}

pub fn train_test_split(ds: &Dataset, spec: &SplitSpec, rep: usize) -> Result<(Dataset, Dataset)> {
    let (train, test) = split_indices(ds.len(), spec, rep)?;
    Ok((ds.subset(&train), ds.subset(&test)))
}

/// Error of the best constant predictor: population standard deviation of
/// the labels for regression, smaller-class fraction for classification.
pub fn naive_error(ds: &Dataset) -> f64 {
    let n = ds.len() as f64;
    match ds.task() {
        Task::Regression => {
            let (_, std) = mean_std(ds.labels().iter().copied());
            std
        }
        Task::Classification => {
            let pos = ds.labels().iter().filter(|&&y| y > 0.0).count() as f64;
            pos.min(n - pos) / n
        }
    }
}

/// Mean and population standard deviation (divisor `n`).
pub fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let (count, sum) = values.clone().fold((0usize, 0.0), |(c, s), v| (c + 1, s + v));
    if count == 0 {
        return (0.0, 0.0);
    }
    let mean = sum / count as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / count as f64;
    (mean, var.sqrt())
}

/// Affine transform recorded by [`standardize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
    /// Columns with zero variance; they are passed through unchanged.
    pub constant: Vec<bool>,
    pub label_mean: f64,
    pub label_scale: f64,
}

impl Standardizer {
    /// Estimates column statistics on `ds`. Labels are only standardized
    /// for regression; classification labels map through the identity.
    pub fn fit(ds: &Dataset) -> Result<Self> {
        if ds.len() < 2 {
            return Err(Error::InsufficientPoints {
                needed: 2,
                got: ds.len(),
            });
        }
        let x = ds.features();
        let mut feature_mean = Vec::with_capacity(x.dim());
        let mut feature_scale = Vec::with_capacity(x.dim());
        let mut constant = Vec::with_capacity(x.dim());
        for c in 0..x.dim() {
            let (mean, std) = mean_std(x.rows().map(|r| r[c]));
            let flat = std == 0.0;
            constant.push(flat);
            feature_mean.push(if flat { 0.0 } else { mean });
            feature_scale.push(if flat { 1.0 } else { std });
        }
        let (label_mean, label_scale) = match ds.task() {
            Task::Regression => {
                let (m, s) = mean_std(ds.labels().iter().copied());
                (m, if s == 0.0 { 1.0 } else { s })
            }
            Task::Classification => (0.0, 1.0),
        };
        Ok(Self {
            feature_mean,
            feature_scale,
            constant,
            label_mean,
            label_scale,
        })
    }

    pub fn transform_features(&self, x: &PointSet) -> Result<PointSet> {
        if x.dim() != self.feature_mean.len() {
            return Err(Error::invalid("feature dimension mismatch"));
        }
        let mut out = x.clone();
        for i in 0..out.len() {
            for (c, v) in out.row_mut(i).iter_mut().enumerate() {
                *v = (*v - self.feature_mean[c]) / self.feature_scale[c];
            }
        }
        Ok(out)
    }

    pub fn transform_labels(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .map(|v| (v - self.label_mean) / self.label_scale)
            .collect()
    }

    pub fn inverse_labels(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .map(|v| v * self.label_scale + self.label_mean)
            .collect()
    }

    pub fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        Dataset::new(
            self.transform_features(ds.features())?,
            self.transform_labels(ds.labels()),
            ds.task(),
        )
    }
}

/// Shifts and scales every column (and regression labels) to mean 0 and
/// population standard deviation 1.
pub fn standardize(ds: &Dataset) -> Result<(Dataset, Standardizer)> {
    let s = Standardizer::fit(ds)?;
    Ok((s.apply(ds)?, s))
}

/// Maps every feature column affinely onto `[-1, 1]`; constant columns
/// become 0. Labels are untouched.
pub fn scale_to_unit_box(ds: &Dataset) -> Result<Dataset> {
    let x = ds.features();
    let d = x.dim();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for r in x.rows() {
        for c in 0..d {
            lo[c] = lo[c].min(r[c]);
            hi[c] = hi[c].max(r[c]);
        }
    }
    let mut out = x.clone();
    for i in 0..out.len() {
        for (c, v) in out.row_mut(i).iter_mut().enumerate() {
            let width = hi[c] - lo[c];
            *v = if width > 0.0 {
                2.0 * (*v - lo[c]) / width - 1.0
            } else {
                0.0
            };
        }
    }
    ds.with_features(out)
}
