//! Exact k-nearest-neighbor classification with fully deterministic
//! tie-breaking.
//!
//! Distance ties go to the lower training-record index, vote ties to the
//! lower class index. Normalization (when enabled) is fitted on the
//! training set only and evaluation points are clipped into `[0, 1]`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{FeatureVector, LabeledDataset};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KnnError {
    #[error("k must be a positive odd integer, got {0}")]
    InvalidK(usize),
    #[error("k = {k} exceeds the training set size {n}")]
    KTooLarge { k: usize, n: usize },
    #[error("dimension mismatch: training data has {expected} features, query has {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("class count mismatch: {0} vs {1}")]
    ClassMismatch(usize, usize),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Euclidean,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    None,
    #[default]
    MinmaxPerFeature,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct KnnConfig {
    pub k: usize,
    pub metric: Metric,
    pub normalization: Normalization,
}

impl Default for KnnConfig {
    fn default() -> Self {
        KnnConfig {
            k: 1,
            metric: Metric::Euclidean,
            normalization: Normalization::MinmaxPerFeature,
        }
    }
}

impl KnnConfig {
    pub fn with_k(k: usize) -> Self {
        KnnConfig {
            k,
            ..Default::default()
        }
    }

    pub fn validate(&self, n: usize) -> Result<(), KnnError> {
        if self.k == 0 || self.k % 2 == 0 {
            return Err(KnnError::InvalidK(self.k));
        }
        if self.k > n {
            return Err(KnnError::KTooLarge { k: self.k, n });
        }
        Ok(())
    }
}

/// Per-feature affine map into `[0, 1]` fitted on training data.
#[derive(Clone, Debug, PartialEq)]
pub struct MinMaxScaler {
    min: Vec<f64>,
    span: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>, dim: usize) -> Self {
        let mut min = vec![f64::INFINITY; dim];
        let mut max = vec![f64::NEG_INFINITY; dim];
        for row in rows {
            for (j, &v) in row.iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        let span = min.iter().zip(&max).map(|(lo, hi)| hi - lo).collect();
        MinMaxScaler { min, span }
    }

    /// Constant columns map to 0.
    pub fn transform_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(x.iter().enumerate().map(|(j, &v)| {
            if self.span[j] > 0.0 {
                ((v - self.min[j]) / self.span[j]).clamp(0.0, 1.0)
            } else {
                0.0
            }
        }));
    }
}

/// A training set prepared for repeated queries.
#[derive(Clone, Debug)]
pub struct KnnClassifier {
    points: Vec<Vec<f64>>,
    labels: Vec<usize>,
    class_count: usize,
    scaler: Option<MinMaxScaler>,
    k: usize,
    dim: usize,
}

impl KnnClassifier {
    pub fn fit(train: &LabeledDataset, cfg: &KnnConfig) -> Result<Self, KnnError> {
        if train.is_empty() {
            return Err(KnnError::Empty("training set"));
        }
        Self::from_rows(
            train.features().iter().map(|f| &f[..]),
            train.labels(),
            train.class_count(),
            train.dim(),
            cfg,
        )
    }

    /// Fits from raw rows. `rows` must yield exactly `labels.len()` slices of length `dim`.
    pub fn from_rows<'a>(
        rows: impl Iterator<Item = &'a [f64]> + Clone,
        labels: &[usize],
        class_count: usize,
        dim: usize,
        cfg: &KnnConfig,
    ) -> Result<Self, KnnError> {
        cfg.validate(labels.len())?;
        let scaler = match cfg.normalization {
            Normalization::None => None,
            Normalization::MinmaxPerFeature => Some(MinMaxScaler::fit(rows.clone(), dim)),
        };
        let points = rows
            .map(|r| match &scaler {
                Some(s) => {
                    let mut out = Vec::with_capacity(dim);
                    s.transform_into(r, &mut out);
                    out
                }
                None => r.to_vec(),
            })
            .collect();
        Ok(KnnClassifier {
            points,
            labels: labels.to_vec(),
            class_count,
            scaler,
            k: cfg.k,
            dim,
        })
    }

    pub fn predict(&self, query: &[f64]) -> Result<usize, KnnError> {
        if query.len() != self.dim {
            return Err(KnnError::DimensionMismatch {
                expected: self.dim,
                found: query.len(),
            });
        }
        let mut buf = Vec::new();
        let q: &[f64] = match &self.scaler {
            Some(s) => {
                s.transform_into(query, &mut buf);
                &buf
            }
            None => query,
        };
        Ok(self.predict_prepared(q))
    }

    fn predict_prepared(&self, q: &[f64]) -> usize {
        if self.k == 1 {
            // First strictly smaller distance wins, so equal distances keep the lower index.
            let mut best = (f64::INFINITY, 0usize);
            for (i, p) in self.points.iter().enumerate() {
                let d = squared_distance(p, q);
                if d < best.0 {
                    best = (d, i);
                }
            }
            return self.labels[best.1];
        }
        let mut order: Vec<(f64, usize)> = self
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| (squared_distance(p, q), i))
            .collect();
        let by_dist_then_index =
            |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if self.k < order.len() {
            order.select_nth_unstable_by(self.k - 1, by_dist_then_index);
        }
        let mut votes = vec![0usize; self.class_count];
        for &(_, i) in &order[..self.k] {
            votes[self.labels[i]] += 1;
        }
        majority(&votes)
    }
}

/// Index of the largest count; ties go to the lowest index.
pub(crate) fn majority(votes: &[usize]) -> usize {
    let mut best = 0;
    for (c, &v) in votes.iter().enumerate() {
        if v > votes[best] {
            best = c;
        }
    }
    best
}

#[inline]
fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Majority label among the `k` nearest training records.
pub fn knn_predict(
    train: &LabeledDataset,
    query: &FeatureVector,
    cfg: &KnnConfig,
) -> Result<usize, KnnError> {
    KnnClassifier::fit(train, cfg)?.predict(query)
}

/// Mean 0-1 loss of the kNN classifier over `eval`.
pub fn holdout_error(
    train: &LabeledDataset,
    eval: &LabeledDataset,
    cfg: &KnnConfig,
) -> Result<f64, KnnError> {
    if eval.is_empty() {
        return Err(KnnError::Empty("evaluation set"));
    }
    if train.class_count() != eval.class_count() {
        return Err(KnnError::ClassMismatch(train.class_count(), eval.class_count()));
    }
    let clf = KnnClassifier::fit(train, cfg)?;
    let mut wrong = 0usize;
    for (x, &y) in eval.features().iter().zip(eval.labels()) {
        if clf.predict(x)? != y {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / eval.len() as f64)
}
