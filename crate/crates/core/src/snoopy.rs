//! Feasibility study: bounds on the Bayes error rate from 1-NN errors over
//! one or more precomputed feature embeddings.
//!
//! The 1-NN holdout error `err` bounds the Bayes error `R*` through the
//! asymptotic nearest-neighbor relation
//! `err <= R* (2 - C R* / (C - 1))`, which inverts to
//! `R* >= ((C-1)/C) (1 - sqrt(1 - C err / (C-1)))`. The upper bound is `err`
//! itself. Estimates are asymptotic; no finite-sample correction is applied.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::knn::{holdout_error, KnnConfig, KnnError};
use crate::model::{parse_cell, read_table, DataError, FeatureVector, LabeledDataset, Seed};

/// Name reported for the bound inversion in output metadata.
pub const INVERSION: &str = "cover-hart-1nn";

/// Reserved embedding name that leaves features untouched.
pub const IDENTITY: &str = "identity";

#[derive(Debug, Error)]
pub enum SnoopyError {
    #[error("embedding `{name}` has {found} rows, expected {expected} (train rows then validation rows)")]
    Misaligned {
        name: String,
        expected: usize,
        found: usize,
    },
    #[error("embedding `{name}` has dimension {found}, expected {expected}")]
    WrongDimension {
        name: String,
        expected: usize,
        found: usize,
    },
    #[error("duplicate embedding name `{0}`")]
    DuplicateEmbedding(String),
    #[error("bad embedding spec `{0}` (expected `identity` or NAME=PATH)")]
    BadSpec(String),
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("noise rate {rho} is invalid: {reason}")]
    InvalidRho { rho: f64, reason: String },
    #[error("train and validation disagree on {0}")]
    SplitMismatch(&'static str),
    #[error(transparent)]
    Knn(#[from] KnnError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Where to find an embedding table: `identity`, or a named CSV file whose
/// rows cover the training split followed by the validation split.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingSpec {
    pub name: String,
    pub source: Option<PathBuf>,
    pub dimension: Option<usize>,
}

impl EmbeddingSpec {
    pub fn identity() -> Self {
        EmbeddingSpec {
            name: IDENTITY.to_string(),
            source: None,
            dimension: None,
        }
    }

    /// Parses `identity` or `NAME=PATH`.
    pub fn parse(spec: &str) -> Result<Self, SnoopyError> {
        if spec == IDENTITY {
            return Ok(Self::identity());
        }
        match spec.split_once('=') {
            Some((name, path)) if !name.is_empty() && !path.is_empty() && name != IDENTITY => {
                Ok(EmbeddingSpec {
                    name: name.to_string(),
                    source: Some(PathBuf::from(path)),
                    dimension: None,
                })
            }
            _ => Err(SnoopyError::BadSpec(spec.to_string())),
        }
    }

    pub fn load(&self) -> Result<Embedding, SnoopyError> {
        let Some(path) = &self.source else {
            return Ok(Embedding::Identity);
        };
        let rows = load_embedding_table(path)?;
        let found = rows.first().map_or(0, |r| r.dim());
        if let Some(expected) = self.dimension {
            if expected != found {
                return Err(SnoopyError::WrongDimension {
                    name: self.name.clone(),
                    expected,
                    found,
                });
            }
        }
        Ok(Embedding::Table {
            name: self.name.clone(),
            rows,
        })
    }
}

/// Reads an embedding CSV with header `e0,...,e{m-1}`.
pub fn load_embedding_table(path: &Path) -> Result<Vec<FeatureVector>, DataError> {
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    parse_embedding_csv(&text)
}

pub(crate) fn parse_embedding_csv(text: &str) -> Result<Vec<FeatureVector>, DataError> {
    let table = read_table(text)?;
    if table.rows.is_empty() {
        return Err(DataError::parse(2, "no embedding rows"));
    }
    table
        .rows
        .iter()
        .map(|(line, row)| {
            let values = row
                .iter()
                .enumerate()
                .map(|(j, c)| parse_cell(*line, j, c))
                .collect::<Result<Vec<_>, _>>()?;
            FeatureVector::new(values)
        })
        .collect()
}

/// A loaded feature transformation.
#[derive(Clone, Debug, PartialEq)]
pub enum Embedding {
    Identity,
    Table { name: String, rows: Vec<FeatureVector> },
}

impl Embedding {
    pub fn name(&self) -> &str {
        match self {
            Embedding::Identity => IDENTITY,
            Embedding::Table { name, .. } => name,
        }
    }

    /// Maps both splits into the embedding space.
    pub fn apply(
        &self,
        train: &LabeledDataset,
        validation: &LabeledDataset,
    ) -> Result<(LabeledDataset, LabeledDataset), SnoopyError> {
        match self {
            Embedding::Identity => Ok((train.clone(), validation.clone())),
            Embedding::Table { name, rows } => {
                let expected = train.len() + validation.len();
                if rows.len() != expected {
                    return Err(SnoopyError::Misaligned {
                        name: name.clone(),
                        expected,
                        found: rows.len(),
                    });
                }
                let (head, tail) = rows.split_at(train.len());
                Ok((train.with_features(head.to_vec())?, validation.with_features(tail.to_vec())?))
            }
        }
    }
}

/// Bounds on the Bayes error rate under one embedding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BerEstimate {
    pub embedding: String,
    pub knn_error: f64,
    pub ber_lower: f64,
    pub ber_upper: f64,
    pub max_accuracy: f64,
}

/// `(lower, upper)` Bayes error bounds from a 1-NN error rate over `classes` classes.
pub fn ber_bounds_from_knn_error(err: f64, classes: usize) -> (f64, f64) {
    assert!(classes >= 2, "need at least two classes");
    let c = classes as f64;
    let ratio = (c - 1.0) / c;
    let lower = ratio * (1.0 - (1.0 - err / ratio).max(0.0).sqrt());
    (lower.clamp(0.0, 1.0), err.clamp(0.0, 1.0))
}

fn estimate_for(
    embedding: &Embedding,
    train: &LabeledDataset,
    validation: &LabeledDataset,
    cfg: &KnnConfig,
) -> Result<BerEstimate, SnoopyError> {
    let (tr, va) = embedding.apply(train, validation)?;
    let cfg = KnnConfig { k: 1, ..*cfg };
    let err = holdout_error(&tr, &va, &cfg)?;
    let (lower, upper) = ber_bounds_from_knn_error(err, train.class_count());
    Ok(BerEstimate {
        embedding: embedding.name().to_string(),
        knn_error: err,
        ber_lower: lower,
        ber_upper: upper,
        max_accuracy: 1.0 - lower,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Feasibility {
    /// One estimate per embedding, sorted by embedding name.
    pub estimates: Vec<BerEstimate>,
    /// Estimate with the smallest lower bound (then upper bound, then name).
    pub overall: BerEstimate,
}

fn check_splits(train: &LabeledDataset, validation: &LabeledDataset) -> Result<(), SnoopyError> {
    if train.is_empty() {
        return Err(SnoopyError::Empty("training split"));
    }
    if validation.is_empty() {
        return Err(SnoopyError::Empty("validation split"));
    }
    if train.classes() != validation.classes() {
        return Err(SnoopyError::SplitMismatch("class table"));
    }
    if train.dim() != validation.dim() {
        return Err(SnoopyError::SplitMismatch("feature dimension"));
    }
    Ok(())
}

/// Runs the 1-NN estimator under every embedding. `cfg.k` is ignored (always 1).
pub fn feasibility(
    train: &LabeledDataset,
    validation: &LabeledDataset,
    embeddings: &[Embedding],
    cfg: &KnnConfig,
) -> Result<Feasibility, SnoopyError> {
    check_splits(train, validation)?;
    if embeddings.is_empty() {
        return Err(SnoopyError::Empty("embedding list"));
    }
    let mut names = BTreeSet::new();
    for e in embeddings {
        if !names.insert(e.name()) {
            return Err(SnoopyError::DuplicateEmbedding(e.name().to_string()));
        }
    }
    let mut estimates = embeddings
        .par_iter()
        .map(|e| estimate_for(e, train, validation, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    estimates.sort_by(|a, b| a.embedding.cmp(&b.embedding));
    let overall = estimates
        .iter()
        .min_by(|a, b| {
            a.ber_lower
                .total_cmp(&b.ber_lower)
                .then(a.ber_upper.total_cmp(&b.ber_upper))
                .then(a.embedding.cmp(&b.embedding))
        })
        .cloned()
        .expect("at least one embedding");
    Ok(Feasibility { estimates, overall })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub rho: f64,
    pub seed: Seed,
}

/// Replaces each label, independently with probability `rho`, by one drawn
/// uniformly from the other `C - 1` classes. Features are untouched.
pub fn inject_label_noise(
    data: &LabeledDataset,
    cfg: &NoiseConfig,
) -> Result<LabeledDataset, SnoopyError> {
    if !(0.0..=1.0).contains(&cfg.rho) {
        return Err(SnoopyError::InvalidRho {
            rho: cfg.rho,
            reason: "must lie in [0, 1]".into(),
        });
    }
    let classes = data.class_count();
    let mut rng = cfg.seed.rng();
    let labels = data
        .labels()
        .iter()
        .map(|&y| {
            let flip = rng.random::<f64>() < cfg.rho;
            let other = rng.random_range(0..classes - 1);
            if flip {
                if other >= y {
                    other + 1
                } else {
                    other
                }
            } else {
                y
            }
        })
        .collect();
    Ok(data.with_labels(labels)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub rho: f64,
    pub estimate: BerEstimate,
}

/// Injects each noise level into both splits and re-runs the estimator on
/// one embedding. The same noise seeds are reused across levels.
pub fn noise_sweep(
    train: &LabeledDataset,
    validation: &LabeledDataset,
    embedding: &Embedding,
    rhos: &[f64],
    cfg: &KnnConfig,
    seed: Seed,
) -> Result<Vec<SweepPoint>, SnoopyError> {
    check_splits(train, validation)?;
    let c = train.class_count() as f64;
    let limit = (c - 1.0) / c;
    for (i, &rho) in rhos.iter().enumerate() {
        if !(0.0..limit).contains(&rho) {
            return Err(SnoopyError::InvalidRho {
                rho,
                reason: format!("must lie in [0, {limit})"),
            });
        }
        if i > 0 && rho < rhos[i - 1] {
            return Err(SnoopyError::InvalidRho {
                rho,
                reason: "noise levels must be sorted ascending".into(),
            });
        }
    }
    rhos.par_iter()
        .map(|&rho| {
            let tr = inject_label_noise(train, &NoiseConfig { rho, seed: seed.derive(0) })?;
            let va = inject_label_noise(validation, &NoiseConfig { rho, seed: seed.derive(1) })?;
            let estimate = estimate_for(embedding, &tr, &va, cfg)?;
            Ok(SweepPoint { rho, estimate })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LabelSpace;
    use crate::synth;

    #[test]
    fn closed_form_bound_points() {
        assert_eq!(ber_bounds_from_knn_error(0.0, 2), (0.0, 0.0));
        assert_eq!(ber_bounds_from_knn_error(0.0, 7), (0.0, 0.0));
        let (lo, hi) = ber_bounds_from_knn_error(0.5, 2);
        assert_eq!((lo, hi), (0.5, 0.5));
        let (lo, hi) = ber_bounds_from_knn_error(0.18, 2);
        assert!((lo - 0.1).abs() < 1e-12, "{lo}");
        assert_eq!(hi, 0.18);
    }

    #[test]
    fn bounds_are_ordered_and_monotone() {
        for c in 2..6 {
            let mut prev = (0.0, 0.0);
            for i in 0..=1000 {
                let err = i as f64 / 1000.0;
                let (lo, hi) = ber_bounds_from_knn_error(err, c);
                assert!(0.0 <= lo && lo <= hi && hi <= 1.0, "c={c} err={err}");
                assert!(lo >= prev.0 && hi >= prev.1);
                prev = (lo, hi);
            }
        }
    }

    #[test]
    fn separable_identity_is_zero() {
        let train = synth::gaussian_blobs(200, 2, 2, 8.0, Seed(1));
        let val = synth::gaussian_blobs(200, 2, 2, 8.0, Seed(2));
        let f = feasibility(&train, &val, &[Embedding::Identity], &KnnConfig::default()).unwrap();
        assert_eq!(f.overall.ber_lower, 0.0);
        assert_eq!(f.overall.ber_upper, 0.0);
        assert_eq!(f.overall.max_accuracy, 1.0);
    }

    #[test]
    fn collapsed_embedding_loses_to_identity() {
        let train = synth::gaussian_blobs(60, 2, 2, 8.0, Seed(3));
        let val = synth::gaussian_blobs(40, 2, 2, 8.0, Seed(4));
        let flat = Embedding::Table {
            name: "flat".into(),
            rows: vec![FeatureVector::new(vec![0.5]).unwrap(); 100],
        };
        let f = feasibility(&train, &val, &[flat, Embedding::Identity], &KnnConfig::default())
            .unwrap();
        assert_eq!(f.estimates.iter().map(|e| e.embedding.as_str()).collect::<Vec<_>>(), ["flat", "identity"]);
        // All distances tie, so every validation point gets training record 0's label.
        let y0 = train.labels()[0];
        let expected = val.labels().iter().filter(|&&y| y != y0).count() as f64 / 40.0;
        assert_eq!(f.estimates[0].knn_error, expected);
        assert_eq!(f.overall.embedding, "identity");
    }

    #[test]
    fn duplicated_points_give_half() {
        let classes = LabelSpace::indexed(2).unwrap();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..10 {
            for y in [0, 1] {
                xs.push(FeatureVector::new(vec![i as f64 * 10.0]).unwrap());
                ys.push(y);
            }
        }
        let d = LabeledDataset::new(classes, xs, ys).unwrap();
        let f = feasibility(&d, &d, &[Embedding::Identity], &KnnConfig::default()).unwrap();
        assert_eq!(f.overall.knn_error, 0.5);
        assert_eq!((f.overall.ber_lower, f.overall.ber_upper), (0.5, 0.5));
    }

    #[test]
    fn misaligned_embedding_is_an_error() {
        let train = synth::gaussian_blobs(10, 2, 2, 8.0, Seed(3));
        let bad = Embedding::Table {
            name: "short".into(),
            rows: vec![FeatureVector::new(vec![0.0]).unwrap(); 19],
        };
        assert!(matches!(
            feasibility(&train, &train, &[bad], &KnnConfig::default()),
            Err(SnoopyError::Misaligned { expected: 20, found: 19, .. })
        ));
    }

    #[test]
    fn noise_extremes() {
        let d = synth::gaussian_blobs(100, 2, 2, 8.0, Seed(5));
        let same = inject_label_noise(&d, &NoiseConfig { rho: 0.0, seed: Seed(9) }).unwrap();
        assert_eq!(same, d);
        let flipped = inject_label_noise(&d, &NoiseConfig { rho: 1.0, seed: Seed(9) }).unwrap();
        assert!(flipped.labels().iter().zip(d.labels()).all(|(a, b)| a != b));
        assert_eq!(flipped.features(), d.features());
    }

    #[test]
    fn noise_rate_concentrates() {
        let d = synth::gaussian_blobs(10_000, 2, 1, 1.0, Seed(6));
        let noisy = inject_label_noise(&d, &NoiseConfig { rho: 0.1, seed: Seed(7) }).unwrap();
        let flipped = noisy.labels().iter().zip(d.labels()).filter(|(a, b)| a != b).count();
        let frac = flipped as f64 / 10_000.0;
        assert!((frac - 0.1).abs() <= 0.01, "{frac}");
    }

    #[test]
    fn three_class_noise_avoids_original_label() {
        let d = synth::gaussian_blobs(3000, 3, 1, 1.0, Seed(6));
        let noisy = inject_label_noise(&d, &NoiseConfig { rho: 1.0, seed: Seed(8) }).unwrap();
        let mut seen = [[0usize; 3]; 3];
        for (&a, &b) in d.labels().iter().zip(noisy.labels()) {
            seen[a][b] += 1;
        }
        for (a, row) in seen.iter().enumerate() {
            assert_eq!(row[a], 0);
            let others: Vec<usize> = (0..3).filter(|&b| b != a).map(|b| row[b]).collect();
            assert!(others.iter().all(|&n| n > 400), "{seen:?}");
        }
    }

    #[test]
    fn sweep_validates_rhos_and_matches_plain_run_at_zero() {
        let tr = synth::gaussian_blobs(100, 2, 2, 8.0, Seed(10));
        let va = synth::gaussian_blobs(100, 2, 2, 8.0, Seed(11));
        let cfg = KnnConfig::default();
        assert!(noise_sweep(&tr, &va, &Embedding::Identity, &[0.2, 0.1], &cfg, Seed(1)).is_err());
        assert!(noise_sweep(&tr, &va, &Embedding::Identity, &[0.5], &cfg, Seed(1)).is_err());
        let sweep = noise_sweep(&tr, &va, &Embedding::Identity, &[0.0, 0.1], &cfg, Seed(1)).unwrap();
        let plain = feasibility(&tr, &va, &[Embedding::Identity], &cfg).unwrap();
        assert_eq!(sweep[0].estimate, plain.overall);
    }

    #[test]
    fn embedding_specs_parse() {
        assert_eq!(EmbeddingSpec::parse("identity").unwrap(), EmbeddingSpec::identity());
        let s = EmbeddingSpec::parse("resnet=/tmp/r.csv").unwrap();
        assert_eq!(s.name, "resnet");
        assert!(EmbeddingSpec::parse("nopath").is_err());
        assert!(EmbeddingSpec::parse("identity=/x").is_err());
    }
}
