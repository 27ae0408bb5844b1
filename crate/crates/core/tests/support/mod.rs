//! Brute-force reference implementations for possible-world queries.
//! Deliberately naive: every world is materialized and classified with a
//! from-scratch kNN (full sort, explicit min-max scaling).

#![allow(dead_code)]

use std::collections::BTreeMap;

use dqops_core::cpclean::{CellId, IncompleteDataset, IncompleteTable};
use dqops_core::knn::{KnnConfig, Normalization};
use dqops_core::{FeatureVector, LabelSpace, LabeledDataset, Seed};
use rand::Rng;

pub struct Instance {
    pub data: IncompleteDataset,
    pub validation: Vec<FeatureVector>,
    pub cfg: KnnConfig,
}

/// Random instance: n <= 12 records, <= 4 dirty cells of <= 4 candidates,
/// C <= 3, <= 8 validation points, values on a coarse grid so that distance
/// ties are common.
pub fn random_instance(seed: u64) -> Instance {
    let mut rng = Seed(seed).rng();
    let classes = rng.random_range(2..=3usize);
    let n = rng.random_range(3..=12usize);
    let dim = rng.random_range(1..=3usize);
    let grid = |rng: &mut rand_chacha::ChaCha8Rng| rng.random_range(0..=6) as f64 * 0.5;
    let mut rows: Vec<Vec<Option<f64>>> = (0..n).map(|_| (0..dim).map(|_| Some(grid(&mut rng))).collect()).collect();
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
    let missing = rng.random_range(0..=4usize);
    let mut candidates = BTreeMap::new();
    while candidates.len() < missing.min(n * dim) {
        let cell = CellId::new(rng.random_range(0..n), rng.random_range(0..dim));
        if candidates.contains_key(&cell) {
            continue;
        }
        // occasionally a singleton (clean) missing cell
        let size = if rng.random_bool(0.1) { 1 } else { rng.random_range(2..=4usize) };
        let mut set: Vec<f64> = Vec::new();
        while set.len() < size {
            let v = grid(&mut rng);
            if !set.contains(&v) {
                set.push(v);
            }
        }
        rows[cell.row][cell.col] = None;
        candidates.insert(cell, set);
    }
    let k = *[1usize, 1, 3, 5].iter().filter(|&&k| k <= n).nth(rng.random_range(0..3)).unwrap_or(&1);
    let normalization = if rng.random_bool(0.8) { Normalization::MinmaxPerFeature } else { Normalization::None };
    let validation = (0..rng.random_range(1..=8usize))
        .map(|_| FeatureVector::new((0..dim).map(|_| rng.random_range(-2..=8) as f64 * 0.5).collect()).unwrap())
        .collect();
    let table = IncompleteTable {
        classes: LabelSpace::indexed(classes).unwrap(),
        rows,
        labels,
    };
    Instance {
        data: IncompleteDataset::new(table, candidates).unwrap(),
        validation,
        cfg: KnnConfig { k, normalization, ..KnnConfig::default() },
    }
}

/// Plain kNN: scale, compute every distance, sort by (distance, index),
/// vote, lowest class wins ties.
pub fn oracle_knn(train: &LabeledDataset, cfg: &KnnConfig, query: &[f64]) -> usize {
    let dim = train.dim();
    let (mut lo, mut hi) = (vec![f64::INFINITY; dim], vec![f64::NEG_INFINITY; dim]);
    for f in train.features() {
        for j in 0..dim {
            lo[j] = lo[j].min(f[j]);
            hi[j] = hi[j].max(f[j]);
        }
    }
    let scale = |x: &[f64]| -> Vec<f64> {
        match cfg.normalization {
            Normalization::None => x.to_vec(),
            Normalization::MinmaxPerFeature => (0..dim)
                .map(|j| {
                    let span = hi[j] - lo[j];
                    if span > 0.0 {
                        ((x[j] - lo[j]) / span).clamp(0.0, 1.0)
                    } else {
                        0.0
                    }
                })
                .collect(),
        }
    };
    let q = scale(query);
    let mut dist: Vec<(f64, usize)> = train
        .features()
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let p = scale(f);
            (p.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum(), i)
        })
        .collect();
    dist.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let mut votes = vec![0usize; train.class_count()];
    for &(_, i) in &dist[..cfg.k] {
        votes[train.labels()[i]] += 1;
    }
    let top = *votes.iter().max().unwrap();
    votes.iter().position(|&v| v == top).unwrap()
}

pub fn entropy_bits(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.log2()
        })
        .sum()
}

pub struct OracleResult {
    /// `tallies[q][y]`: worlds predicting `y` for validation point `q`.
    pub tallies: Vec<Vec<u64>>,
    pub entropy: f64,
    /// Conditional entropy of every cell with two or more candidates.
    pub conditional: Vec<(CellId, f64)>,
}

/// Enumerates every world in odometer order.
pub fn enumerate(data: &IncompleteDataset, validation: &[FeatureVector], cfg: &KnnConfig) -> OracleResult {
    let cells = data.cells().to_vec();
    let sizes: Vec<usize> = cells.iter().map(|c| data.candidates(*c).unwrap().len()).collect();
    let classes = data.classes().len();
    let mut tallies = vec![vec![0u64; classes]; validation.len()];
    // per cell, per candidate index, per point, per class
    let mut by_cell: Vec<Vec<Vec<Vec<u64>>>> =
        sizes.iter().map(|&s| vec![vec![vec![0u64; classes]; validation.len()]; s]).collect();
    let mut choice = vec![0usize; cells.len()];
    loop {
        let world = data.world(&choice).unwrap();
        for (qi, q) in validation.iter().enumerate() {
            let y = oracle_knn(&world, cfg, q);
            tallies[qi][y] += 1;
            for (ci, &k) in choice.iter().enumerate() {
                by_cell[ci][k][qi][y] += 1;
            }
        }
        let mut i = 0;
        loop {
            if i == choice.len() {
                let entropy = mean_entropy(&tallies);
                let conditional = cells
                    .iter()
                    .zip(&by_cell)
                    .filter(|(_, per)| per.len() >= 2)
                    .map(|(c, per)| (*c, per.iter().map(|t| mean_entropy(t)).sum::<f64>() / per.len() as f64))
                    .collect();
                return OracleResult { tallies, entropy, conditional };
            }
            choice[i] += 1;
            if choice[i] < sizes[i] {
                break;
            }
            choice[i] = 0;
            i += 1;
        }
    }
}

fn mean_entropy(t: &[Vec<u64>]) -> f64 {
    t.iter().map(|c| entropy_bits(c)).sum::<f64>() / t.len() as f64
}

/// Writes `test.csv` (2-feature rows, labels alternating "0"/"1"),
/// `old.csv` and `new.csv` (one `prediction` column) such that the old model
/// is right on the first `old_correct` rows and the new one on the first
/// `new_correct`.
pub fn write_ci_fixture(dir: &std::path::Path, rows: usize, old_correct: usize, new_correct: usize) {
    let truth = |i: usize| i % 2;
    let mut test = String::from("f0,f1,label\n");
    for i in 0..rows {
        test += &format!("{}.0,{}.5,{}\n", i, i % 7, truth(i));
    }
    std::fs::write(dir.join("test.csv"), test).unwrap();
    for (name, correct) in [("old.csv", old_correct), ("new.csv", new_correct)] {
        let mut text = String::from("prediction\n");
        for i in 0..rows {
            let y = if i < correct { truth(i) } else { 1 - truth(i) };
            text += &format!("{y}\n");
        }
        std::fs::write(dir.join(name), text).unwrap();
    }
}
