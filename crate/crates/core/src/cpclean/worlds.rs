//! Possible-world enumeration.
//!
//! One pass over the product space yields the per-query label tallies and,
//! for every dirty cell and each of its candidates, the tallies restricted
//! to the worlds where that cell takes that candidate. The restricted
//! tallies are exactly what conditioning on a repair would produce, so
//! conditional entropies need no second enumeration.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CellId, CleanError, IncompleteDataset};
use crate::knn::{KnnClassifier, KnnConfig, KnnError};
use crate::model::FeatureVector;

/// Per-label counts of possible worlds for one query point.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelTally {
    pub counts: Vec<u64>,
    pub world_total: u64,
}

impl LabelTally {
    /// Label predicted in every world, if any.
    pub fn certain_label(&self) -> Option<usize> {
        self.counts.iter().position(|&c| c == self.world_total)
    }

    /// Shannon entropy (bits) of `counts / world_total`.
    pub fn entropy_bits(&self) -> f64 {
        let total = self.world_total as f64;
        let h: f64 = self
            .counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / total;
                -p * p.log2()
            })
            .sum();
        h + 0.0
    }
}

/// Answer to the checking query.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Certainty {
    Certain(usize),
    Uncertain,
}

impl From<&LabelTally> for Certainty {
    fn from(t: &LabelTally) -> Self {
        t.certain_label().map_or(Certainty::Uncertain, Certainty::Certain)
    }
}

/// Mean per-query entropy of a batch of tallies.
pub(crate) fn mean_entropy(tallies: &[LabelTally]) -> f64 {
    tallies.iter().map(LabelTally::entropy_bits).sum::<f64>() / tallies.len() as f64
}

pub(crate) struct WorldTallies {
    pub overall: Vec<LabelTally>,
    /// Dirty cells in ascending order, with one tally batch per candidate.
    pub by_cell: Vec<(CellId, Vec<Vec<LabelTally>>)>,
}

pub(crate) fn enumerate(
    data: &IncompleteDataset,
    queries: &[FeatureVector],
    cfg: &KnnConfig,
    cap: u64,
    with_cells: bool,
) -> Result<WorldTallies, CleanError> {
    let total = data.world_count()?;
    if total > cap {
        return Err(CleanError::WorldCapExceeded { worlds: total, cap });
    }
    cfg.validate(data.len())?;
    let dim = data.dim();
    if let Some(q) = queries.iter().find(|q| q.dim() != dim) {
        return Err(KnnError::DimensionMismatch {
            expected: dim,
            found: q.dim(),
        }
        .into());
    }

    let classes = data.classes().len();
    let nq = queries.len();
    let sets = data.candidate_sets();
    let dirty: Vec<usize> = (0..sets.len()).filter(|&i| sets[i].len() >= 2).collect();
    let radices: Vec<u64> = dirty.iter().map(|&i| sets[i].len() as u64).collect();

    // Flat accumulator: overall block, then one block per (dirty cell, candidate).
    let block = nq * classes;
    let mut bases = Vec::with_capacity(dirty.len());
    let mut len = block;
    if with_cells {
        for &i in &dirty {
            bases.push(len);
            len += sets[i].len() * block;
        }
    }

    let threads = rayon::current_num_threads() as u64;
    let chunk = (total / (threads * 4)).max(64);
    let chunks = total.div_ceil(chunk);

    let acc = (0..chunks)
        .into_par_iter()
        .map(|ci| -> Result<Vec<u64>, CleanError> {
            let start = ci * chunk;
            let end = (start + chunk).min(total);
            let mut acc = vec![0u64; len];
            let mut digits: Vec<usize> = {
                let mut rest = start;
                radices
                    .iter()
                    .map(|&r| {
                        let d = rest % r;
                        rest /= r;
                        d as usize
                    })
                    .collect()
            };
            let mut rows = data.rows().to_vec();
            for (slot, &i) in dirty.iter().enumerate() {
                let cell = data.cells()[i];
                rows[cell.row][cell.col] = sets[i][digits[slot]];
            }
            for _ in start..end {
                let clf = KnnClassifier::from_rows(
                    rows.iter().map(Vec::as_slice),
                    data.labels(),
                    classes,
                    dim,
                    cfg,
                )?;
                for (qi, q) in queries.iter().enumerate() {
                    let y = clf.predict(q)?;
                    acc[qi * classes + y] += 1;
                    if with_cells {
                        for (slot, &d) in digits.iter().enumerate() {
                            acc[bases[slot] + d * block + qi * classes + y] += 1;
                        }
                    }
                }
                // Odometer step, least significant digit first.
                for (slot, &i) in dirty.iter().enumerate() {
                    let cell = data.cells()[i];
                    digits[slot] += 1;
                    if digits[slot] < sets[i].len() {
                        rows[cell.row][cell.col] = sets[i][digits[slot]];
                        break;
                    }
                    digits[slot] = 0;
                    rows[cell.row][cell.col] = sets[i][0];
                }
            }
            Ok(acc)
        })
        .try_reduce(
            || vec![0u64; len],
            |mut a, b| {
                a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
                Ok(a)
            },
        )?;

    let batch = |offset: usize, world_total: u64| -> Vec<LabelTally> {
        (0..nq)
            .map(|qi| LabelTally {
                counts: acc[offset + qi * classes..offset + (qi + 1) * classes].to_vec(),
                world_total,
            })
            .collect()
    };
    let overall = batch(0, total);
    let by_cell = if with_cells {
        dirty
            .iter()
            .zip(&bases)
            .map(|(&i, &base)| {
                let k = sets[i].len() as u64;
                let per = (0..sets[i].len())
                    .map(|v| batch(base + v * block, total / k))
                    .collect();
                (data.cells()[i], per)
            })
            .collect()
    } else {
        Vec::new()
    };
    Ok(WorldTallies { overall, by_cell })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_of_simple_tallies() {
        let fair = LabelTally { counts: vec![1, 1], world_total: 2 };
        assert_eq!(fair.entropy_bits(), 1.0);
        let certain = LabelTally { counts: vec![0, 4, 0], world_total: 4 };
        assert_eq!(certain.entropy_bits().to_bits(), 0.0f64.to_bits());
        assert_eq!(Certainty::from(&certain), Certainty::Certain(1));
        let skewed = LabelTally { counts: vec![3, 1], world_total: 4 };
        assert_eq!(Certainty::from(&skewed), Certainty::Uncertain);
        let expected = -(0.75f64 * 0.75f64.log2() + 0.25 * 0.25f64.log2());
        assert!((skewed.entropy_bits() - expected).abs() < 1e-15);
    }
}
