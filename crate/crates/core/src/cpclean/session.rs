use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::worlds::{self, mean_entropy, Certainty, LabelTally};
use super::{CellId, CleanError, IncompleteDataset, DEFAULT_WORLD_CAP};
use crate::knn::{KnnConfig, KnnError};
use crate::model::{FeatureVector, Seed};

/// Conditional entropies closer than this are treated as tied.
const TIE_EPSILON: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepairRecord {
    pub cell: CellId,
    pub value: f64,
}

/// Metrics after a repair (or at session start).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionMetrics {
    pub world_count: u64,
    pub entropy: f64,
    pub certain_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub cell: CellId,
    pub candidates: Vec<f64>,
    pub conditional_entropy: f64,
}

/// Interactive cleaning state: the incomplete training data, an unlabeled
/// validation set, and the log of repairs applied so far.
///
/// Repairs mutate the session and must be serialized by the caller.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CleaningSession {
    data: IncompleteDataset,
    validation: Vec<FeatureVector>,
    cfg: KnnConfig,
    world_cap: u64,
    log: Vec<RepairRecord>,
    /// Prediction entropy at creation, then after every repair.
    entropy_trace: Vec<f64>,
}

impl CleaningSession {
    pub fn new(
        data: IncompleteDataset,
        validation: Vec<FeatureVector>,
        cfg: KnnConfig,
    ) -> Result<Self, CleanError> {
        Self::with_cap(data, validation, cfg, DEFAULT_WORLD_CAP)
    }

    pub fn with_cap(
        data: IncompleteDataset,
        validation: Vec<FeatureVector>,
        cfg: KnnConfig,
        world_cap: u64,
    ) -> Result<Self, CleanError> {
        if validation.is_empty() {
            return Err(CleanError::EmptyValidation);
        }
        if let Some(v) = validation.iter().find(|v| v.dim() != data.dim()) {
            return Err(KnnError::DimensionMismatch {
                expected: data.dim(),
                found: v.dim(),
            }
            .into());
        }
        let mut session = CleaningSession {
            data,
            validation,
            cfg,
            world_cap,
            log: Vec::new(),
            entropy_trace: Vec::new(),
        };
        let entropy = session.prediction_entropy()?;
        session.entropy_trace.push(entropy);
        Ok(session)
    }

    pub fn data(&self) -> &IncompleteDataset {
        &self.data
    }

    pub fn validation(&self) -> &[FeatureVector] {
        &self.validation
    }

    pub fn config(&self) -> &KnnConfig {
        &self.cfg
    }

    pub fn world_cap(&self) -> u64 {
        self.world_cap
    }

    pub fn log(&self) -> &[RepairRecord] {
        &self.log
    }

    pub fn entropy_trace(&self) -> &[f64] {
        &self.entropy_trace
    }

    pub fn world_count(&self) -> Result<u64, CleanError> {
        self.data.world_count()
    }

    pub fn dirty_cells(&self) -> Vec<CellId> {
        self.data.dirty_cells()
    }

    /// Counting-query tallies for every validation point.
    pub fn tallies(&self) -> Result<Vec<LabelTally>, CleanError> {
        Ok(worlds::enumerate(&self.data, &self.validation, &self.cfg, self.world_cap, false)?.overall)
    }

    pub fn certainties(&self) -> Result<Vec<Certainty>, CleanError> {
        Ok(self.tallies()?.iter().map(Certainty::from).collect())
    }

    pub fn metrics(&self) -> Result<SessionMetrics, CleanError> {
        let tallies = self.tallies()?;
        Ok(SessionMetrics {
            world_count: self.world_count()?,
            entropy: mean_entropy(&tallies),
            certain_count: tallies.iter().filter(|t| t.certain_label().is_some()).count(),
        })
    }

    pub fn certain_count(&self) -> Result<usize, CleanError> {
        Ok(self.metrics()?.certain_count)
    }

    /// Mean over validation points of the per-point prediction entropy (bits).
    pub fn prediction_entropy(&self) -> Result<f64, CleanError> {
        if self.validation.is_empty() {
            return Err(CleanError::EmptyValidation);
        }
        Ok(mean_entropy(&self.tallies()?))
    }

    /// Conditional entropy of every dirty cell, ascending by cell.
    pub fn conditional_entropies(&self) -> Result<Vec<(CellId, f64)>, CleanError> {
        if self.validation.is_empty() {
            return Err(CleanError::EmptyValidation);
        }
        let t = worlds::enumerate(&self.data, &self.validation, &self.cfg, self.world_cap, true)?;
        Ok(t.by_cell
            .into_iter()
            .map(|(cell, per_value)| {
                let k = per_value.len() as f64;
                let ce = per_value.iter().map(|b| mean_entropy(b)).sum::<f64>() / k;
                (cell, ce)
            })
            .collect())
    }

    /// Expected prediction entropy after repairing `cell`, averaging uniformly
    /// over its candidate values.
    pub fn conditional_entropy(&self, cell: CellId) -> Result<f64, CleanError> {
        let candidates = self.data.candidates(cell).ok_or(CleanError::UnknownCell(cell))?;
        if candidates.len() < 2 {
            return Err(CleanError::AlreadyClean(cell));
        }
        self.conditional_entropies()?
            .into_iter()
            .find(|(c, _)| *c == cell)
            .map(|(_, ce)| ce)
            .ok_or(CleanError::AlreadyClean(cell))
    }

    /// Dirty cell with the lowest conditional entropy; ties go to the
    /// smallest `(row, col)`.
    pub fn suggest_next(&self) -> Result<CellId, CleanError> {
        self.best_cell().map(|(cell, _)| cell)
    }

    fn best_cell(&self) -> Result<(CellId, f64), CleanError> {
        let mut best: Option<(CellId, f64)> = None;
        for (cell, ce) in self.conditional_entropies()? {
            match best {
                Some((_, b)) if ce >= b - TIE_EPSILON => {}
                _ => best = Some((cell, ce)),
            }
        }
        best.ok_or(CleanError::NoDirtyCells)
    }

    /// Next cell to show a human, or `None` once every cell is clean or every
    /// validation prediction is already certain.
    pub fn suggestion(&self) -> Result<Option<Suggestion>, CleanError> {
        if self.dirty_cells().is_empty() || self.certain_count()? == self.validation.len() {
            return Ok(None);
        }
        let (cell, conditional_entropy) = self.best_cell()?;
        Ok(Some(Suggestion {
            cell,
            candidates: self.data.candidates(cell).unwrap_or_default().to_vec(),
            conditional_entropy,
        }))
    }

    /// Replaces the cell's candidate set with `{value}` in every world.
    ///
    /// The value need not be one of the candidates.
    pub fn apply_repair(&mut self, cell: CellId, value: f64) -> Result<SessionMetrics, CleanError> {
        if !value.is_finite() {
            return Err(CleanError::Invalid(format!("repair value {value} is not finite")));
        }
        let mut data = self.data.clone();
        data.fix_cell(cell, value)?;
        let previous = std::mem::replace(&mut self.data, data);
        let metrics = match self.metrics() {
            Ok(m) => m,
            Err(e) => {
                self.data = previous;
                return Err(e);
            }
        };
        self.log.push(RepairRecord { cell, value });
        self.entropy_trace.push(metrics.entropy);
        Ok(metrics)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CleaningPolicy {
    Cpclean,
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopCondition {
    AllCertain,
    AllClean,
}

/// One simulated repair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: usize,
    pub cell: CellId,
    pub value: f64,
    pub entropy_bits: f64,
    pub certain: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub steps: usize,
    /// Repairs needed until every validation prediction was certain.
    pub steps_to_all_certain: Option<usize>,
    pub initial_entropy: f64,
    pub final_entropy: f64,
    pub certain: usize,
    pub validation: usize,
}

impl SimulationSummary {
    /// Summarizes a trace given the metrics taken before the first repair.
    pub fn new(initial: &SessionMetrics, trace: &[TraceStep], validation: usize) -> Self {
        let steps_to_all_certain = if initial.certain_count == validation {
            Some(0)
        } else {
            trace.iter().find(|s| s.certain == validation).map(|s| s.step)
        };
        SimulationSummary {
            steps: trace.len(),
            steps_to_all_certain,
            initial_entropy: initial.entropy,
            final_entropy: trace.last().map_or(initial.entropy, |s| s.entropy_bits),
            certain: trace.last().map_or(initial.certain_count, |s| s.certain),
            validation,
        }
    }
}

/// Replays a cleaning loop with ground-truth values standing in for the human.
pub fn simulate_cleaning(
    session: &mut CleaningSession,
    ground_truth: &BTreeMap<CellId, f64>,
    policy: CleaningPolicy,
    seed: Seed,
    stop: StopCondition,
) -> Result<Vec<TraceStep>, CleanError> {
    if let Some(cell) = session
        .dirty_cells()
        .into_iter()
        .find(|c| !ground_truth.contains_key(c))
    {
        return Err(CleanError::MissingGroundTruth(cell));
    }
    let mut rng = seed.rng();
    let mut trace = Vec::new();
    let mut certain = session.certain_count()?;
    loop {
        let dirty = session.dirty_cells();
        let done = match stop {
            StopCondition::AllCertain => certain == session.validation.len(),
            StopCondition::AllClean => false,
        };
        if done || dirty.is_empty() {
            break;
        }
        let cell = match policy {
            CleaningPolicy::Cpclean => session.suggest_next()?,
            CleaningPolicy::Random => dirty[rng.random_range(0..dirty.len())],
        };
        let value = ground_truth[&cell];
        let metrics = session.apply_repair(cell, value)?;
        certain = metrics.certain_count;
        trace.push(TraceStep {
            step: trace.len() + 1,
            cell,
            value,
            entropy_bits: metrics.entropy,
            certain,
        });
    }
    Ok(trace)
}
