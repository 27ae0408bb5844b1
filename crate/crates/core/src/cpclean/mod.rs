//! Cleaning prioritization over incomplete training data.
//!
//! An [`IncompleteDataset`] defines a product space of possible worlds,
//! one per choice of candidate repair for every missing cell. Queries ask
//! how a kNN classifier trained in each world labels a validation point
//! ([`counting_query`], [`checking_query`]), and a [`CleaningSession`]
//! greedily asks a human to repair the cell whose value is expected to
//! remove the most prediction entropy.

mod incomplete;
mod session;
mod worlds;

use thiserror::Error;

pub use incomplete::{
    candidates_to_json, generate_candidates, load_candidates, load_ground_truth,
    load_incomplete, parse_candidates_json, parse_ground_truth_json, parse_incomplete_csv,
    CellId, IncompleteDataset, IncompleteTable, RepairGenerator,
};
pub use session::{
    simulate_cleaning, CleaningPolicy, CleaningSession, RepairRecord, SessionMetrics,
    SimulationSummary, StopCondition, Suggestion, TraceStep,
};
pub use worlds::{Certainty, LabelTally};

use crate::knn::{KnnConfig, KnnError};
use crate::model::{DataError, FeatureVector};

/// Default ceiling on enumerated possible worlds.
pub const DEFAULT_WORLD_CAP: u64 = 1_000_000;

#[derive(Debug, Error)]
pub enum CleanError {
    #[error("world count overflows 64 bits")]
    WorldCountOverflow,
    #[error("{worlds} possible worlds exceed the enumeration cap of {cap}")]
    WorldCapExceeded { worlds: u64, cap: u64 },
    #[error("unknown cell {0}")]
    UnknownCell(CellId),
    #[error("cell {0} is already clean")]
    AlreadyClean(CellId),
    #[error("no dirty cells left")]
    NoDirtyCells,
    #[error("validation set is empty")]
    EmptyValidation,
    #[error("ground truth has no value for cell {0}")]
    MissingGroundTruth(CellId),
    #[error("invalid incomplete dataset: {0}")]
    Invalid(String),
    #[error(transparent)]
    Knn(#[from] KnnError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Per-label count of possible worlds whose kNN prediction for `query` is that label.
pub fn counting_query(
    data: &IncompleteDataset,
    query: &FeatureVector,
    cfg: &KnnConfig,
) -> Result<LabelTally, CleanError> {
    counting_query_capped(data, query, cfg, DEFAULT_WORLD_CAP)
}

pub fn counting_query_capped(
    data: &IncompleteDataset,
    query: &FeatureVector,
    cfg: &KnnConfig,
    cap: u64,
) -> Result<LabelTally, CleanError> {
    let mut t = worlds::enumerate(data, std::slice::from_ref(query), cfg, cap, false)?;
    Ok(t.overall.remove(0))
}

/// Tallies for a batch of queries from a single enumeration.
pub fn counting_queries(
    data: &IncompleteDataset,
    queries: &[FeatureVector],
    cfg: &KnnConfig,
    cap: u64,
) -> Result<Vec<LabelTally>, CleanError> {
    Ok(worlds::enumerate(data, queries, cfg, cap, false)?.overall)
}

/// `Certain(y)` iff every possible world predicts `y`.
pub fn checking_query(
    data: &IncompleteDataset,
    query: &FeatureVector,
    cfg: &KnnConfig,
) -> Result<Certainty, CleanError> {
    counting_query(data, query, cfg).map(|t| Certainty::from(&t))
}
