//! Statistically sound CI gating for model updates.
//!
//! A [`TestCondition`] such as `n - o > 0.02 +/- 0.01` is checked on a
//! held-out test set whose size is derived from a Hoeffding bound. A
//! [`CiLedger`] counts how often the test set has been used and refuses
//! further commits once the reuse budget is spent.

mod bounds;
mod ledger;
mod parser;
mod sim;

use thiserror::Error;

pub use bounds::{
    hoeffding_tail, max_reuses, per_test_delta, per_test_ln_delta, required_for_policy,
    required_sample_size, required_sample_size_ln,
};
pub use ledger::{
    estimate_scores, evaluate_commit, CiLedger, CommitOutcome, Decision, IllDefinedPolicy,
    Resolution, ReuseMode, ReusePolicy, ScoreEstimates,
};
pub use parser::{parse_condition, Comparison, ParseError, ParseErrorKind, Term, TestCondition, Variable};
pub use sim::{simulate_type1, Type1Report};

use crate::model::DataError;

#[derive(Debug, Error)]
pub enum CiError {
    #[error("invalid condition: {0}")]
    Parse(#[from] ParseError),
    #[error("condition needs a positive `+/-` tolerance to size a test set")]
    ZeroEpsilon,
    #[error("delta must lie in (0, 1), got {0}")]
    InvalidDelta(f64),
    #[error("reuse budget H must be at least 1")]
    InvalidReuses,
    #[error("required sample size does not fit in 64 bits")]
    SampleSizeOverflow,
    #[error("test set refresh required ({used} of {reuses} evaluations used)")]
    RefreshRequired { used: u64, reuses: u64 },
    #[error("ledger belongs to test set {expected}, got {found}")]
    FingerprintMismatch { expected: String, found: String },
    #[error("prediction lengths differ from test set size {expected} (old {old}, new {new})")]
    LengthMismatch { expected: usize, old: usize, new: usize },
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("invalid ledger: {0}")]
    InvalidLedger(String),
    #[error("invalid simulation: {0}")]
    InvalidSimulation(String),
    #[error(transparent)]
    Data(#[from] DataError),
}
