//! Online model selection over an unlabeled stream with a labeling budget.
//!
//! Labels are requested with probability proportional to how much the
//! weighted models disagree, and every label updates the weights with an
//! importance-weighted exponential rule. Models that never disagree never
//! cost a label.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{read_table, resolve_label, zero_one_loss, DataError, PredictionMatrix, Seed};

#[derive(Debug, Error)]
pub enum PickerError {
    #[error("need at least two models, got {0}")]
    TooFewModels(usize),
    #[error("learning rate must be positive and finite, got {0}")]
    InvalidEta(f64),
    #[error("query floor must lie in [0, 1], got {0}")]
    InvalidFloor(f64),
    #[error("item has {found} predictions, expected {expected}")]
    ArityMismatch { expected: usize, found: usize },
    #[error("a label is still pending for item `{0}`")]
    QueryPending(String),
    #[error("no label was requested")]
    NoPendingQuery,
    #[error("label is for item `{found}`, but item `{expected}` was queried")]
    ItemMismatch { expected: String, found: String },
    #[error("{predictions} prediction rows but {truths} truths")]
    LengthMismatch { predictions: usize, truths: usize },
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamItem {
    pub id: String,
    pub predictions: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "lowercase")]
pub enum PickerDecision {
    Query { q: f64 },
    Skip,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryLogEntry {
    pub round: u64,
    pub queried: bool,
    pub label: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PendingQuery {
    pub item: StreamItem,
    pub q: f64,
}

/// Default learning rate for `models` models, `budget` labels and a stream
/// of `horizon` items: `sqrt(2 B ln m) / n` with `B = min(budget, n)`.
///
/// Importance-weighted losses scale like `n / B`, so the usual
/// `sqrt(8 ln m / T)` tuning for `[0, 1]` losses concentrates the weights
/// too early and starves later rounds of queries.
pub fn default_eta(models: usize, budget: u64, horizon: u64) -> f64 {
    let n = horizon.max(1) as f64;
    let b = budget.clamp(1, horizon.max(1)) as f64;
    (2.0 * b * (models.max(2) as f64).ln()).sqrt() / n
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PickerState {
    weights: Vec<f64>,
    /// Importance-weighted cumulative losses; weights are their softmax.
    losses: Vec<f64>,
    budget_remaining: u64,
    eta: f64,
    q_floor: f64,
    force_query: bool,
    rng: ChaCha8Rng,
    query_log: Vec<QueryLogEntry>,
    pending: Option<PendingQuery>,
}

impl PickerState {
    pub fn init(models: usize, budget: u64, eta: f64, seed: Seed) -> Result<Self, PickerError> {
        if models < 2 {
            return Err(PickerError::TooFewModels(models));
        }
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(PickerError::InvalidEta(eta));
        }
        Ok(PickerState {
            weights: vec![1.0 / models as f64; models],
            losses: vec![0.0; models],
            budget_remaining: budget,
            eta,
            q_floor: 0.0,
            force_query: false,
            rng: seed.rng(),
            query_log: Vec::new(),
            pending: None,
        })
    }

    /// Minimum query probability whenever the models disagree.
    pub fn with_floor(mut self, floor: f64) -> Result<Self, PickerError> {
        if !(0.0..=1.0).contains(&floor) {
            return Err(PickerError::InvalidFloor(floor));
        }
        self.q_floor = floor;
        Ok(self)
    }

    /// Query every disagreeing item while budget lasts (q = 1).
    pub fn forcing_queries(mut self) -> Self {
        self.force_query = true;
        self
    }

    pub fn models(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn budget_remaining(&self) -> u64 {
        self.budget_remaining
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn round(&self) -> u64 {
        self.query_log.len() as u64
    }

    pub fn query_log(&self) -> &[QueryLogEntry] {
        &self.query_log
    }

    pub fn queries(&self) -> u64 {
        self.query_log.iter().filter(|e| e.queried).count() as u64
    }

    pub fn pending(&self) -> Option<&PendingQuery> {
        self.pending.as_ref()
    }

    /// `1 - max_y (weight of models predicting y)`; exactly 0 on agreement.
    pub fn disagreement(&self, predictions: &[usize]) -> f64 {
        if predictions.windows(2).all(|w| w[0] == w[1]) {
            return 0.0;
        }
        let mut mass: BTreeMap<usize, f64> = BTreeMap::new();
        for (&p, &w) in predictions.iter().zip(&self.weights) {
            *mass.entry(p).or_default() += w;
        }
        let top = mass.values().copied().fold(0.0, f64::max);
        (1.0 - top).max(0.0)
    }

    fn query_probability(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        if self.force_query {
            return 1.0;
        }
        let s_max = 1.0 - 1.0 / self.models() as f64;
        (s / s_max).clamp(self.q_floor, 1.0)
    }

    /// Decides whether to request the label of `item`.
    pub fn observe(&mut self, item: &StreamItem) -> Result<PickerDecision, PickerError> {
        if let Some(p) = &self.pending {
            return Err(PickerError::QueryPending(p.item.id.clone()));
        }
        if item.predictions.len() != self.models() {
            return Err(PickerError::ArityMismatch {
                expected: self.models(),
                found: item.predictions.len(),
            });
        }
        let s = self.disagreement(&item.predictions);
        let mut decision = PickerDecision::Skip;
        if self.budget_remaining > 0 && s > 0.0 {
            let q = self.query_probability(s);
            if self.rng.random::<f64>() < q {
                decision = PickerDecision::Query { q };
            }
        }
        let round = self.round() + 1;
        let queried = matches!(decision, PickerDecision::Query { .. });
        self.query_log.push(QueryLogEntry {
            round,
            queried,
            label: None,
        });
        if let PickerDecision::Query { q } = decision {
            self.budget_remaining -= 1;
            self.pending = Some(PendingQuery {
                item: item.clone(),
                q,
            });
        }
        Ok(decision)
    }

    /// Applies the label for the pending query.
    pub fn feed_label(&mut self, item_id: &str, truth: usize) -> Result<(), PickerError> {
        let pending = self.pending.as_ref().ok_or(PickerError::NoPendingQuery)?;
        if pending.item.id != item_id {
            return Err(PickerError::ItemMismatch {
                expected: pending.item.id.clone(),
                found: item_id.to_string(),
            });
        }
        let pending = self.pending.take().expect("checked above");
        for (loss, &p) in self.losses.iter_mut().zip(&pending.item.predictions) {
            *loss += zero_one_loss(p, truth) as f64 / pending.q;
        }
        self.reweigh();
        if let Some(entry) = self.query_log.last_mut() {
            entry.label = Some(truth);
        }
        Ok(())
    }

    fn reweigh(&mut self) {
        let min = self.losses.iter().copied().fold(f64::INFINITY, f64::min);
        for (w, &l) in self.weights.iter_mut().zip(&self.losses) {
            *w = (-self.eta * (l - min)).exp();
        }
        let total: f64 = self.weights.iter().sum();
        for w in &mut self.weights {
            *w /= total;
        }
    }

    /// Highest-weight model; ties go to the lowest index.
    pub fn current_pick(&self) -> usize {
        let mut best = 0;
        for (i, &w) in self.weights.iter().enumerate() {
            if w > self.weights[best] {
                best = i;
            }
        }
        best
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PickerTraceStep {
    pub round: u64,
    pub queried: bool,
    /// Pick after the round's update.
    pub pick: usize,
    /// Errors of the picks made so far (each round predicted by the pick in
    /// force before it) minus the errors of the best model in hindsight.
    pub regret: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PickerRun {
    pub final_pick: usize,
    pub queries: u64,
    pub weights: Vec<f64>,
    pub trace: Vec<PickerTraceStep>,
}

/// Streams `predictions` through a picker, answering queries from `truths`.
pub fn simulate(
    predictions: &PredictionMatrix,
    truths: &[usize],
    mut state: PickerState,
) -> Result<PickerRun, PickerError> {
    if predictions.len() != truths.len() {
        return Err(PickerError::LengthMismatch {
            predictions: predictions.len(),
            truths: truths.len(),
        });
    }
    let m = predictions.models();
    let mut model_errors = vec![0u64; m];
    let mut picker_errors = 0u64;
    let mut trace = Vec::with_capacity(truths.len());
    for (t, (row, &truth)) in predictions.rows().iter().zip(truths).enumerate() {
        picker_errors += zero_one_loss(row[state.current_pick()], truth) as u64;
        for (e, &p) in model_errors.iter_mut().zip(row) {
            *e += zero_one_loss(p, truth) as u64;
        }
        let item = StreamItem {
            id: t.to_string(),
            predictions: row.clone(),
        };
        let decision = state.observe(&item)?;
        if matches!(decision, PickerDecision::Query { .. }) {
            state.feed_label(&item.id, truth)?;
        }
        let best = model_errors.iter().copied().min().unwrap_or(0);
        trace.push(PickerTraceStep {
            round: state.round(),
            queried: matches!(decision, PickerDecision::Query { .. }),
            pick: state.current_pick(),
            regret: picker_errors as f64 - best as f64,
        });
    }
    Ok(PickerRun {
        final_pick: state.current_pick(),
        queries: state.queries(),
        weights: state.weights().to_vec(),
        trace,
    })
}

/// Parses a stream CSV: header `item_id,<model>,...`, one row per item.
pub fn parse_stream_csv(text: &str) -> Result<Vec<StreamItem>, DataError> {
    let table = read_table(text)?;
    if table.header.len() < 3 {
        return Err(DataError::parse(1, "stream needs an id column and at least two model columns"));
    }
    table
        .rows
        .iter()
        .map(|(line, row)| {
            let predictions = row[1..]
                .iter()
                .map(|t| resolve_label(t, None, *line))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(StreamItem {
                id: row[0].clone(),
                predictions,
            })
        })
        .collect()
}

pub fn load_stream(path: &Path) -> Result<Vec<StreamItem>, DataError> {
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    parse_stream_csv(&text)
}

/// Parses a truth CSV with a header; the label index is the last column.
pub fn parse_truths_csv(text: &str) -> Result<Vec<usize>, DataError> {
    let table = read_table(text)?;
    table
        .rows
        .iter()
        .map(|(line, row)| resolve_label(row.last().map_or("", String::as_str), None, *line))
        .collect()
}

pub fn load_truths(path: &Path) -> Result<Vec<usize>, DataError> {
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    parse_truths_csv(&text)
}

/// Packs stream items into a prediction matrix (class count inferred).
pub fn stream_matrix(items: &[StreamItem]) -> Result<PredictionMatrix, DataError> {
    let rows: Vec<Vec<usize>> = items.iter().map(|i| i.predictions.clone()).collect();
    let classes = rows.iter().flatten().max().map_or(2, |&m| (m + 1).max(2));
    PredictionMatrix::new(rows, classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::model_stream;
    use proptest::prelude::*;

    fn item(id: &str, p: &[usize]) -> StreamItem {
        StreamItem {
            id: id.into(),
            predictions: p.to_vec(),
        }
    }

    #[test]
    fn default_eta_values() {
        assert!((default_eta(5, 300, 2000) - (600.0 * 5f64.ln()).sqrt() / 2000.0).abs() < 1e-15);
        // Full labels: the familiar sqrt(2 ln m / n).
        assert!((default_eta(4, 10_000, 100) - (2.0 * 4f64.ln() / 100.0).sqrt()).abs() < 1e-15);
        assert!(default_eta(2, 0, 0) > 0.0);
    }

    #[test]
    fn init_rules() {
        let s = PickerState::init(4, 10, 0.5, Seed(0)).unwrap();
        assert_eq!(s.weights(), &[0.25; 4]);
        assert_eq!(s.current_pick(), 0);
        assert!(matches!(PickerState::init(1, 10, 0.5, Seed(0)), Err(PickerError::TooFewModels(1))));
        assert!(PickerState::init(2, 10, 0.0, Seed(0)).is_err());
        assert!(PickerState::init(2, 10, 0.1, Seed(0)).unwrap().with_floor(1.5).is_err());
    }

    #[test]
    fn agreement_never_queries() {
        let mut s = PickerState::init(3, 10, 0.5, Seed(1)).unwrap();
        for i in 0..50 {
            assert_eq!(s.observe(&item(&i.to_string(), &[2, 2, 2])).unwrap(), PickerDecision::Skip);
        }
        assert_eq!((s.queries(), s.budget_remaining(), s.round()), (0, 10, 50));
    }

    #[test]
    fn zero_budget_never_queries() {
        let mut s = PickerState::init(2, 0, 0.5, Seed(1)).unwrap();
        assert_eq!(s.observe(&item("a", &[0, 1])).unwrap(), PickerDecision::Skip);
    }

    #[test]
    fn maximal_disagreement_queries_surely() {
        let mut s = PickerState::init(2, 5, 0.5, Seed(2)).unwrap();
        assert_eq!(s.disagreement(&[0, 1]), 0.5);
        assert_eq!(s.observe(&item("a", &[0, 1])).unwrap(), PickerDecision::Query { q: 1.0 });
        assert_eq!(s.budget_remaining(), 4);
    }

    #[test]
    fn update_matches_hand_computation() {
        let mut s = PickerState::init(2, 5, std::f64::consts::LN_2, Seed(0)).unwrap();
        s.observe(&item("a", &[1, 0])).unwrap();
        s.feed_label("a", 0).unwrap();
        assert!((s.weights()[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((s.weights()[1] - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(s.current_pick(), 1);
        assert_eq!(s.query_log().last().unwrap().label, Some(0));
    }

    #[test]
    fn tiny_eta_keeps_weights() {
        let mut s = PickerState::init(3, 5, 1e-12, Seed(0)).unwrap();
        s.observe(&item("a", &[1, 0, 2])).unwrap();
        s.feed_label("a", 0).unwrap();
        for &w in s.weights() {
            assert!((w - 1.0 / 3.0).abs() < 1e-9);
        }
    }

    #[test]
    fn uniform_loss_keeps_weights() {
        let mut s = PickerState::init(2, 5, 1.0, Seed(0)).unwrap().forcing_queries();
        s.observe(&item("a", &[1, 2])).unwrap();
        s.feed_label("a", 0).unwrap();
        assert_eq!(s.weights(), &[0.5, 0.5]);
        assert_eq!(s.current_pick(), 0);
    }

    #[test]
    fn protocol_errors() {
        let mut s = PickerState::init(2, 5, 1.0, Seed(0)).unwrap();
        assert!(matches!(s.feed_label("x", 0), Err(PickerError::NoPendingQuery)));
        assert!(matches!(s.observe(&item("a", &[0])), Err(PickerError::ArityMismatch { .. })));
        s.observe(&item("a", &[0, 1])).unwrap();
        assert!(matches!(s.observe(&item("b", &[0, 1])), Err(PickerError::QueryPending(_))));
        assert!(matches!(s.feed_label("b", 0), Err(PickerError::ItemMismatch { .. })));
        s.feed_label("a", 1).unwrap();
    }

    #[test]
    fn stream_file_parsing() {
        let items = parse_stream_csv("item_id,m0,m1\nx,0,1\ny,2,2\n").unwrap();
        assert_eq!(items, vec![item("x", &[0, 1]), item("y", &[2, 2])]);
        assert!(parse_stream_csv("item_id,m0\nx,0\n").is_err());
        assert!(parse_stream_csv("item_id,m0,m1\nx,0,b\n").is_err());
        assert_eq!(parse_truths_csv("item_id,label\nx,1\ny,0\n").unwrap(), vec![1, 0]);
        assert_eq!(stream_matrix(&items).unwrap().class_count(), 3);
    }

    // Oracle: most accurate model by direct counting, lowest index on ties.
    fn oracle_best(preds: &PredictionMatrix, truths: &[usize]) -> usize {
        let mut best = (0, usize::MAX);
        for m in 0..preds.models() {
            let errors = preds.column(m).iter().zip(truths).filter(|(p, t)| p != t).count();
            if errors < best.1 {
                best = (m, errors);
            }
        }
        best.0
    }

    proptest! {
        #[test]
        fn forced_full_budget_matches_oracle(
            seed in any::<u64>(), m in 2usize..6, n in 1usize..80, classes in 2usize..4,
        ) {
            let accs: Vec<f64> = (0..m).map(|i| 0.3 + 0.1 * ((seed >> i) & 3) as f64).collect();
            let (preds, truths) = model_stream(n, classes, &accs, Seed(seed));
            let state = PickerState::init(m, n as u64, 0.7, Seed(seed)).unwrap().forcing_queries();
            let run = simulate(&preds, &truths, state).unwrap();
            prop_assert_eq!(run.final_pick, oracle_best(&preds, &truths));
        }

        #[test]
        fn budget_and_normalization(
            seed in any::<u64>(), budget in 0u64..20, n in 1usize..120, floor in 0.0f64..1.0,
        ) {
            let (preds, truths) = model_stream(n, 3, &[0.5, 0.6, 0.7], Seed(seed));
            let state = PickerState::init(3, budget, 0.4, Seed(seed)).unwrap().with_floor(floor).unwrap();
            let run = simulate(&preds, &truths, state.clone()).unwrap();
            prop_assert!(run.queries <= budget);
            prop_assert!((run.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert_eq!(run.trace.len(), n);
            let again = simulate(&preds, &truths, state).unwrap();
            prop_assert_eq!(run, again);
        }
    }
}
