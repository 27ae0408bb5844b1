//! Monte-Carlo check of decision error rates.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bounds::{per_test_ln_delta, required_sample_size_ln};
use super::ledger::{CiLedger, Decision, Resolution, ReusePolicy, ScoreEstimates};
use super::parser::TestCondition;
use super::CiError;
use crate::model::Seed;

/// Realizable per-sample outcomes with truth label 0 as `(new, old)` predictions.
const OUTCOMES: [(usize, usize); 5] = [(0, 0), (0, 1), (1, 0), (1, 1), (1, 2)];

fn outcome_value(cond: &TestCondition, (new, old): (usize, usize)) -> f64 {
    let est = ScoreEstimates {
        n: (new == 0) as u8 as f64,
        o: (old == 0) as u8 as f64,
        d: (new != old) as u8 as f64,
    };
    cond.score(&est)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Type1Report {
    pub samples: u64,
    pub trials: u64,
    pub pass_rate: f64,
    /// Fraction of trials decided by the ill-defined policy.
    pub policy_rate: f64,
    /// Fraction of decisions against the true side, counting both hard and
    /// policy-resolved decisions. Only defined when the true score is at
    /// least epsilon away from the threshold.
    pub error_rate: Option<f64>,
}

/// Runs `trials` independent commits, each on a fresh test set of the size
/// required by `policy`, whose per-sample outcomes have expectation
/// `true_score`.
///
/// Samples are a two-point mixture of the realizable outcomes with the
/// smallest and largest expression value, so any score in between can be
/// targeted exactly.
pub fn simulate_type1(
    cond: &TestCondition,
    policy: &ReusePolicy,
    true_score: f64,
    trials: u64,
    seed: Seed,
) -> Result<Type1Report, CiError> {
    policy.validate()?;
    if trials == 0 {
        return Err(CiError::InvalidSimulation("trials must be at least 1".into()));
    }
    let values: Vec<f64> = OUTCOMES.iter().map(|&o| outcome_value(cond, o)).collect();
    let lo = (0..OUTCOMES.len())
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .expect("nonempty");
    let hi = (0..OUTCOMES.len())
        .max_by(|&a, &b| values[a].total_cmp(&values[b]))
        .expect("nonempty");
    let (vlo, vhi) = (values[lo], values[hi]);
    if !(true_score >= vlo && true_score <= vhi) {
        return Err(CiError::InvalidSimulation(format!(
            "true score {true_score} is outside the reachable range [{vlo}, {vhi}]"
        )));
    }
    let p_hi = if vhi > vlo { (true_score - vlo) / (vhi - vlo) } else { 1.0 };
    let samples = required_sample_size_ln(cond, per_test_ln_delta(policy))?;
    let n = usize::try_from(samples).map_err(|_| CiError::SampleSizeOverflow)?;

    let true_side = if cond.epsilon == 0.0 {
        None
    } else {
        match cond.decide(true_score, policy.ill_defined) {
            (d, Resolution::Hard) => Some(d),
            (_, Resolution::Policy) => None,
        }
    };

    let outcomes: Vec<(Decision, Resolution)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = seed.derive(t).rng();
            let truths = vec![0usize; n];
            let mut old = Vec::with_capacity(n);
            let mut new = Vec::with_capacity(n);
            for _ in 0..n {
                let k = if rng.random::<f64>() < p_hi { hi } else { lo };
                let (a, b) = OUTCOMES[k];
                new.push(a);
                old.push(b);
            }
            let mut ledger = CiLedger::new(*policy, "simulation")?;
            let out = ledger.commit("simulation", &truths, &old, &new, cond)?;
            Ok((out.decision, out.resolution))
        })
        .collect::<Result<_, CiError>>()?;

    let total = trials as f64;
    let rate = |f: &dyn Fn(&(Decision, Resolution)) -> bool| outcomes.iter().filter(|o| f(o)).count() as f64 / total;
    Ok(Type1Report {
        samples,
        trials,
        pass_rate: rate(&|o| o.0 == Decision::Pass),
        policy_rate: rate(&|o| o.1 == Resolution::Policy),
        error_rate: true_side.map(|side| rate(&|o| o.0 != side)),
    })
}
