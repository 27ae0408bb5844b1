use std::path::Path;

use serde::{Deserialize, Serialize};

use super::parser::{Comparison, TestCondition, Variable};
use super::CiError;
use crate::model::{zero_one_loss, DataError, LabeledDataset};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReuseMode {
    /// Models are fixed before any result is revealed.
    NonAdaptive,
    /// Each pass/fail bit may influence the next submission.
    AdaptiveBinary,
}

/// How a score inside the `+/- epsilon` interval is decided.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IllDefinedPolicy {
    /// Pass; tolerates false positives.
    ForceAccept,
    /// Fail; tolerates false negatives.
    ForceReject,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReusePolicy {
    #[serde(rename = "H")]
    pub reuses: u64,
    pub delta: f64,
    pub mode: ReuseMode,
    pub ill_defined: IllDefinedPolicy,
}

impl ReusePolicy {
    pub fn new(
        reuses: u64,
        delta: f64,
        mode: ReuseMode,
        ill_defined: IllDefinedPolicy,
    ) -> Result<Self, CiError> {
        let p = ReusePolicy {
            reuses,
            delta,
            mode,
            ill_defined,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), CiError> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(CiError::InvalidDelta(self.delta));
        }
        if self.reuses == 0 {
            return Err(CiError::InvalidReuses);
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Pass,
    Fail,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resolution {
    /// The score was at least epsilon away from the threshold.
    Hard,
    /// The score fell inside the interval; the ill-defined policy decided.
    Policy,
}

/// Point estimates on one test set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreEstimates {
    pub n: f64,
    pub o: f64,
    pub d: f64,
}

impl ScoreEstimates {
    pub fn get(&self, var: Variable) -> f64 {
        match var {
            Variable::New => self.n,
            Variable::Old => self.o,
            Variable::Diff => self.d,
        }
    }
}

/// New/old accuracy and disagreement in a single pass.
pub fn estimate_scores(truths: &[usize], old: &[usize], new: &[usize]) -> Result<ScoreEstimates, CiError> {
    if truths.is_empty() {
        return Err(CiError::EmptyTestSet);
    }
    if old.len() != truths.len() || new.len() != truths.len() {
        return Err(CiError::LengthMismatch {
            expected: truths.len(),
            old: old.len(),
            new: new.len(),
        });
    }
    let (mut n_ok, mut o_ok, mut diff) = (0u64, 0u64, 0u64);
    for ((&t, &a), &b) in truths.iter().zip(old).zip(new) {
        o_ok += 1 - zero_one_loss(a, t) as u64;
        n_ok += 1 - zero_one_loss(b, t) as u64;
        diff += (a != b) as u64;
    }
    let len = truths.len() as f64;
    Ok(ScoreEstimates {
        n: n_ok as f64 / len,
        o: o_ok as f64 / len,
        d: diff as f64 / len,
    })
}

impl TestCondition {
    pub fn score(&self, est: &ScoreEstimates) -> f64 {
        self.terms.iter().map(|t| t.coef * est.get(t.var)).sum()
    }

    /// Pass/fail for a point estimate. Scores at least epsilon on the right
    /// side pass, at least epsilon on the wrong side fail, and anything in
    /// between goes to `ill_defined`. With zero epsilon the comparison is
    /// applied exactly.
    pub fn decide(&self, score: f64, ill_defined: IllDefinedPolicy) -> (Decision, Resolution) {
        let verdict = |ok: bool| if ok { Decision::Pass } else { Decision::Fail };
        if self.epsilon == 0.0 {
            return (verdict(self.op.holds(score, self.threshold)), Resolution::Hard);
        }
        let upper = self.threshold + self.epsilon;
        let lower = self.threshold - self.epsilon;
        let (pass, fail) = match self.op {
            Comparison::Gt | Comparison::Ge => (score >= upper, score <= lower),
            Comparison::Lt | Comparison::Le => (score <= lower, score >= upper),
        };
        if pass {
            (Decision::Pass, Resolution::Hard)
        } else if fail {
            (Decision::Fail, Resolution::Hard)
        } else {
            let d = match ill_defined {
                IllDefinedPolicy::ForceAccept => Decision::Pass,
                IllDefinedPolicy::ForceReject => Decision::Fail,
            };
            (d, Resolution::Policy)
        }
    }

    /// The same condition with negated expression and threshold and the
    /// operator flipped.
    pub fn mirrored(&self) -> TestCondition {
        TestCondition {
            terms: self
                .terms
                .iter()
                .map(|t| super::parser::Term { coef: -t.coef, var: t.var })
                .collect(),
            op: self.op.flipped(),
            threshold: -self.threshold,
            epsilon: self.epsilon,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommitOutcome {
    pub decision: Decision,
    pub resolution: Resolution,
    pub score: f64,
    pub estimates: ScoreEstimates,
    pub used: u64,
    pub remaining: u64,
}

/// Reuse accounting for one test set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CiLedger {
    pub policy: ReusePolicy,
    pub used: u64,
    pub history: Vec<bool>,
    pub fingerprint: String,
}

impl CiLedger {
    pub fn new(policy: ReusePolicy, fingerprint: impl Into<String>) -> Result<Self, CiError> {
        policy.validate()?;
        Ok(CiLedger {
            policy,
            used: 0,
            history: Vec::new(),
            fingerprint: fingerprint.into(),
        })
    }

    pub fn for_test_set(policy: ReusePolicy, test_set: &LabeledDataset) -> Result<Self, CiError> {
        Self::new(policy, test_set.fingerprint())
    }

    pub fn remaining(&self) -> u64 {
        self.policy.reuses - self.used
    }

    pub fn validate(&self) -> Result<(), CiError> {
        self.policy.validate()?;
        if self.used > self.policy.reuses || self.history.len() as u64 != self.used {
            return Err(CiError::InvalidLedger(format!(
                "used={} with {} history entries and H={}",
                self.used,
                self.history.len(),
                self.policy.reuses
            )));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, CiError> {
        let ledger: CiLedger =
            serde_json::from_str(text).map_err(|e| CiError::InvalidLedger(e.to_string()))?;
        ledger.validate()?;
        Ok(ledger)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ledger serializes")
    }

    pub fn load(path: &Path) -> Result<Self, CiError> {
        let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), CiError> {
        std::fs::write(path, self.to_json() + "\n").map_err(|e| DataError::io(path, e).into())
    }

    /// Evaluates one commit against a test set identified by `fingerprint`.
    /// The ledger is unchanged on error.
    pub fn commit(
        &mut self,
        fingerprint: &str,
        truths: &[usize],
        old: &[usize],
        new: &[usize],
        cond: &TestCondition,
    ) -> Result<CommitOutcome, CiError> {
        if fingerprint != self.fingerprint {
            return Err(CiError::FingerprintMismatch {
                expected: self.fingerprint.clone(),
                found: fingerprint.to_string(),
            });
        }
        if self.used >= self.policy.reuses {
            return Err(CiError::RefreshRequired {
                used: self.used,
                reuses: self.policy.reuses,
            });
        }
        let estimates = estimate_scores(truths, old, new)?;
        let score = cond.score(&estimates);
        let (decision, resolution) = cond.decide(score, self.policy.ill_defined);
        self.used += 1;
        self.history.push(decision == Decision::Pass);
        Ok(CommitOutcome {
            decision,
            resolution,
            score,
            estimates,
            used: self.used,
            remaining: self.remaining(),
        })
    }
}

/// Commit `new` against `old` on `test_set`, consuming one reuse.
pub fn evaluate_commit(
    ledger: &mut CiLedger,
    test_set: &LabeledDataset,
    old: &[usize],
    new: &[usize],
    cond: &TestCondition,
) -> Result<CommitOutcome, CiError> {
    ledger.commit(&test_set.fingerprint(), test_set.labels(), old, new, cond)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ci::parse_condition;
    use proptest::prelude::*;

    fn ledger(h: u64, ill: IllDefinedPolicy) -> CiLedger {
        CiLedger::new(ReusePolicy::new(h, 0.05, ReuseMode::NonAdaptive, ill).unwrap(), "fp").unwrap()
    }

    #[test]
    fn interval_decisions() {
        let c = parse_condition("n - o > 0.02 +/- 0.01").unwrap();
        let r = IllDefinedPolicy::ForceReject;
        assert_eq!(c.decide(0.035, r), (Decision::Pass, Resolution::Hard));
        assert_eq!(c.decide(0.005, r), (Decision::Fail, Resolution::Hard));
        assert_eq!(c.decide(0.015, r), (Decision::Fail, Resolution::Policy));
        assert_eq!(c.decide(0.015, IllDefinedPolicy::ForceAccept), (Decision::Pass, Resolution::Policy));
        let lt = parse_condition("d < 0.1 +/- 0.05").unwrap();
        assert_eq!(lt.decide(0.04, r).0, Decision::Pass);
        assert_eq!(lt.decide(0.16, r).0, Decision::Fail);
        assert_eq!(lt.decide(0.1, IllDefinedPolicy::ForceAccept), (Decision::Pass, Resolution::Policy));
    }

    #[test]
    fn zero_epsilon_is_exact() {
        let gt = parse_condition("n > 0.5").unwrap();
        let ge = parse_condition("n >= 0.5").unwrap();
        assert_eq!(gt.decide(0.5, IllDefinedPolicy::ForceAccept).0, Decision::Fail);
        assert_eq!(ge.decide(0.5, IllDefinedPolicy::ForceReject).0, Decision::Pass);
    }

    #[test]
    fn estimates_in_one_pass() {
        let e = estimate_scores(&[0, 1, 2, 0], &[0, 1, 1, 1], &[0, 1, 2, 2]).unwrap();
        assert_eq!((e.n, e.o, e.d), (0.75, 0.5, 0.5));
        assert!(matches!(estimate_scores(&[], &[], &[]), Err(CiError::EmptyTestSet)));
        assert!(matches!(estimate_scores(&[0], &[0, 1], &[0]), Err(CiError::LengthMismatch { .. })));
    }

    #[test]
    fn budget_is_enforced() {
        let c = parse_condition("n > 0.5 +/- 0.1").unwrap();
        let mut l = ledger(2, IllDefinedPolicy::ForceReject);
        let truth = [0, 1, 1, 0];
        l.commit("fp", &truth, &truth, &truth, &c).unwrap();
        let out = l.commit("fp", &truth, &truth, &[1, 0, 0, 1], &c).unwrap();
        assert_eq!((out.decision, out.used, out.remaining), (Decision::Fail, 2, 0));
        assert_eq!(l.history, vec![true, false]);
        let before = l.clone();
        let err = l.commit("fp", &truth, &truth, &truth, &c).unwrap_err();
        assert!(matches!(err, CiError::RefreshRequired { used: 2, reuses: 2 }));
        assert_eq!(err.to_string(), "test set refresh required (2 of 2 evaluations used)");
        assert_eq!(l, before);
    }

    #[test]
    fn stale_fingerprint_is_refused() {
        let c = parse_condition("n > 0.5 +/- 0.1").unwrap();
        let mut l = ledger(3, IllDefinedPolicy::ForceReject);
        let err = l.commit("other", &[0], &[0], &[0], &c).unwrap_err();
        assert!(matches!(err, CiError::FingerprintMismatch { .. }));
        assert_eq!(l.used, 0);
    }

    #[test]
    fn json_shape_and_validation() {
        let l = ledger(3, IllDefinedPolicy::ForceAccept);
        let v: serde_json::Value = serde_json::from_str(&l.to_json()).unwrap();
        assert_eq!(
            v,
            serde_json::json!({
                "policy": {"H": 3, "delta": 0.05, "mode": "non_adaptive", "ill_defined": "force_accept"},
                "used": 0, "history": [], "fingerprint": "fp"
            })
        );
        assert_eq!(CiLedger::from_json(&l.to_json()).unwrap(), l);
        let bad = r#"{"policy":{"H":1,"delta":0.05,"mode":"adaptive_binary","ill_defined":"force_reject"},"used":2,"history":[true,true],"fingerprint":"x"}"#;
        assert!(matches!(CiLedger::from_json(bad), Err(CiError::InvalidLedger(_))));
        assert!(ReusePolicy::new(0, 0.1, ReuseMode::NonAdaptive, IllDefinedPolicy::ForceAccept).is_err());
        assert!(ReusePolicy::new(1, 1.0, ReuseMode::NonAdaptive, IllDefinedPolicy::ForceAccept).is_err());
    }

    proptest! {
        #[test]
        fn mirrored_condition_gives_same_decision(
            coefs in prop::collection::vec(-3.0f64..3.0, 1..4),
            threshold in -2.0f64..2.0,
            eps in prop_oneof![Just(0.0), 0.0f64..0.5],
            op in 0usize..4,
            n in 0.0f64..1.0, o in 0.0f64..1.0, d in 0.0f64..1.0,
            accept in any::<bool>(),
        ) {
            let vars = [Variable::New, Variable::Old, Variable::Diff];
            let ops = [Comparison::Gt, Comparison::Lt, Comparison::Ge, Comparison::Le];
            let c = TestCondition {
                terms: coefs.iter().enumerate().map(|(i, &coef)| super::super::parser::Term { coef, var: vars[i % 3] }).collect(),
                op: ops[op],
                threshold,
                epsilon: eps,
            };
            let ill = if accept { IllDefinedPolicy::ForceAccept } else { IllDefinedPolicy::ForceReject };
            let est = ScoreEstimates { n, o, d };
            let m = c.mirrored();
            prop_assert_eq!(m.score(&est), -c.score(&est));
            prop_assert_eq!(c.decide(c.score(&est), ill), m.decide(m.score(&est), ill));
        }

        #[test]
        fn history_tracks_used(h in 1u64..6, commits in 0usize..10) {
            let c = parse_condition("n > 0.5 +/- 0.1").unwrap();
            let mut l = ledger(h, IllDefinedPolicy::ForceAccept);
            for _ in 0..commits {
                let _ = l.commit("fp", &[0, 1], &[0, 1], &[0, 0], &c);
                prop_assert_eq!(l.history.len() as u64, l.used);
                prop_assert!(l.used <= h);
            }
        }
    }
}
