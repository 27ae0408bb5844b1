//! Hoeffding sample sizes and reuse budgets.

use std::f64::consts::LN_2;

use super::ledger::{ReuseMode, ReusePolicy};
use super::parser::{TestCondition, Variable};
use super::CiError;

impl TestCondition {
    /// Per-variable coefficients after merging repeated variables, in `n, o, d` order.
    pub fn merged_coefficients(&self) -> [f64; 3] {
        let mut out = [0.0; 3];
        for t in &self.terms {
            let slot = Variable::ALL.iter().position(|v| *v == t.var).expect("known variable");
            out[slot] += t.coef;
        }
        out
    }

    /// Width of the interval the per-sample expression value can span.
    ///
    /// Each variable is an indicator in `[0, 1]`, so the span is the sum of
    /// absolute merged coefficients (`n - o` spans 2, `n` spans 1).
    pub fn range(&self) -> f64 {
        self.merged_coefficients().iter().map(|c| c.abs()).sum()
    }
}

/// Two-sided Hoeffding tail `2 exp(-2 N eps^2 / range^2)`.
pub fn hoeffding_tail(n: u64, epsilon: f64, range: f64) -> f64 {
    if range == 0.0 {
        return 0.0;
    }
    2.0 * (-2.0 * n as f64 * epsilon * epsilon / (range * range)).exp()
}

fn ln_tail(n: u64, epsilon: f64, range: f64) -> f64 {
    if range == 0.0 {
        return f64::NEG_INFINITY;
    }
    LN_2 - 2.0 * n as f64 * epsilon * epsilon / (range * range)
}

fn check_epsilon(cond: &TestCondition) -> Result<(), CiError> {
    if cond.epsilon > 0.0 && cond.epsilon.is_finite() {
        Ok(())
    } else {
        Err(CiError::ZeroEpsilon)
    }
}

/// Smallest `N >= 1` satisfying `holds`, starting near the real-valued solution `approx`.
fn minimal_n(approx: f64, holds: impl Fn(u64) -> bool) -> Result<u64, CiError> {
    // 2^63 keeps the +1 steps below from overflowing.
    if !approx.is_finite() || approx >= 9.2e18 {
        return Err(CiError::SampleSizeOverflow);
    }
    let mut n = (approx.ceil() as u64).max(1);
    while !holds(n) {
        n += 1;
    }
    while n > 1 && holds(n - 1) {
        n -= 1;
    }
    Ok(n)
}

/// Smallest `N` with `2 exp(-2 N eps^2 / range^2) <= delta`.
pub fn required_sample_size(cond: &TestCondition, delta: f64) -> Result<u64, CiError> {
    check_epsilon(cond)?;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(CiError::InvalidDelta(delta));
    }
    let (eps, r) = (cond.epsilon, cond.range());
    let approx = r * r * (2.0 / delta).ln() / (2.0 * eps * eps);
    minimal_n(approx, |n| hoeffding_tail(n, eps, r) <= delta)
}

/// As [`required_sample_size`], with the per-test failure probability given
/// as its natural log so that tiny budgets like `2^-5000` stay representable.
pub fn required_sample_size_ln(cond: &TestCondition, ln_delta: f64) -> Result<u64, CiError> {
    check_epsilon(cond)?;
    if !(ln_delta < 0.0) || ln_delta.is_infinite() {
        return Err(CiError::InvalidDelta(ln_delta.exp()));
    }
    let (eps, r) = (cond.epsilon, cond.range());
    let approx = r * r * (LN_2 - ln_delta) / (2.0 * eps * eps);
    minimal_n(approx, |n| ln_tail(n, eps, r) <= ln_delta)
}

fn ln_delta_for(delta: f64, reuses: u64, mode: ReuseMode) -> f64 {
    match (mode, reuses) {
        (_, 0 | 1) => delta.ln(),
        (ReuseMode::NonAdaptive, h) => delta.ln() - (h as f64).ln(),
        (ReuseMode::AdaptiveBinary, h) => delta.ln() - h as f64 * LN_2,
    }
}

/// Failure probability allotted to each evaluation: `delta / H` without
/// feedback, `delta / 2^H` with binary feedback. A single use gets `delta`
/// in both modes. May underflow to 0 for huge adaptive budgets; use
/// [`per_test_ln_delta`] there.
pub fn per_test_delta(policy: &ReusePolicy) -> f64 {
    match (policy.mode, policy.reuses) {
        (_, 0 | 1) => policy.delta,
        (ReuseMode::NonAdaptive, h) => policy.delta / h as f64,
        (ReuseMode::AdaptiveBinary, h) if h <= 1074 => policy.delta * (-(h as f64)).exp2(),
        (ReuseMode::AdaptiveBinary, h) => (ln_delta_for(policy.delta, h, ReuseMode::AdaptiveBinary)).exp(),
    }
}

pub fn per_test_ln_delta(policy: &ReusePolicy) -> f64 {
    ln_delta_for(policy.delta, policy.reuses, policy.mode)
}

/// Test-set size needed to serve every evaluation allowed by `policy`.
pub fn required_for_policy(cond: &TestCondition, policy: &ReusePolicy) -> Result<u64, CiError> {
    required_sample_size_ln(cond, per_test_ln_delta(policy))
}

/// Largest `H` whose per-test requirement fits in `n` samples; 0 if even a
/// single use does not fit. Saturates at `u64::MAX`.
pub fn max_reuses(n: u64, cond: &TestCondition, delta: f64, mode: ReuseMode) -> Result<u64, CiError> {
    check_epsilon(cond)?;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(CiError::InvalidDelta(delta));
    }
    let fits = |h: u64| -> Result<bool, CiError> {
        match required_sample_size_ln(cond, ln_delta_for(delta, h, mode)) {
            Ok(req) => Ok(req <= n),
            Err(CiError::SampleSizeOverflow) => Ok(false),
            Err(e) => Err(e),
        }
    };
    if !fits(1)? {
        return Ok(0);
    }
    // Exponential probe for a failing upper bound, then bisect.
    let mut lo = 1u64;
    let mut hi = 2u64;
    loop {
        if !fits(hi)? {
            break;
        }
        lo = hi;
        if hi == u64::MAX {
            return Ok(u64::MAX);
        }
        hi = hi.checked_mul(2).unwrap_or(u64::MAX);
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if fits(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ci::{parse_condition, IllDefinedPolicy};
    use proptest::prelude::*;

    fn policy(delta: f64, reuses: u64, mode: ReuseMode) -> ReusePolicy {
        ReusePolicy::new(reuses, delta, mode, IllDefinedPolicy::ForceReject).unwrap()
    }

    // Independent oracle: linear scan from 1.
    fn scan_required(eps: f64, range: f64, delta: f64) -> u64 {
        let mut n = 1u64;
        while 2.0 * (-2.0 * n as f64 * eps * eps / (range * range)).exp() > delta {
            n += 1;
        }
        n
    }

    #[test]
    fn closed_form_fixtures() {
        let n = parse_condition("n > 0.8 +/- 0.01").unwrap();
        assert_eq!(required_sample_size(&n, 0.001).unwrap(), 38005);
        let half = parse_condition("n > 0.8 +/- 0.5").unwrap();
        assert_eq!(required_sample_size(&half, 0.5).unwrap(), 3);
        let diff = parse_condition("n - o > 0.02 +/- 0.01").unwrap();
        let got = required_sample_size(&diff, 0.001).unwrap();
        assert!(hoeffding_tail(got, 0.01, 2.0) <= 0.001);
        assert!(hoeffding_tail(got - 1, 0.01, 2.0) > 0.001);
    }

    #[test]
    fn range_merges_repeated_variables() {
        assert_eq!(parse_condition("n - o > 0").unwrap().range(), 2.0);
        assert_eq!(parse_condition("n - n + o > 0").unwrap().range(), 1.0);
        assert_eq!(parse_condition("0.5*n - 2*d > 0").unwrap().range(), 2.5);
        let zero = parse_condition("n - n > 0 +/- 0.1").unwrap();
        assert_eq!(required_sample_size(&zero, 0.01).unwrap(), 1);
    }

    #[test]
    fn rejects_degenerate_inputs() {
        let c = parse_condition("n > 0.5").unwrap();
        assert!(matches!(required_sample_size(&c, 0.1), Err(CiError::ZeroEpsilon)));
        let c = parse_condition("n > 0.5 +/- 0.1").unwrap();
        assert!(matches!(required_sample_size(&c, 0.0), Err(CiError::InvalidDelta(_))));
        assert!(matches!(required_sample_size(&c, 1.0), Err(CiError::InvalidDelta(_))));
    }

    #[test]
    fn per_test_delta_modes() {
        assert!((per_test_delta(&policy(0.1, 10, ReuseMode::NonAdaptive)) - 0.01).abs() < 1e-15);
        let a = policy(0.1, 10, ReuseMode::AdaptiveBinary);
        assert_eq!(per_test_delta(&a), 0.1 / 1024.0);
        assert!((per_test_ln_delta(&a).exp() - 0.1 / 1024.0).abs() < 1e-12);
        for mode in [ReuseMode::NonAdaptive, ReuseMode::AdaptiveBinary] {
            assert_eq!(per_test_delta(&policy(0.2, 1, mode)), 0.2);
        }
        // Far past f64 underflow the log path still works.
        let huge = policy(0.1, 5000, ReuseMode::AdaptiveBinary);
        assert_eq!(per_test_delta(&huge), 0.0);
        assert!((per_test_ln_delta(&huge) - (0.1f64.ln() - 5000.0 * LN_2)).abs() < 1e-9);
    }

    #[test]
    fn mode_dominance() {
        let c = parse_condition("n - o > 0.02 +/- 0.01").unwrap();
        let single = required_for_policy(&c, &policy(0.05, 1, ReuseMode::NonAdaptive)).unwrap();
        for h in 2..200 {
            let na = required_for_policy(&c, &policy(0.05, h, ReuseMode::NonAdaptive)).unwrap();
            let ad = required_for_policy(&c, &policy(0.05, h, ReuseMode::AdaptiveBinary)).unwrap();
            assert!(ad >= na, "h={h}");
            assert!(na > single && ad > single, "h={h}");
        }
    }

    #[test]
    fn max_reuses_matches_brute_force_scan() {
        let c = parse_condition("n > 0.9 +/- 0.05").unwrap();
        for mode in [ReuseMode::NonAdaptive, ReuseMode::AdaptiveBinary] {
            for n in [0u64, 1, 100, 400, 738, 739, 1500, 3000] {
                let mut expected = 0;
                for h in 1..100_000u64 {
                    let req = required_for_policy(&c, &policy(0.05, h, mode)).unwrap();
                    if req <= n {
                        expected = h;
                    } else if mode == ReuseMode::AdaptiveBinary || h > 50_000 {
                        break;
                    }
                }
                let got = max_reuses(n, &c, 0.05, mode).unwrap();
                if mode == ReuseMode::NonAdaptive && expected >= 50_000 {
                    assert!(got >= expected, "n={n}");
                } else {
                    assert_eq!(got, expected, "mode={mode:?} n={n}");
                }
            }
        }
    }

    #[test]
    fn max_reuses_saturates() {
        let c = parse_condition("n > 0.9 +/- 0.5").unwrap();
        assert_eq!(max_reuses(u64::MAX / 4, &c, 0.05, ReuseMode::NonAdaptive).unwrap(), u64::MAX);
    }

    proptest! {
        #[test]
        fn inversion_is_minimal(eps in 0.005f64..0.5, delta in 1e-6f64..0.99, two in any::<bool>()) {
            let text = if two { format!("n - o > 0 +/- {eps}") } else { format!("o < 1 +/- {eps}") };
            let c = parse_condition(&text).unwrap();
            let n = required_sample_size(&c, delta).unwrap();
            let r = c.range();
            prop_assert!(hoeffding_tail(n, eps, r) <= delta);
            prop_assert!(n == 1 || hoeffding_tail(n - 1, eps, r) > delta);
            if n < 200_000 {
                prop_assert_eq!(n, scan_required(eps, r, delta));
            }
            let ln = required_sample_size_ln(&c, delta.ln()).unwrap();
            prop_assert!(ln.abs_diff(n) <= 1);
        }

        #[test]
        fn max_reuses_monotone_in_n(a in 0u64..20_000, b in 0u64..20_000, adaptive in any::<bool>()) {
            let c = parse_condition("n - o > 0.02 +/- 0.05").unwrap();
            let mode = if adaptive { ReuseMode::AdaptiveBinary } else { ReuseMode::NonAdaptive };
            let (lo, hi) = (a.min(b), a.max(b));
            prop_assert!(max_reuses(lo, &c, 0.05, mode).unwrap() <= max_reuses(hi, &c, 0.05, mode).unwrap());
        }
    }
}
