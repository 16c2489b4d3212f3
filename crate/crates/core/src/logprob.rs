//! Probabilities in the natural-log domain.
//!
//! Corruption probabilities in this crate span from near-certainty down past
//! 1e-157, so every composition (powers over billions of refresh intervals,
//! squaring, unions over banks and channels) is done on log values and only
//! converted to linear form for display.

use serde::{Deserialize, Serialize};

/// ln(1 - e^x) for x <= 0, stable across the full range.
pub fn ln_one_minus_exp(x: f64) -> f64 {
    debug_assert!(x <= 0.0 || x.is_nan());
    if x == 0.0 {
        return f64::NEG_INFINITY;
    }
    if x > -std::f64::consts::LN_2 {
        // e^x close to 1: expm1 keeps the cancellation exact.
        (-f64::exp_m1(x)).ln()
    } else {
        f64::ln_1p(-x.exp())
    }
}

/// A probability stored as ln(p). `ZERO` is ln 0 = -inf, `ONE` is ln 1 = 0.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LogProb(f64);

impl LogProb {
    pub const ZERO: LogProb = LogProb(f64::NEG_INFINITY);
    pub const ONE: LogProb = LogProb(0.0);

    pub fn from_linear(p: f64) -> Self {
        debug_assert!((0.0..=1.0).contains(&p), "probability {p} outside [0,1]");
        LogProb(p.ln())
    }

    /// Wrap a precomputed ln(p); values above 0 clamp to certainty.
    pub fn from_ln(ln_p: f64) -> Self {
        LogProb(ln_p.min(0.0))
    }

    pub fn ln(self) -> f64 {
        self.0
    }

    pub fn log10(self) -> f64 {
        self.0 / std::f64::consts::LN_10
    }

    pub fn linear(self) -> f64 {
        self.0.exp()
    }

    pub fn is_zero(self) -> bool {
        self.0 == f64::NEG_INFINITY
    }

    /// p * q.
    pub fn and(self, other: LogProb) -> LogProb {
        LogProb(self.0 + other.0)
    }

    /// p^k.
    pub fn powf(self, k: f64) -> LogProb {
        if self.is_zero() && k == 0.0 {
            return LogProb::ONE;
        }
        LogProb::from_ln(self.0 * k)
    }

    /// 1 - p.
    pub fn complement(self) -> LogProb {
        if self.is_zero() {
            return LogProb::ONE;
        }
        LogProb(ln_one_minus_exp(self.0))
    }

    /// k * p, clamped to 1. Exact (in the log domain) below the clamp.
    pub fn scale(self, k: f64) -> LogProb {
        debug_assert!(k >= 0.0);
        if k == 0.0 || self.is_zero() {
            return LogProb::ZERO;
        }
        LogProb::from_ln(self.0 + k.ln())
    }

    /// 1 - (1 - p)^t: probability at least one of `t` independent trials with
    /// probability `p` succeeds. Stable for p down past 1e-300 and t up to
    /// ~1e15.
    pub fn union_iid(self, t: f64) -> LogProb {
        debug_assert!(t >= 0.0);
        if t == 0.0 || self.is_zero() {
            return LogProb::ZERO;
        }
        if self.0 >= 0.0 {
            return LogProb::ONE;
        }
        if self.0 > -500.0 {
            let ln_one_minus_p = ln_one_minus_exp(self.0);
            return LogProb::from_ln(ln_one_minus_exp(t * ln_one_minus_p));
        }
        // p far below linear range: ln(1-p) = -p to full precision.
        let ln_tp = self.0 + t.ln();
        if ln_tp < -700.0 {
            // t*p itself below linear range: P = t*p to full precision.
            return LogProb::from_ln(ln_tp);
        }
        LogProb::from_ln(ln_one_minus_exp(-ln_tp.exp()))
    }

    /// The smaller of two probabilities.
    pub fn min(self, other: LogProb) -> LogProb {
        if self.0 <= other.0 {
            self
        } else {
            other
        }
    }

    /// Probability that at least 2 of `k` independent trials with probability
    /// `p` succeed: 1 - (1-p)^k - k p (1-p)^(k-1).
    pub fn at_least_two_of(self, k: u32) -> LogProb {
        if k < 2 || self.is_zero() {
            return LogProb::ZERO;
        }
        let kf = k as f64;
        if self.0 > -15.0 {
            let p = self.linear();
            let q = 1.0 - p;
            let val = 1.0 - q.powf(kf) - kf * p * q.powf(kf - 1.0);
            return LogProb::from_ln(val.max(0.0).ln());
        }
        // Small-p expansion: C(k,2) p^2 with relative error O(k p).
        LogProb::from_ln((kf * (kf - 1.0) / 2.0).ln() + 2.0 * self.0)
    }
}

impl std::fmt::Display for LogProb {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "1e{:.4}", self.log10())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn union_matches_direct_in_linear_range() {
        for &(q, t) in &[(0.1f64, 5.0f64), (1e-3, 1000.0), (1e-9, 2.7e6), (0.5, 2.0), (1e-12, 1.0)] {
            let direct = (1.0 - (1.0 - q).powf(t)).ln();
            let log = LogProb::from_linear(q).union_iid(t).ln();
            assert!(close(log, direct, 1e-6), "q={q} t={t}: {log} vs {direct}");
        }
    }

    #[test]
    fn union_deep_underflow() {
        // q = 1e-200 over 1e9 trials: P = 1e-191.
        let q = LogProb::from_ln(-200.0 * std::f64::consts::LN_10);
        let p = q.union_iid(1e9);
        assert!(close(p.log10(), -191.0, 1e-9), "{}", p.log10());
        // q = 1e-320 (below f64 normals), t = 1: identity.
        let q = LogProb::from_ln(-320.0 * std::f64::consts::LN_10);
        assert!(close(q.union_iid(1.0).log10(), -320.0, 1e-9));
    }

    #[test]
    fn squares_are_exact_in_log_domain() {
        let q = LogProb::from_ln(-26.0 * std::f64::consts::LN_10);
        assert_eq!(q.powf(2.0).ln(), 2.0 * q.ln());
    }

    #[test]
    fn at_least_two_matches_direct() {
        for &(q, k) in &[(0.3, 10u32), (1e-2, 10), (1e-6, 10), (0.5, 2)] {
            let p = q as f64;
            let qq = 1.0 - p;
            let direct = 1.0 - qq.powi(k as i32) - k as f64 * p * qq.powi(k as i32 - 1);
            let log = LogProb::from_linear(p).at_least_two_of(k).linear();
            assert!(close(log, direct, 1e-6), "q={q} k={k}: {log} vs {direct}");
        }
        // Tiny regime: C(k,2) q^2.
        let q = LogProb::from_ln(-80.0 * std::f64::consts::LN_10);
        let p = q.at_least_two_of(10);
        assert!(close(p.log10(), (45.0f64).log10() - 160.0, 1e-9));
    }

    #[test]
    fn complement_round_trip() {
        for &p in &[0.0, 1e-12, 0.25, 0.5, 0.9999] {
            let lp = LogProb::from_linear(p);
            let back = lp.complement().complement().linear();
            assert!(close(back, p, 1e-9), "{p} -> {back}");
        }
    }

    #[test]
    fn scale_caps_at_one() {
        let p = LogProb::from_linear(0.5);
        assert_eq!(p.scale(10.0), LogProb::ONE);
        let tiny = LogProb::from_ln(-100.0);
        assert!(close(tiny.scale(10.0).ln(), -100.0 + 10.0f64.ln(), 1e-12));
    }
}
