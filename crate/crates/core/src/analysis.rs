//! Corruption probability over time: closed form, Markov chains, and
//! analytical upper bounds.
//!
//! All three routes model the same renewal structure. Time is divided into
//! RAAIMT windows; in each window the tracked victim either accumulates
//! hammers or is refreshed (its charge resets), and it also resets at every
//! auto-refresh, i.e. at refresh-interval boundaries every `W = APR / N`
//! windows. Intervals are therefore independent trials, and a horizon of `T`
//! intervals composes as `1 - (1 - q)^T` in the log domain.
//!
//! Per-window stop probabilities (ideal sampling, not the LFSR):
//!
//! - BRC, either attack: 1/N.
//! - BRC-VL, traditional low-frequency attack: (N-1)/N^2, with an extra
//!   double hammer (+2 that window) at probability 1/N^2 when the level-2
//!   victims of the sampled aggressor are refreshed.
//! - BRC-VL, victim-focused attack: the level-2 victim gains one hammer per
//!   level-1 refresh (probability (N-1)/N) and resets when level 2 is
//!   selected (probability 1/N).
//!
//! Hammers land before any same-window refresh: once the accumulated count
//! reaches HC the flip is permanent and a later refresh cannot undo it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::logprob::LogProb;
use crate::mitigation::Scheme;
use crate::timing::TimingParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    /// One aggressor activate hidden among N-1 decoys per window.
    Traditional,
    /// Back-to-back aggressor activates; mitigation refreshes hammer the
    /// level-2 victims.
    VictimFocused,
}

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("invalid analysis parameters: {0}")]
    BadParams(String),
    #[error(
        "chain with {states} states over {windows} windows per interval is \
         infeasible; reduce HC or raise RAAIMT (horizons always compose at \
         refresh-interval granularity)"
    )]
    ChainTooLarge { states: u64, windows: u64 },
    #[error("interval absorption underflowed f64 for HC={hc}, N={n}")]
    Underflow { hc: u32, n: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisParams {
    pub hc: u32,
    pub raaimt: u32,
    pub scheme: Scheme,
    pub victim_levels: u32,
    pub attack: AttackKind,
    pub timing: TimingParams,
    pub horizon_s: f64,
    pub scrub_period_s: Option<f64>,
    /// RAMPART + SDDC: corruption needs two successes before correction.
    pub requires_two_successes: bool,
    /// Simultaneous attacks per bank, k.
    pub simultaneous: u32,
    pub banks_attacked: u32,
    pub channels: u32,
    /// Model the BRC-VL double-hammer term (on for fidelity; desk-scale
    /// correspondence studies may disable it).
    pub double_hammer: bool,
}

impl AnalysisParams {
    pub fn new(hc: u32, raaimt: u32, scheme: Scheme, attack: AttackKind) -> Self {
        AnalysisParams {
            hc,
            raaimt,
            scheme,
            victim_levels: 4,
            attack,
            timing: TimingParams::ddr5_5600(),
            horizon_s: 86_400.0,
            scrub_period_s: None,
            requires_two_successes: false,
            simultaneous: 1,
            banks_attacked: 1,
            channels: 1,
            double_hammer: true,
        }
    }

    pub fn validate(&self) -> Result<(), AnalysisError> {
        if self.hc < 1 {
            return Err(AnalysisError::BadParams("hc must be >= 1".into()));
        }
        if !(2..=256).contains(&self.raaimt) {
            return Err(AnalysisError::BadParams(format!(
                "raaimt {} outside [2, 256]",
                self.raaimt
            )));
        }
        if self.horizon_s <= 0.0 {
            return Err(AnalysisError::BadParams("horizon must be positive".into()));
        }
        if self.simultaneous < 1 || self.banks_attacked < 1 || self.channels < 1 {
            return Err(AnalysisError::BadParams("k, banks, channels must be >= 1".into()));
        }
        Ok(())
    }

    /// Windows elapsed in `t` seconds: (t / tREF) * (APR / N).
    pub fn windows_in(&self, t_s: f64) -> f64 {
        (t_s / self.timing.tref_s()) * (self.timing.apr() as f64 / self.raaimt as f64)
    }
}

/// Effective hammer count under BRC-VL double hammering:
/// HCe = round(HC * (1 - 1/N^2)).
pub fn effective_hc(hc: u32, n: u32) -> u32 {
    (hc as f64 * (1.0 - 1.0 / (n as f64 * n as f64))).round() as u32
}

/// Closed-form probability of one successful attack: per refresh interval the
/// level-1 victims must evade refresh HCe times, q = (1 - (N-1)/N^2)^HCe;
/// over a horizon of T = horizon/tREF intervals, 1 - (1-q)^T.
pub fn para_success_probability(hc: u32, n: u32, timing: &TimingParams, horizon_s: f64) -> LogProb {
    let q = para_interval_probability(hc, n);
    let t = (horizon_s / timing.tref_s()).max(1.0);
    q.union_iid(t)
}

/// The single-interval closed-form success probability.
pub fn para_interval_probability(hc: u32, n: u32) -> LogProb {
    assert!(n >= 2);
    let nf = n as f64;
    let hce = effective_hc(hc, n);
    LogProb::from_ln(hce as f64 * (1.0 - (nf - 1.0) / (nf * nf)).ln())
}

/// Two successes in consecutive refresh intervals: the square of the
/// single-interval probability, composed over horizon/(2 tREF) pairs.
pub fn para_two_success_probability(
    hc: u32,
    n: u32,
    timing: &TimingParams,
    horizon_s: f64,
) -> LogProb {
    let q = para_interval_probability(hc, n);
    let pairs = (horizon_s / (2.0 * timing.tref_s())).max(1.0);
    q.powf(2.0).union_iid(pairs)
}

/// Prefactor stop probability and exponent decay rate for the bound, per
/// scheme and attack.
fn bound_rates(scheme: Scheme, attack: AttackKind, n: u32) -> (f64, f64) {
    let nf = n as f64;
    match (scheme, attack) {
        (Scheme::Brc, _) => (1.0 / nf, 1.0 / nf),
        (Scheme::BrcVl, AttackKind::Traditional) => {
            ((nf - 1.0) / (nf * nf), (nf - 1.0) / (nf * nf + 1.0))
        }
        (Scheme::BrcVl, AttackKind::VictimFocused) => (1.0 / nf, (nf - 1.0) / (nf * nf + 1.0)),
        (Scheme::None, _) => (1.0, 0.0),
    }
}

/// Analytical upper bound on the corruption probability at time `t_s`.
///
/// Single attack: s p e^(-rate HC) over the s windows in `t_s`. k
/// simultaneous attacks multiply the bound by k, capped at s e^(-rate HC).
/// Two-success configurations square the per-scrub-period single bound
/// (times C(k,2) for k >= 2) and compose over scrub periods.
pub fn analytical_bound_at(params: &AnalysisParams, t_s: f64) -> LogProb {
    let n = params.raaimt;
    let (p, rate) = bound_rates(params.scheme, params.attack, n);
    let hc = params.hc as f64;
    let k = params.simultaneous as f64;

    let single_at = |t: f64| -> LogProb {
        let s = params.windows_in(t).max(1.0);
        LogProb::from_ln(s.ln() + p.ln() - rate * hc)
    };
    let cap_at = |t: f64| -> LogProb {
        let s = params.windows_in(t).max(1.0);
        LogProb::from_ln(s.ln() - rate * hc)
    };

    let per_unit = if params.requires_two_successes {
        let d = params.scrub_period_s.unwrap_or(t_s).min(t_s);
        let single = single_at(d).scale(k).min(cap_at(d));
        let pairs_factor = if params.simultaneous >= 2 { k * (k - 1.0) / 2.0 } else { 1.0 };
        let per_period = single.powf(2.0).scale(pairs_factor);
        per_period.union_iid((t_s / d).max(1.0))
    } else {
        single_at(t_s).scale(k).min(cap_at(t_s))
    };

    let units = (params.banks_attacked * params.channels) as f64;
    if units > 1.0 {
        per_unit.union_iid(units)
    } else {
        per_unit
    }
}

pub fn analytical_bound(params: &AnalysisParams) -> LogProb {
    analytical_bound_at(params, params.horizon_s)
}

/// One per-window transition outcome: `hammers` land first (absorbing if the
/// running total reaches HC), then `stop` resets the survivors to state 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowOutcome {
    pub hammers: u32,
    pub stop: bool,
    pub probability: f64,
}

/// Absorbing chain over accumulated hammers on the tracked victim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovChain {
    pub hc: u32,
    pub outcomes: Vec<WindowOutcome>,
    /// Windows per refresh interval, W = floor(APR / N).
    pub windows_per_interval: u64,
}

impl MarkovChain {
    pub fn from_params(params: &AnalysisParams) -> Result<Self, AnalysisError> {
        params.validate()?;
        let n = params.raaimt as f64;
        let outcomes = match (params.scheme, params.attack) {
            (Scheme::None, AttackKind::Traditional) => {
                vec![WindowOutcome { hammers: 1, stop: false, probability: 1.0 }]
            }
            (Scheme::None, AttackKind::VictimFocused) => {
                // No mitigation refreshes to weaponize; nothing disturbs the
                // level-2 victim.
                vec![WindowOutcome { hammers: 0, stop: false, probability: 1.0 }]
            }
            (Scheme::Brc, AttackKind::Traditional) => vec![
                WindowOutcome { hammers: 1, stop: true, probability: 1.0 / n },
                WindowOutcome { hammers: 1, stop: false, probability: (n - 1.0) / n },
            ],
            (Scheme::Brc, AttackKind::VictimFocused)
            | (Scheme::BrcVl, AttackKind::VictimFocused) => vec![
                WindowOutcome { hammers: 0, stop: true, probability: 1.0 / n },
                WindowOutcome { hammers: 1, stop: false, probability: (n - 1.0) / n },
            ],
            (Scheme::BrcVl, AttackKind::Traditional) => {
                if params.double_hammer {
                    vec![
                        WindowOutcome { hammers: 1, stop: true, probability: (n - 1.0) / (n * n) },
                        WindowOutcome { hammers: 2, stop: false, probability: 1.0 / (n * n) },
                        WindowOutcome { hammers: 1, stop: false, probability: (n - 1.0) / n },
                    ]
                } else {
                    vec![
                        WindowOutcome { hammers: 1, stop: true, probability: (n - 1.0) / (n * n) },
                        WindowOutcome {
                            hammers: 1,
                            stop: false,
                            probability: 1.0 - (n - 1.0) / (n * n),
                        },
                    ]
                }
            }
        };
        let windows = params.timing.apr() / params.raaimt as u64;
        let chain = MarkovChain { hc: params.hc, outcomes, windows_per_interval: windows };
        chain.check_kernel()?;
        if params.hc as u64 * windows > 5_000_000_000 {
            return Err(AnalysisError::ChainTooLarge {
                states: params.hc as u64,
                windows,
            });
        }
        Ok(chain)
    }

    fn check_kernel(&self) -> Result<(), AnalysisError> {
        let sum: f64 = self.outcomes.iter().map(|o| o.probability).sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(AnalysisError::BadParams(format!("kernel rows sum to {sum}")));
        }
        Ok(())
    }

    /// Absorption probability within one refresh interval, starting from a
    /// freshly refreshed victim.
    pub fn interval_absorption(&self) -> Result<LogProb, AnalysisError> {
        self.absorption_within(self.windows_per_interval)
    }

    /// Absorption probability within the first `windows` windows.
    pub fn absorption_within(&self, windows: u64) -> Result<LogProb, AnalysisError> {
        let hc = self.hc as usize;
        let max_inc = self.outcomes.iter().map(|o| o.hammers).max().unwrap_or(0) as usize;
        if max_inc == 0 {
            return Ok(LogProb::ZERO);
        }
        let mut v = vec![0.0f64; hc];
        let mut next = vec![0.0f64; hc];
        v[0] = 1.0;
        let mut absorbed = 0.0f64;
        let mut hi = 0usize;
        for _ in 0..windows {
            let live = 1.0 - absorbed;
            if live <= 0.0 {
                break;
            }
            next[..=hi.min(hc - 1)].fill(0.0);
            let top = hi.min(hc - 1);
            let mut reset_mass = 0.0f64;
            for s in 0..=top {
                let m = v[s];
                if m == 0.0 {
                    continue;
                }
                for o in &self.outcomes {
                    let share = m * o.probability;
                    let t = s + o.hammers as usize;
                    if t >= hc {
                        absorbed += share;
                    } else if o.stop {
                        reset_mass += share;
                    } else {
                        next[t] += share;
                    }
                }
            }
            next[0] += reset_mass;
            hi = (hi + max_inc).min(hc - 1);
            std::mem::swap(&mut v, &mut next);
        }
        if absorbed == 0.0 {
            return Err(AnalysisError::Underflow {
                hc: self.hc,
                n: 0,
            });
        }
        Ok(LogProb::from_linear(absorbed.min(1.0)))
    }
}

/// Compose a per-interval absorption probability up to time `t_s` under the
/// scrub / two-success / simultaneous-attack / system-aggregation structure
/// of `params`.
pub fn compose_at(params: &AnalysisParams, q_interval: LogProb, t_s: f64) -> LogProb {
    let tref = params.timing.tref_s();
    let k = params.simultaneous;
    let per_unit = if params.requires_two_successes {
        let d = params.scrub_period_s.unwrap_or(t_s).min(t_s);
        let q_single = q_interval.union_iid((d / tref).max(1.0));
        let per_period = if k <= 1 {
            // Oracle attacker: the same victim address in a second device.
            q_single.powf(2.0)
        } else {
            q_single.at_least_two_of(k)
        };
        per_period.union_iid((t_s / d).max(1.0))
    } else {
        let p = q_interval.union_iid((t_s / tref).max(1.0));
        p.scale(k as f64)
    };
    aggregate_system(per_unit, params.banks_attacked, params.channels)
}

/// Corruption probability at `t_s` via the Markov route.
pub fn corruption_probability_at(params: &AnalysisParams, t_s: f64) -> Result<LogProb, AnalysisError> {
    let chain = MarkovChain::from_params(params)?;
    let q = chain.interval_absorption()?;
    Ok(compose_at(params, q, t_s))
}

/// Time-indexed corruption probabilities, stored as log10 values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityCurve {
    pub times_s: Vec<f64>,
    pub log10_p: Vec<f64>,
}

impl ProbabilityCurve {
    pub fn is_non_decreasing(&self) -> bool {
        self.log10_p.windows(2).all(|w| w[1] >= w[0] - 1e-12)
    }

    /// Log-spaced time grid from one refresh interval out to `horizon_s`.
    pub fn default_grid(timing: &TimingParams, horizon_s: f64, points: usize) -> Vec<f64> {
        let lo = timing.tref_s().min(horizon_s);
        if points <= 1 || lo >= horizon_s {
            return vec![horizon_s];
        }
        let (lln, hln) = (lo.ln(), horizon_s.ln());
        (0..points)
            .map(|i| (lln + (hln - lln) * i as f64 / (points - 1) as f64).exp())
            .collect()
    }
}

/// Markov corruption curve over the given time points.
pub fn markov_curve(params: &AnalysisParams, times_s: &[f64]) -> Result<ProbabilityCurve, AnalysisError> {
    let chain = MarkovChain::from_params(params)?;
    let q = chain.interval_absorption()?;
    Ok(ProbabilityCurve {
        times_s: times_s.to_vec(),
        log10_p: times_s.iter().map(|&t| compose_at(params, q, t).log10()).collect(),
    })
}

/// Analytical-bound curve over the given time points.
pub fn bound_curve(params: &AnalysisParams, times_s: &[f64]) -> ProbabilityCurve {
    ProbabilityCurve {
        times_s: times_s.to_vec(),
        log10_p: times_s.iter().map(|&t| analytical_bound_at(params, t).log10()).collect(),
    }
}

/// Corruption requires two successes within one scrub period; first-attack
/// damage is corrected at the next scrub.
pub fn scrub_composition(q_single_per_period: LogProb, scrub_period_s: f64, horizon_s: f64) -> LogProb {
    q_single_per_period.powf(2.0).union_iid((horizon_s / scrub_period_s).max(1.0))
}

/// Probability of corruption in at least one of `banks * channels`
/// independently attacked units.
pub fn aggregate_system(p_unit: LogProb, banks_attacked: u32, channels: u32) -> LogProb {
    let units = banks_attacked as u64 * channels as u64;
    if units <= 1 {
        return p_unit;
    }
    p_unit.union_iid(units as f64)
}

/// Corruption probability under `k` simultaneous attacks against one bank.
pub fn simultaneous_attack_probability(
    params: &AnalysisParams,
    k: u32,
) -> Result<LogProb, AnalysisError> {
    let mut p = params.clone();
    p.simultaneous = k;
    corruption_probability_at(&p, p.horizon_s)
}

pub const SECONDS_PER_DAY: f64 = 86_400.0;
pub const SECONDS_PER_YEAR: f64 = 365.0 * 86_400.0;
