//! Controller-side RowHammer mitigation state machine.
//!
//! Per-bank Bank Activate Counters track activates; every RAAIMT window of N
//! activates, one activate is sampled (via the shared LFSR) as the DRFM
//! target, together with a victim level. When a BAC reaches N an RFM is due;
//! the DRAM then refreshes victims of the captured target:
//!
//! - BRC always refreshes the level-1 victim pair and includes the level-2
//!   pair at a hidden ratio; the command always occupies 240 ns.
//! - BRC-VL refreshes exactly one victim pair, level 1 with probability
//!   (N-1)/N, deeper levels geometrically less often; 130 ns.
//!
//! Activates to a bank must be suspended when its BAC reaches 2N.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lfsr::{self, Lfsr16};
use crate::remap::RowAddress;

pub const TDRFM_BRC_NS: f64 = 240.0;
pub const TDRFM_BRC_VL_NS: f64 = 130.0;
pub const MAX_RAAIMT: u32 = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    None,
    Brc,
    BrcVl,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MitigationError {
    #[error("bank {0}: activate while BAC at the suspension limit")]
    ActivateSuspended(usize),
    #[error("bank {0}: RFM issued with no captured DRFM target")]
    NoCapturedTarget(usize),
    #[error("invalid mitigation config: {0}")]
    BadConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MitigationConfig {
    pub scheme: Scheme,
    /// RAAIMT window size N.
    pub raaimt: u32,
    /// Victim levels VL for BRC-VL.
    pub victim_levels: u32,
    /// BRC level-2 refresh ratio; defaults to 1/N.
    pub brc_ratio: Option<f64>,
    pub lfsr_seed: u16,
    pub lfsr_taps: u16,
}

impl MitigationConfig {
    pub fn new(scheme: Scheme, raaimt: u32) -> Self {
        MitigationConfig {
            scheme,
            raaimt,
            victim_levels: 2,
            brc_ratio: None,
            lfsr_seed: lfsr::DEFAULT_SEED,
            lfsr_taps: lfsr::DEFAULT_TAPS,
        }
    }

    pub fn validate(&self) -> Result<(), MitigationError> {
        if self.raaimt < 1 || self.raaimt > MAX_RAAIMT {
            return Err(MitigationError::BadConfig(format!(
                "raaimt {} outside [1, {MAX_RAAIMT}]",
                self.raaimt
            )));
        }
        if self.victim_levels < 1 {
            return Err(MitigationError::BadConfig("victim_levels must be >= 1".into()));
        }
        if let Some(r) = self.brc_ratio {
            if !(0.0..=1.0).contains(&r) {
                return Err(MitigationError::BadConfig(format!("brc_ratio {r} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn brc_ratio(&self) -> f64 {
        self.brc_ratio.unwrap_or(1.0 / self.raaimt as f64)
    }

    pub fn tdrfm_ns(&self) -> f64 {
        match self.scheme {
            Scheme::Brc => TDRFM_BRC_NS,
            Scheme::BrcVl => TDRFM_BRC_VL_NS,
            Scheme::None => 0.0,
        }
    }

    /// Activate-suspension threshold, 2N.
    pub fn bac_limit(&self) -> u32 {
        2 * self.raaimt
    }
}

/// Ideal victim-level selection probabilities for BRC-VL: level `l < VL` has
/// probability (N-1)/N^l and level VL takes the remaining 1/N^(VL-1); the
/// vector sums to exactly 1.
pub fn victim_level_distribution(n: u32, vl: u32) -> Vec<f64> {
    assert!(n >= 2 && vl >= 1);
    let nf = n as f64;
    let mut probs: Vec<f64> = (1..vl).map(|l| (nf - 1.0) / nf.powi(l as i32)).collect();
    probs.push(1.0 / nf.powi(vl as i32 - 1));
    probs
}

/// Minimal victim levels so that N^(VL+1) covers the activates per refresh
/// period, i.e. ceil(log_N(APR) - 1), floored at 1. Integer arithmetic.
pub fn required_victim_levels(n: u32, apr: u64) -> u32 {
    assert!(n >= 2 && apr >= 1);
    let mut vl = 1u32;
    let mut power = (n as u128).pow(2); // N^(VL+1)
    while power < apr as u128 {
        vl += 1;
        power *= n as u128;
    }
    vl
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct BankState {
    bac: u32,
    /// Activates into the current window.
    window_pos: u32,
    sampled_index: u32,
    sampled_level: u32,
    needs_sample: bool,
    /// Armed DRFM target: (row, victim level).
    captured: Option<(RowAddress, u32)>,
    /// Rows activated in the current window.
    window_rows: Vec<RowAddress>,
}

/// Outcome of recording one activate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActivateOutcome {
    /// BAC reached N; the controller should issue an RFM to this bank.
    pub rfm_due: bool,
    /// This activate was the sampled one and was captured as the DRFM target.
    pub captured: bool,
}

/// Result of one RFM command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfmResult {
    pub target: RowAddress,
    /// Victim levels refreshed; rows `target +/- l` for each `l` here.
    pub levels: Vec<u32>,
    pub duration_ns: f64,
}

impl RfmResult {
    /// Refreshed rows in a flat (unremapped) address space of `rows` rows,
    /// as (row, level) pairs; edge targets yield one-sided sets.
    pub fn flat_rows(&self, rows: u32) -> Vec<(u32, u32)> {
        let mut out = Vec::new();
        for &l in &self.levels {
            if self.target.0 >= l {
                out.push((self.target.0 - l, l));
            }
            if self.target.0 + l < rows {
                out.push((self.target.0 + l, l));
            }
        }
        out
    }
}

/// Mutable mitigation state for one simulated channel.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MitigationState {
    pub cfg: MitigationConfig,
    lfsr: Lfsr16,
    banks: Vec<BankState>,
    pub windows_sampled: u64,
    pub rfms_issued: u64,
}

impl MitigationState {
    pub fn new(cfg: MitigationConfig, banks: usize) -> Self {
        let lfsr = Lfsr16::with_taps(cfg.lfsr_seed, cfg.lfsr_taps);
        let mut bank_states = Vec::with_capacity(banks);
        for _ in 0..banks {
            bank_states.push(BankState { needs_sample: true, ..BankState::default() });
        }
        MitigationState { cfg, lfsr, banks: bank_states, windows_sampled: 0, rfms_issued: 0 }
    }

    pub fn bac(&self, bank: usize) -> u32 {
        self.banks[bank].bac
    }

    pub fn captured_target(&self, bank: usize) -> Option<(RowAddress, u32)> {
        self.banks[bank].captured
    }

    pub fn window_rows(&self, bank: usize) -> &[RowAddress] {
        &self.banks[bank].window_rows
    }

    /// Sample the target index and victim level for the window now starting
    /// on `bank`. Driven automatically by [`Self::record_activate`]; must run
    /// exactly once per window start.
    ///
    /// Each bank sees a distinct fixed rotation of the shared LFSR register.
    /// Up to 8 bits pick the target index and the remaining bits pick the
    /// victim level; draws are rejection-sampled so both are exactly uniform
    /// (no modulo bias) for any N.
    pub fn sample_window(&mut self, bank: usize) -> (u32, u32) {
        let n = self.cfg.raaimt;
        let vl = self.cfg.victim_levels;
        let rot = (bank % 16) as u32;
        let snap = self.lfsr.next_u16().rotate_left(rot);
        let lo = (snap & 0xFF) as u32;
        let hi = (snap >> 8) as u32;

        let limit = 256 - (256 % n);
        let draw = |first: Option<u32>, lfsr: &mut Lfsr16| -> u32 {
            let mut v = first.unwrap_or_else(|| (lfsr.next_u16().rotate_left(rot) & 0xFF) as u32);
            while v >= limit {
                v = (lfsr.next_u16().rotate_left(rot) & 0xFF) as u32;
            }
            v % n
        };

        let target = if n == 1 { 0 } else { draw(Some(lo), &mut self.lfsr) };

        // Geometric level selection: level l if the first l-1 draws landed on
        // the designated value (0) and draw l did not; all-zero selects VL.
        let mut level = vl;
        if n > 1 {
            for l in 1..vl {
                let first = if l == 1 { Some(hi) } else { None };
                if draw(first, &mut self.lfsr) != 0 {
                    level = l;
                    break;
                }
            }
        } else {
            level = 1;
        }

        let state = &mut self.banks[bank];
        state.sampled_index = target;
        state.sampled_level = level;
        state.needs_sample = false;
        state.window_rows.clear();
        self.windows_sampled += 1;
        (target, level)
    }

    /// Record an activate to `bank`. Increments the BAC, advances the RAAIMT
    /// window, and captures the DRFM target when the sampled position is hit.
    pub fn record_activate(
        &mut self,
        bank: usize,
        row: RowAddress,
    ) -> Result<ActivateOutcome, MitigationError> {
        if self.cfg.scheme == Scheme::None {
            return Ok(ActivateOutcome { rfm_due: false, captured: false });
        }
        if self.banks[bank].bac >= self.cfg.bac_limit() {
            return Err(MitigationError::ActivateSuspended(bank));
        }
        if self.banks[bank].needs_sample {
            self.sample_window(bank);
        }
        let n = self.cfg.raaimt;
        let state = &mut self.banks[bank];
        state.window_rows.push(row);
        let captured = state.window_pos == state.sampled_index;
        if captured {
            state.captured = Some((row, state.sampled_level));
        }
        state.window_pos += 1;
        if state.window_pos == n {
            state.window_pos = 0;
            state.needs_sample = true;
        }
        state.bac += 1;
        Ok(ActivateOutcome { rfm_due: state.bac >= n, captured })
    }

    /// Execute one RFM against `bank`, consuming its captured target. The BAC
    /// is decremented by N, to a minimum of 0. Refresh commands never
    /// decrement BACs.
    pub fn issue_rfm<R: Rng + ?Sized>(
        &mut self,
        bank: usize,
        rng: &mut R,
    ) -> Result<RfmResult, MitigationError> {
        let n = self.cfg.raaimt;
        let (target, level) = self.banks[bank]
            .captured
            .take()
            .ok_or(MitigationError::NoCapturedTarget(bank))?;
        let levels = match self.cfg.scheme {
            Scheme::Brc => {
                let mut levels = vec![1];
                if rng.gen::<f64>() < self.cfg.brc_ratio() {
                    levels.push(2);
                }
                levels
            }
            Scheme::BrcVl => vec![level],
            Scheme::None => Vec::new(),
        };
        let state = &mut self.banks[bank];
        state.bac = state.bac.saturating_sub(n);
        self.rfms_issued += 1;
        Ok(RfmResult { target, levels, duration_ns: self.cfg.tdrfm_ns() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn cfg(scheme: Scheme, n: u32, vl: u32) -> MitigationConfig {
        let mut c = MitigationConfig::new(scheme, n);
        c.victim_levels = vl;
        c
    }

    #[test]
    fn distribution_n16_vl2() {
        assert_eq!(victim_level_distribution(16, 2), vec![15.0 / 16.0, 1.0 / 16.0]);
        assert_eq!(victim_level_distribution(16, 1), vec![1.0]);
    }

    #[test]
    fn distribution_n16_vl4_telescopes() {
        let d = victim_level_distribution(16, 4);
        assert_eq!(d, vec![15.0 / 16.0, 15.0 / 256.0, 15.0 / 4096.0, 1.0 / 4096.0]);
        assert_eq!(d.iter().sum::<f64>(), 1.0);
        let d24 = victim_level_distribution(24, 4);
        assert!((d24.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn required_levels_paper_values() {
        assert_eq!(required_victim_levels(16, 689_655), 4);
        assert_eq!(required_victim_levels(24, 689_655), 4);
        assert_eq!(required_victim_levels(16, 16), 1);
        assert_eq!(required_victim_levels(16, 1), 1);
    }

    #[test]
    fn rfm_due_on_nth_activate() {
        let mut st = MitigationState::new(cfg(Scheme::BrcVl, 16, 2), 1);
        for i in 0..16 {
            let out = st.record_activate(0, RowAddress(i)).unwrap();
            assert_eq!(out.rfm_due, i == 15, "activate {i}");
        }
    }

    #[test]
    fn suspension_at_twice_raaimt() {
        let mut st = MitigationState::new(cfg(Scheme::BrcVl, 4, 2), 1);
        for i in 0..8 {
            st.record_activate(0, RowAddress(i)).unwrap();
        }
        assert_eq!(st.bac(0), 8);
        assert_eq!(
            st.record_activate(0, RowAddress(9)),
            Err(MitigationError::ActivateSuspended(0))
        );
    }

    #[test]
    fn capture_is_window_member() {
        let mut st = MitigationState::new(cfg(Scheme::BrcVl, 8, 2), 2);
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for step in 0..4000u32 {
            let bank = (step % 2) as usize;
            let row = RowAddress(rng.gen_range(0..1024));
            let out = st.record_activate(bank, row).unwrap();
            if let Some((t, _)) = st.captured_target(bank) {
                if out.captured {
                    assert_eq!(t, row);
                }
            }
            if out.rfm_due {
                st.issue_rfm(bank, &mut rng).unwrap();
            }
        }
    }

    #[test]
    fn forced_capture_at_index_zero() {
        let mut st = MitigationState::new(cfg(Scheme::BrcVl, 4, 2), 1);
        // Walk windows until one samples index 0, then confirm the first
        // activate of that window is captured.
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for w in 0..200u32 {
            let (idx, _) = st.sample_window(0);
            let mut hit = false;
            for i in 0..4 {
                let row = RowAddress(w * 8 + i);
                let out = st.record_activate(0, row).unwrap();
                if i == 0 && idx == 0 {
                    assert!(out.captured);
                    assert_eq!(st.captured_target(0).unwrap().0, row);
                    hit = true;
                }
            }
            if st.bac(0) >= 4 {
                st.issue_rfm(0, &mut rng).unwrap();
            }
            if hit {
                return;
            }
        }
        panic!("no window sampled index 0 in 200 windows");
    }

    #[test]
    fn brc_vl_levels_and_duration() {
        let mut st = MitigationState::new(cfg(Scheme::BrcVl, 16, 2), 1);
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for _ in 0..16 {
            st.record_activate(0, RowAddress(100)).unwrap();
        }
        let rfm = st.issue_rfm(0, &mut rng).unwrap();
        assert_eq!(rfm.target, RowAddress(100));
        assert_eq!(rfm.levels.len(), 1);
        assert_eq!(rfm.duration_ns, TDRFM_BRC_VL_NS);
        let rows = rfm.flat_rows(1 << 16);
        let l = rfm.levels[0];
        assert_eq!(rows, vec![(100 - l, l), (100 + l, l)]);
        // No second RFM without a fresh capture.
        assert_eq!(st.issue_rfm(0, &mut rng), Err(MitigationError::NoCapturedTarget(0)));
    }

    #[test]
    fn brc_always_240ns_level2_at_ratio() {
        let n = 16u32;
        let mut st = MitigationState::new(cfg(Scheme::Brc, n, 2), 1);
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let trials = 100_000u32;
        let mut level2 = 0u32;
        for _ in 0..trials {
            for _ in 0..n {
                st.record_activate(0, RowAddress(42)).unwrap();
            }
            let rfm = st.issue_rfm(0, &mut rng).unwrap();
            assert_eq!(rfm.duration_ns, TDRFM_BRC_NS);
            assert!(rfm.levels.contains(&1));
            if rfm.levels.contains(&2) {
                level2 += 1;
            }
        }
        let p = 1.0 / n as f64;
        let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
        assert!(
            (level2 as f64 - trials as f64 * p).abs() < 3.0 * sigma,
            "level2 {level2} of {trials}"
        );
    }

    #[test]
    fn bac_floor_at_zero() {
        let mut st = MitigationState::new(cfg(Scheme::Brc, 16, 2), 1);
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for _ in 0..16 {
            st.record_activate(0, RowAddress(7)).unwrap();
        }
        st.issue_rfm(0, &mut rng).unwrap();
        assert_eq!(st.bac(0), 0);
        // A second RFM on a re-captured target still floors at zero.
        for _ in 0..16 {
            st.record_activate(0, RowAddress(7)).unwrap();
        }
        let before = st.bac(0);
        st.issue_rfm(0, &mut rng).unwrap();
        assert_eq!(st.bac(0), before.saturating_sub(16));
    }

    #[test]
    fn level_frequencies_n16_vl2() {
        let mut st = MitigationState::new(cfg(Scheme::BrcVl, 16, 2), 1);
        let windows = 100_000u32;
        let mut level2 = 0u32;
        for _ in 0..windows {
            let (_, level) = st.sample_window(0);
            if level == 2 {
                level2 += 1;
            }
        }
        let p = 1.0 / 16.0;
        let sigma = (windows as f64 * p * (1.0 - p)).sqrt();
        assert!(
            (level2 as f64 - windows as f64 * p).abs() < 3.0 * sigma,
            "level2 {level2} of {windows}"
        );
    }

    #[test]
    fn n1_target_always_zero() {
        let mut st = MitigationState::new(cfg(Scheme::BrcVl, 1, 2), 1);
        for _ in 0..100 {
            let (idx, level) = st.sample_window(0);
            assert_eq!(idx, 0);
            assert_eq!(level, 1);
        }
    }

    #[test]
    fn banks_share_stream_but_decorrelate() {
        let base = cfg(Scheme::BrcVl, 16, 2);
        let mut a = MitigationState::new(base.clone(), 32);
        let mut b = MitigationState::new(base, 32);
        let windows = 100_000;
        let mut equal = 0u32;
        for _ in 0..windows {
            let (ta, _) = a.sample_window(0);
            let (tb, _) = b.sample_window(1);
            if ta == tb {
                equal += 1;
            }
        }
        let freq = equal as f64 / windows as f64;
        // Identical streams viewed through different bit arrangements should
        // agree about as often as chance (1/N), far from lockstep.
        assert!(freq < 2.0 / 16.0, "match rate {freq}");
        assert!(freq > 0.5 / 16.0, "match rate {freq}");
    }

    #[test]
    fn deterministic_replay() {
        let run = || {
            let mut st = MitigationState::new(cfg(Scheme::BrcVl, 8, 4), 4);
            let mut rng = ChaCha12Rng::seed_from_u64(99);
            let mut log = Vec::new();
            for step in 0..5000u32 {
                let bank = (step % 4) as usize;
                let out = st.record_activate(bank, RowAddress(step % 512)).unwrap();
                if out.rfm_due {
                    log.push((bank, st.issue_rfm(bank, &mut rng).unwrap()));
                }
            }
            log
        };
        assert_eq!(run(), run());
    }
}
