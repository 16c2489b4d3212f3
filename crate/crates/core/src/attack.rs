//! Activate-trace generators for the two attack families and multi-stream
//! orchestration.
//!
//! Low-frequency attacks hide one aggressor activate among N-1 decoys per
//! RAAIMT window; high-frequency attacks issue back-to-back activates to the
//! aggressor set, which maximizes RFM rate and drives victim-focused
//! (Half-Double-style) hammering of level-2 rows through the engine's level-1
//! refreshes.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::remap::{RankGeometry, RemapError, RowAddress};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackPattern {
    LowFreq,
    HighFreq,
}

#[derive(Debug, Error, PartialEq)]
pub enum AttackError {
    #[error("attack needs at least one aggressor")]
    NoAggressors,
    #[error("low-frequency attack needs a decoy pool (at least one row)")]
    EmptyDecoyPool,
    #[error("decoy {decoy} is within the exclusion zone of aggressor {aggressor} in device {device}")]
    DecoyTooClose { decoy: RowAddress, aggressor: RowAddress, device: u8 },
    #[error("no aggressor in device {device} reaches victim {victim} at level {level}: {source}")]
    SharedVictimInfeasible { device: u8, victim: RowAddress, level: u32, source: RemapError },
}

/// Attack description for one stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub pattern: AttackPattern,
    /// Single-sided with 1 entry, multi-sided with more; all affect the same
    /// victim set.
    pub aggressors: Vec<RowAddress>,
    #[serde(default)]
    pub decoy_pool: Vec<RowAddress>,
    /// Banks attacked per channel.
    pub banks: u32,
    pub channels: u32,
    /// Simultaneous attacks per bank, k.
    pub simultaneous: u32,
    /// Attacker observes first success and retargets another device.
    pub oracle: bool,
}

impl AttackSpec {
    pub fn single(pattern: AttackPattern, aggressor: RowAddress) -> Self {
        AttackSpec {
            pattern,
            aggressors: vec![aggressor],
            decoy_pool: Vec::new(),
            banks: 1,
            channels: 1,
            simultaneous: 1,
            oracle: false,
        }
    }
}

/// One entry of an activate trace; entry `i` occurs at tick `i` (tRC apart).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub row: RowAddress,
    pub aggressor: bool,
}

/// Time-ordered activates to one bank at tRC spacing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivateTrace {
    pub bank: u32,
    pub entries: Vec<TraceEntry>,
}

impl ActivateTrace {
    pub fn aggressor_count(&self) -> usize {
        self.entries.iter().filter(|e| e.aggressor).count()
    }
}

/// Smallest controller-space distance between two rows as seen by any device
/// (internal rows compared per device).
fn min_internal_distance(rank: &RankGeometry, a: RowAddress, b: RowAddress) -> u32 {
    rank.device_maps
        .iter()
        .filter_map(|dev| match (dev.map_row(a), dev.map_row(b)) {
            (Ok(x), Ok(y)) => Some(x.0.abs_diff(y.0)),
            _ => None,
        })
        .min()
        .unwrap_or(u32::MAX)
}

/// Decoy rows must never hammer or refresh the victims of any aggressor in
/// any device: a refresh at distance `l <= VL` disturbs rows out to
/// `VL + blast_radius`, so decoys stay strictly further than
/// `VL + 2 * blast_radius` from every aggressor in every device's internal
/// space.
pub fn decoy_exclusion_distance(victim_levels: u32, blast_radius: u32) -> u32 {
    victim_levels + 2 * blast_radius
}

/// Draw a decoy pool of `size` rows outside the exclusion zone of all
/// aggressors in all devices.
pub fn build_decoy_pool<R: Rng + ?Sized>(
    rank: &RankGeometry,
    aggressors: &[RowAddress],
    victim_levels: u32,
    size: usize,
    rng: &mut R,
) -> Result<Vec<RowAddress>, AttackError> {
    let exclusion = decoy_exclusion_distance(victim_levels, rank.blast_radius as u32);
    let rows = rank.rows();
    let mut pool = Vec::with_capacity(size);
    let mut attempts = 0u64;
    while pool.len() < size {
        attempts += 1;
        if attempts > 1000 * size as u64 + 10_000 {
            return Err(AttackError::EmptyDecoyPool);
        }
        let cand = RowAddress(rng.gen_range(0..rows));
        let clear = aggressors.iter().all(|&a| min_internal_distance(rank, cand, a) > exclusion)
            && !pool.contains(&cand);
        if clear {
            pool.push(cand);
        }
    }
    Ok(pool)
}

/// Check a caller-supplied decoy pool against the exclusion rule.
pub fn validate_decoy_pool(
    rank: &RankGeometry,
    aggressors: &[RowAddress],
    victim_levels: u32,
    pool: &[RowAddress],
) -> Result<(), AttackError> {
    let exclusion = decoy_exclusion_distance(victim_levels, rank.blast_radius as u32);
    for &d in pool {
        for &a in aggressors {
            for dev in &rank.device_maps {
                if let (Ok(x), Ok(y)) = (dev.map_row(d), dev.map_row(a)) {
                    if x.0.abs_diff(y.0) <= exclusion {
                        return Err(AttackError::DecoyTooClose {
                            decoy: d,
                            aggressor: a,
                            device: dev.device_id,
                        });
                    }
                }
            }
        }
    }
    Ok(())
}

/// Generate `windows` RAAIMT windows of N activates each, with exactly one
/// aggressor activate at a uniformly random position per window and decoys
/// elsewhere. Multi-sided aggressor lists rotate across windows.
pub fn low_freq_trace<R: Rng + ?Sized>(
    spec: &AttackSpec,
    n: u32,
    windows: u64,
    rng: &mut R,
) -> Result<ActivateTrace, AttackError> {
    if spec.aggressors.is_empty() {
        return Err(AttackError::NoAggressors);
    }
    if n > 1 && spec.decoy_pool.is_empty() {
        return Err(AttackError::EmptyDecoyPool);
    }
    let mut entries = Vec::with_capacity((windows * n as u64) as usize);
    for w in 0..windows {
        let pos = rng.gen_range(0..n);
        let agg = spec.aggressors[(w % spec.aggressors.len() as u64) as usize];
        for i in 0..n {
            if i == pos {
                entries.push(TraceEntry { row: agg, aggressor: true });
            } else {
                let d = spec.decoy_pool[rng.gen_range(0..spec.decoy_pool.len())];
                entries.push(TraceEntry { row: d, aggressor: false });
            }
        }
    }
    Ok(ActivateTrace { bank: 0, entries })
}

/// Back-to-back activates over the aggressor set, round-robin.
pub fn high_freq_trace(spec: &AttackSpec, activates: u64) -> Result<ActivateTrace, AttackError> {
    if spec.aggressors.is_empty() {
        return Err(AttackError::NoAggressors);
    }
    let entries = (0..activates)
        .map(|i| TraceEntry {
            row: spec.aggressors[(i % spec.aggressors.len() as u64) as usize],
            aggressor: true,
        })
        .collect();
    Ok(ActivateTrace { bank: 0, entries })
}

/// One orchestrated attack stream: per-device aggressor addresses that all
/// share a single victim controller address.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamPlan {
    pub channel: u32,
    pub bank: u32,
    pub victim: RowAddress,
    /// Aggressor for the shared victim in each device, device order.
    pub aggressors_by_device: Vec<RowAddress>,
    /// Device attacked first (streams start spread across devices).
    pub start_device: usize,
    pub oracle: bool,
}

impl StreamPlan {
    pub fn aggressor_for(&self, device_index: usize) -> RowAddress {
        self.aggressors_by_device[device_index % self.aggressors_by_device.len()]
    }
}

/// Build the multi-bank schedule: `k` interleaved streams per attacked bank
/// across `banks x channels`, each stream knowing every device's aggressor
/// for the shared victim controller address.
pub fn orchestrate(
    rank: &RankGeometry,
    victim: RowAddress,
    level: u32,
    spec: &AttackSpec,
) -> Result<Vec<StreamPlan>, AttackError> {
    let mut by_device = Vec::with_capacity(rank.devices() as usize);
    for dev in &rank.device_maps {
        // Prefer the upper neighbor, fall back to the lower at edge rows.
        let agg = dev
            .aggressor_for_victim(victim, level, true)
            .or_else(|_| dev.aggressor_for_victim(victim, level, false))
            .map_err(|source| AttackError::SharedVictimInfeasible {
                device: dev.device_id,
                victim,
                level,
                source,
            })?;
        by_device.push(agg);
    }
    let devices = by_device.len();
    let mut plans = Vec::new();
    for channel in 0..spec.channels {
        for bank in 0..spec.banks {
            for k in 0..spec.simultaneous {
                plans.push(StreamPlan {
                    channel,
                    bank,
                    victim,
                    aggressors_by_device: by_device.clone(),
                    start_device: (k as usize) % devices,
                    oracle: spec.oracle,
                });
            }
        }
    }
    Ok(plans)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mitigation::{MitigationConfig, MitigationState, Scheme};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn spec_with_pool(rank: &RankGeometry, aggressor: u32, rng: &mut ChaCha12Rng) -> AttackSpec {
        let mut spec = AttackSpec::single(AttackPattern::LowFreq, RowAddress(aggressor));
        spec.decoy_pool =
            build_decoy_pool(rank, &spec.aggressors, 2, 64, rng).expect("pool");
        spec
    }

    #[test]
    fn low_freq_window_composition() {
        let rank = RankGeometry::shift_by_id(2, 0, 12);
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let spec = spec_with_pool(&rank, 0x100, &mut rng);
        let n = 4;
        let trace = low_freq_trace(&spec, n, 3, &mut rng).unwrap();
        assert_eq!(trace.entries.len(), 12);
        assert_eq!(trace.aggressor_count(), 3);
        for w in trace.entries.chunks(n as usize) {
            assert_eq!(w.iter().filter(|e| e.aggressor).count(), 1);
        }
    }

    #[test]
    fn low_freq_n1_degenerates_to_high_freq() {
        let rank = RankGeometry::shift_by_id(2, 0, 12);
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let mut spec = spec_with_pool(&rank, 0x100, &mut rng);
        spec.decoy_pool.clear();
        let trace = low_freq_trace(&spec, 1, 10, &mut rng).unwrap();
        assert_eq!(trace.entries.len(), 10);
        assert!(trace.entries.iter().all(|e| e.aggressor && e.row == RowAddress(0x100)));
    }

    #[test]
    fn aggressor_position_uniform() {
        let rank = RankGeometry::shift_by_id(2, 0, 12);
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let spec = spec_with_pool(&rank, 0x100, &mut rng);
        let n = 8usize;
        let windows = 100_000u64;
        let trace = low_freq_trace(&spec, n as u32, windows, &mut rng).unwrap();
        let mut counts = vec![0u32; n];
        for w in trace.entries.chunks(n) {
            counts[w.iter().position(|e| e.aggressor).unwrap()] += 1;
        }
        let p = 1.0 / n as f64;
        let sigma = (windows as f64 * p * (1.0 - p)).sqrt();
        for (i, &c) in counts.iter().enumerate() {
            assert!(
                (c as f64 - windows as f64 * p).abs() < 3.0 * sigma,
                "position {i}: {c}"
            );
        }
    }

    #[test]
    fn high_freq_single_and_double_sided() {
        let spec = AttackSpec::single(AttackPattern::HighFreq, RowAddress(0x50));
        let trace = high_freq_trace(&spec, 100).unwrap();
        assert!(trace.entries.iter().all(|e| e.row == RowAddress(0x50)));

        let mut two = AttackSpec::single(AttackPattern::HighFreq, RowAddress(0x50));
        two.aggressors.push(RowAddress(0x4E));
        let trace = high_freq_trace(&two, 6).unwrap();
        let rows: Vec<u32> = trace.entries.iter().map(|e| e.row.0).collect();
        assert_eq!(rows, vec![0x50, 0x4E, 0x50, 0x4E, 0x50, 0x4E]);
    }

    #[test]
    fn decoys_respect_exclusion_in_every_device() {
        let rank = RankGeometry::shift_by_id(8, 2, 12);
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let aggressors = [RowAddress(0x123)];
        let pool = build_decoy_pool(&rank, &aggressors, 2, 128, &mut rng).unwrap();
        validate_decoy_pool(&rank, &aggressors, 2, &pool).unwrap();
        let bad = vec![RowAddress(0x124)];
        assert!(validate_decoy_pool(&rank, &aggressors, 2, &bad).is_err());
    }

    #[test]
    fn orchestrate_shared_victim_fig5b() {
        let rank = RankGeometry::shift_by_id(8, 2, 16);
        let spec = AttackSpec::single(AttackPattern::LowFreq, RowAddress(0));
        let plans = orchestrate(&rank, RowAddress(0x0000), 1, &spec).unwrap();
        assert_eq!(plans.len(), 1);
        assert_eq!(plans[0].aggressors_by_device[0], RowAddress(0x0001));
        assert_eq!(plans[0].aggressors_by_device[1], RowAddress(0x8000));
        // Every stream's aggressor has the common victim in its device.
        for (d, &agg) in plans[0].aggressors_by_device.iter().enumerate() {
            let victims = rank.device_maps[d].victim_addresses(agg, 1).unwrap();
            assert!(victims.contains(&RowAddress(0x0000)), "device {d}");
        }
    }

    #[test]
    fn orchestrate_system_scale_stream_count() {
        let rank = RankGeometry::shift_by_id(8, 2, 16);
        let mut spec = AttackSpec::single(AttackPattern::LowFreq, RowAddress(0));
        spec.banks = 16;
        spec.channels = 32;
        let plans = orchestrate(&rank, RowAddress(0x40), 1, &spec).unwrap();
        assert_eq!(plans.len(), 512);
    }

    #[test]
    fn sampled_target_hits_aggressor_at_one_over_n() {
        // Feed low-frequency windows through the engine; the captured target
        // equals the aggressor with probability 1/N.
        let rank = RankGeometry::shift_by_id(2, 0, 12);
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let spec = spec_with_pool(&rank, 0x100, &mut rng);
        let n = 8u32;
        let windows = 50_000u64;
        let trace = low_freq_trace(&spec, n, windows, &mut rng).unwrap();
        let mut engine = MitigationState::new(MitigationConfig::new(Scheme::BrcVl, n), 1);
        let mut hits = 0u64;
        for chunk in trace.entries.chunks(n as usize) {
            for e in chunk {
                let out = engine.record_activate(0, e.row).unwrap();
                if out.rfm_due {
                    if engine.captured_target(0).unwrap().0 == RowAddress(0x100) {
                        hits += 1;
                    }
                    engine.issue_rfm(0, &mut rng).unwrap();
                }
            }
        }
        let p = 1.0 / n as f64;
        let sigma = (windows as f64 * p * (1.0 - p)).sqrt();
        assert!(
            (hits as f64 - windows as f64 * p).abs() < 3.0 * sigma,
            "{hits} of {windows}"
        );
    }
}
