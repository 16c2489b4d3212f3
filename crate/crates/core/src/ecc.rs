//! Symbol-level SDDC/chipkill decode outcome model.
//!
//! Decoding is modeled at the symbol-outcome level: a pattern of erroneous
//! symbols either lies within the code's correction capability, or it is
//! detected-but-uncorrectable, or (with a small published probability) the
//! decoder miscorrects and the result is silent data corruption. No
//! Galois-field arithmetic is performed; codeword contents never matter to
//! any result in this crate.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

/// SDC probability quoted for an RS(40,32)-class code built on 8-bit symbols;
/// no symbol layout accompanies it, so it is provided as a constant only.
pub const SDC_BOUND_RS40_32_SYMBOL8: f64 = 2.2e-5;
/// SDC probability quoted for an RS(36,32)-class code built on 8-bit symbols.
pub const SDC_BOUND_RS36_32_SYMBOL8: f64 = 9.5e-3;

/// Probability that the decoder fails to detect (miscorrects) a pattern with
/// a symbol-error count inside the band. Counts not covered by any band are
/// always detected.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiscorrectionBand {
    pub min_errors: u32,
    /// Inclusive; `None` leaves the band open-ended.
    pub max_errors: Option<u32>,
    pub p_undetected: f64,
}

/// Code parameters plus the symbol-to-device layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EccConfig {
    pub name: String,
    /// Total symbols per codeword (n).
    pub total_symbols: u32,
    /// Data symbols per codeword (k).
    pub data_symbols: u32,
    pub symbol_bits: u32,
    /// Symbols each device contributes to one codeword; device `d` owns
    /// symbols `[d * spd, (d+1) * spd)`.
    pub symbols_per_device: u32,
    /// Maximum correctable symbol errors, t = (n - k) / 2.
    pub correction_capability: u32,
    pub miscorrection: Vec<MiscorrectionBand>,
}

impl EccConfig {
    /// RS(10,8) over 4-bit symbols, one symbol per device (Fig. 6a layout):
    /// corrects any number of bit errors in one symbol.
    pub fn rs10_8() -> Self {
        EccConfig {
            name: "rs10_8".into(),
            total_symbols: 10,
            data_symbols: 8,
            symbol_bits: 4,
            symbols_per_device: 1,
            correction_capability: 1,
            miscorrection: vec![
                MiscorrectionBand { min_errors: 2, max_errors: Some(2), p_undetected: 0.53 },
                MiscorrectionBand { min_errors: 3, max_errors: None, p_undetected: 0.59 },
            ],
        }
    }

    /// RS(40,32) over 16-bit symbols, four symbols per device (Fig. 6b
    /// layout, one symbol per data pin): corrects up to 4 symbol errors.
    pub fn rs40_32() -> Self {
        EccConfig {
            name: "rs40_32".into(),
            total_symbols: 40,
            data_symbols: 32,
            symbol_bits: 16,
            symbols_per_device: 4,
            correction_capability: 4,
            miscorrection: vec![MiscorrectionBand {
                min_errors: 5,
                max_errors: None,
                p_undetected: 5.0e-15,
            }],
        }
    }

    /// RS(36,32) over 16-bit symbols on a 9-device rank: corrects up to 2
    /// symbol errors.
    pub fn rs36_32() -> Self {
        EccConfig {
            name: "rs36_32".into(),
            total_symbols: 36,
            data_symbols: 32,
            symbol_bits: 16,
            symbols_per_device: 4,
            correction_capability: 2,
            miscorrection: vec![MiscorrectionBand {
                min_errors: 3,
                max_errors: None,
                p_undetected: 1.5e-7,
            }],
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "rs10_8" => Some(Self::rs10_8()),
            "rs40_32" => Some(Self::rs40_32()),
            "rs36_32" => Some(Self::rs36_32()),
            _ => None,
        }
    }

    pub fn devices(&self) -> u32 {
        self.total_symbols / self.symbols_per_device
    }

    /// Probability a pattern with `errors` erroneous symbols goes undetected.
    pub fn p_undetected(&self, errors: u32) -> f64 {
        for band in &self.miscorrection {
            let hi_ok = band.max_errors.map_or(true, |m| errors <= m);
            if errors >= band.min_errors && hi_ok {
                return band.p_undetected;
            }
        }
        0.0
    }
}

/// The built-in code configurations.
pub fn builtin_configs() -> Vec<EccConfig> {
    vec![EccConfig::rs10_8(), EccConfig::rs40_32(), EccConfig::rs36_32()]
}

/// Erroneous symbol indices per device for one codeword; indices are
/// device-local (`< symbols_per_device`).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorPattern {
    pub per_device: BTreeMap<u8, BTreeSet<u32>>,
}

impl ErrorPattern {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn total_symbol_errors(&self) -> u32 {
        self.per_device.values().map(|s| s.len() as u32).sum()
    }

    pub fn devices_in_error(&self) -> usize {
        self.per_device.values().filter(|s| !s.is_empty()).count()
    }

    pub fn merge(&mut self, other: &ErrorPattern) {
        for (dev, syms) in &other.per_device {
            self.per_device.entry(*dev).or_default().extend(syms.iter().copied());
        }
    }
}

/// How many bits flip within one device's share of a codeword.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BitsFlipped {
    All,
    Count(u32),
}

/// Map flipped bits in one device's burst onto the symbols they corrupt.
/// Bit placement within the device is adversarial: each flipped bit lands in
/// a distinct symbol until all of the device's symbols are affected.
pub fn device_error_pattern(cfg: &EccConfig, device_id: u8, bits: BitsFlipped) -> ErrorPattern {
    let spd = cfg.symbols_per_device;
    let affected = match bits {
        BitsFlipped::All => spd,
        BitsFlipped::Count(b) => b.min(spd),
    };
    let mut pattern = ErrorPattern::empty();
    if affected > 0 {
        pattern.per_device.insert(device_id, (0..affected).collect());
    }
    pattern
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeClass {
    Clean,
    Corrected,
    DetectedUe,
    Sdc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeOutcome {
    pub class: DecodeClass,
    pub corrected_symbols: u32,
}

/// Classify a decode attempt. With `e` erroneous symbols: `e = 0` is clean,
/// `0 < e <= t` corrects, and `e > t` is detected except with the
/// configuration's miscorrection probability, drawn from `rng`.
pub fn decode<R: Rng + ?Sized>(cfg: &EccConfig, err: &ErrorPattern, rng: &mut R) -> DecodeOutcome {
    let e = err.total_symbol_errors();
    if e == 0 {
        return DecodeOutcome { class: DecodeClass::Clean, corrected_symbols: 0 };
    }
    if e <= cfg.correction_capability {
        return DecodeOutcome { class: DecodeClass::Corrected, corrected_symbols: e };
    }
    let p = cfg.p_undetected(e);
    let class = if p > 0.0 && rng.gen::<f64>() < p { DecodeClass::Sdc } else { DecodeClass::DetectedUe };
    DecodeOutcome { class, corrected_symbols: 0 }
}

/// Patrol scrub bandwidth: reading and writing back `capacity` bytes every
/// `period` seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScrubOverhead {
    /// Bytes per second moved (read + write-back).
    pub rate: f64,
    /// Fraction of peak bandwidth consumed.
    pub fraction: f64,
}

pub fn scrub_overhead(capacity_bytes: f64, period_s: f64, peak_bandwidth: f64) -> ScrubOverhead {
    assert!(period_s > 0.0 && peak_bandwidth > 0.0 && capacity_bytes >= 0.0);
    let rate = 2.0 * capacity_bytes / period_s;
    ScrubOverhead { rate, fraction: rate / peak_bandwidth }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn builtin_correction_capabilities() {
        assert_eq!(EccConfig::rs10_8().correction_capability, 1);
        assert_eq!(EccConfig::rs40_32().correction_capability, 4);
        assert_eq!(EccConfig::rs36_32().correction_capability, 2);
        for cfg in builtin_configs() {
            assert_eq!(cfg.symbols_per_device * cfg.devices(), cfg.total_symbols);
        }
    }

    #[test]
    fn zero_errors_clean() {
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        for cfg in builtin_configs() {
            let out = decode(&cfg, &ErrorPattern::empty(), &mut rng);
            assert_eq!(out.class, DecodeClass::Clean);
        }
    }

    #[test]
    fn single_device_confinement_corrects() {
        // A whole device in error stays within t for the SDDC layouts no
        // matter how many bits flipped.
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        for cfg in [EccConfig::rs40_32(), EccConfig::rs10_8()] {
            for dev in 0..cfg.devices() as u8 {
                let pat = device_error_pattern(&cfg, dev, BitsFlipped::All);
                let out = decode(&cfg, &pat, &mut rng);
                assert_eq!(out.class, DecodeClass::Corrected, "{} device {dev}", cfg.name);
                assert_eq!(out.corrected_symbols, cfg.symbols_per_device);
            }
        }
    }

    #[test]
    fn rs40_32_device3_symbol_set() {
        let pat = device_error_pattern(&EccConfig::rs40_32(), 3, BitsFlipped::All);
        assert_eq!(pat.per_device[&3], (0..4).collect());
        assert_eq!(pat.total_symbol_errors(), 4);
    }

    #[test]
    fn rs10_8_device_is_one_symbol() {
        let pat = device_error_pattern(&EccConfig::rs10_8(), 3, BitsFlipped::All);
        assert_eq!(pat.per_device[&3], std::iter::once(0).collect());
    }

    #[test]
    fn zero_bits_empty_pattern() {
        let pat = device_error_pattern(&EccConfig::rs40_32(), 0, BitsFlipped::Count(0));
        assert_eq!(pat, ErrorPattern::empty());
    }

    #[test]
    fn beyond_capability_never_corrects() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let cfg = EccConfig::rs36_32();
        let mut pat = device_error_pattern(&cfg, 0, BitsFlipped::All);
        pat.merge(&device_error_pattern(&cfg, 1, BitsFlipped::All));
        for _ in 0..1000 {
            let out = decode(&cfg, &pat, &mut rng);
            assert!(matches!(out.class, DecodeClass::DetectedUe | DecodeClass::Sdc));
        }
    }

    #[test]
    fn rs10_8_two_errors_detected_47_percent() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let cfg = EccConfig::rs10_8();
        let mut pat = device_error_pattern(&cfg, 0, BitsFlipped::All);
        pat.merge(&device_error_pattern(&cfg, 1, BitsFlipped::All));
        assert_eq!(pat.total_symbol_errors(), 2);
        let trials = 200_000u32;
        let detected = (0..trials)
            .filter(|_| decode(&cfg, &pat, &mut rng).class == DecodeClass::DetectedUe)
            .count() as f64;
        let p = 0.47;
        let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
        assert!(
            (detected - trials as f64 * p).abs() < 3.0 * sigma,
            "detected {detected} of {trials}"
        );
    }

    #[test]
    fn decode_deterministic_per_seed() {
        let cfg = EccConfig::rs10_8();
        let mut pat = device_error_pattern(&cfg, 0, BitsFlipped::All);
        pat.merge(&device_error_pattern(&cfg, 4, BitsFlipped::All));
        let run = |seed| {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            (0..100).map(|_| decode(&cfg, &pat, &mut rng).class).collect::<Vec<_>>()
        };
        assert_eq!(run(7), run(7));
        assert_ne!(run(7), run(8));
    }

    #[test]
    fn scrub_overhead_paper_numbers() {
        let o = scrub_overhead((1u64 << 40) as f64, 86400.0, 44.8e9);
        assert!((o.rate / 1e6 - 25.4517).abs() < 1e-3, "rate {}", o.rate);
        assert!((o.fraction * 100.0 - 0.056812).abs() < 1e-5, "frac {}", o.fraction);
    }

    #[test]
    fn scrub_overhead_edge_cases() {
        assert_eq!(scrub_overhead(0.0, 86400.0, 44.8e9).rate, 0.0);
        let twice = scrub_overhead((1u64 << 40) as f64, 43200.0, 44.8e9);
        assert!((twice.rate / 1e6 - 50.9033).abs() < 1e-3);
    }
}
