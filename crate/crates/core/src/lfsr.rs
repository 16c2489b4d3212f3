//! 16-bit Fibonacci LFSR used by the mitigation engine's target sampler.
//!
//! The register produces one bit per clock; the engine samples the full
//! register once per RAAIMT window. The default tap set (bits 16, 15, 13, 4)
//! is maximal-length, which the tests verify exhaustively. Any other maximal
//! polynomial works and the taps are configurable.

use serde::{Deserialize, Serialize};

/// Tap positions 16, 15, 13, 4 (1-indexed), as a mask over bits 15, 14, 12, 3.
pub const DEFAULT_TAPS: u16 = 0xD008;

/// Fallback seed substituted when a scenario asks for the all-zero state,
/// which an LFSR cannot leave.
pub const DEFAULT_SEED: u16 = 0xACE1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lfsr16 {
    state: u16,
    taps: u16,
    bits_generated: u64,
}

impl Lfsr16 {
    pub fn new(seed: u16) -> Self {
        Self::with_taps(seed, DEFAULT_TAPS)
    }

    pub fn with_taps(seed: u16, taps: u16) -> Self {
        Lfsr16 {
            state: if seed == 0 { DEFAULT_SEED } else { seed },
            taps,
            bits_generated: 0,
        }
    }

    pub fn state(&self) -> u16 {
        self.state
    }

    pub fn bits_generated(&self) -> u64 {
        self.bits_generated
    }

    /// Advance one clock and return the generated bit.
    pub fn next_bit(&mut self) -> u16 {
        let fb = (self.state & self.taps).count_ones() as u16 & 1;
        self.state = (self.state << 1) | fb;
        self.bits_generated += 1;
        fb
    }

    /// Advance 16 clocks and return the register, one fresh 16-bit draw.
    pub fn next_u16(&mut self) -> u16 {
        for _ in 0..16 {
            self.next_bit();
        }
        self.state
    }

    /// Advance 8 clocks and return the low 8 bits.
    pub fn next_u8(&mut self) -> u8 {
        for _ in 0..8 {
            self.next_bit();
        }
        (self.state & 0xFF) as u8
    }

    /// Uniform draw over `[0, n)` by rejection on 8- or 16-bit chunks, so the
    /// result is exactly uniform for any `n` (no modulo bias). Powers of two
    /// never reject.
    pub fn uniform(&mut self, n: u32) -> u32 {
        assert!(n >= 1 && n <= 1 << 16, "uniform range must be in [1, 65536]");
        if n == 1 {
            return 0;
        }
        if n <= 256 {
            let limit = 256 - (256 % n);
            loop {
                let v = self.next_u8() as u32;
                if v < limit {
                    return v % n;
                }
            }
        } else {
            let limit = (1u32 << 16) - ((1u32 << 16) % n);
            loop {
                let v = self.next_u16() as u32;
                if v < limit {
                    return v % n;
                }
            }
        }
    }
}
