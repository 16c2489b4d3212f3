//! Modeling and analysis toolkit for RowHammer mitigation in server DRAM ranks.
//!
//! The crate is organized around the lifecycle of an attack study:
//!
//! - [`remap`] — per-device controller-row-address remapping (circular shifts
//!   or LFSR permutations), victim address computation, and exhaustive
//!   verification that no controller address pair is a neighbor pair in more
//!   than one device.
//! - [`ecc`] — symbol-level SDDC/chipkill decode outcome model and scrub
//!   bandwidth arithmetic.
//! - [`lfsr`] / [`mitigation`] — the controller-side refresh-management
//!   engine: bank activate counters, per-window target sampling, and
//!   BRC / BRC-VL RFM semantics.
//! - [`attack`] — activate-trace generators for low-frequency decoy-mixed and
//!   high-frequency (victim-focused) attacks, plus multi-stream orchestration.
//! - [`analysis`] — closed-form, Markov-chain, and upper-bound corruption
//!   probability over time, with scrub and system-level composition.
//! - [`sim`] — seeded Monte Carlo simulation of a full rank under attack,
//!   the ground-truth oracle for the analysis module at desk scale.
//! - [`timing`] — bank-state bandwidth-efficiency simulation of RFM overhead.
//! - [`scenario`] — the strict config format shared with the CLI.

pub mod analysis;
pub mod attack;
pub mod ecc;
pub mod lfsr;
pub mod logprob;
pub mod mitigation;
pub mod remap;
pub mod scenario;
pub mod sim;
pub mod timing;

pub use analysis::{AnalysisParams, AttackKind, MarkovChain, ProbabilityCurve};
pub use ecc::{DecodeClass, DecodeOutcome, EccConfig, ErrorPattern};
pub use lfsr::Lfsr16;
pub use logprob::LogProb;
pub use mitigation::{MitigationConfig, MitigationState, RfmResult, Scheme};
pub use remap::{DeviceMap, RankGeometry, RemapFn, RowAddress, UniquenessReport};
pub use scenario::Scenario;
pub use sim::{SimConfig, SimOutcome};
pub use timing::TimingParams;
