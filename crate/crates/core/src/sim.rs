//! Seeded Monte Carlo simulation of a rank under RowHammer attack.
//!
//! Time advances in activate ticks (tRC apart, per bank). Every activate
//! disturbs the rows within the blast radius in every device at that device's
//! mapped location; rows whose disturb counter reaches HC flip (all bits of
//! the device's row by default). The mitigation engine runs in the loop and
//! its RFM refreshes restore victim charge while disturbing the next level
//! out. Reads (patrol scrub, application reads, explicit reads) run the ECC
//! outcome model over the affected codeword and corrected reads scrub the
//! errors back out of the devices.
//!
//! Within one RFM, rows refreshed by the command end with restored charge;
//! disturbs from those refreshes land only on rows the command did not
//! refresh. A hammer that reaches HC flips the row permanently; a refresh
//! later in the same window restores charge but not data.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack::{AttackError, AttackPattern, StreamPlan};
use crate::ecc::{self, BitsFlipped, DecodeClass, DecodeOutcome, EccConfig, ErrorPattern};
use crate::mitigation::{MitigationConfig, MitigationError, MitigationState};
use crate::remap::{InternalRow, RankGeometry, RemapError, RowAddress};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("scenario inconsistency: {0}")]
    Config(String),
    #[error(transparent)]
    Remap(#[from] RemapError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Mitigation(#[from] MitigationError),
}

/// How periodic auto-refresh is scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefreshMode {
    /// Rows refresh round-robin across the interval, each at its own slot.
    Rolling,
    /// Every row refreshes at the interval boundary. Used by
    /// model-correspondence studies where the tracked victim must see whole
    /// windows.
    Aligned,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub rank: RankGeometry,
    pub ecc: EccConfig,
    pub mitigation: MitigationConfig,
    /// Hammer count: disturbs to flip a row.
    pub hc: u32,
    /// Activate ticks per refresh interval (tREF = apr * tRC).
    pub apr: u64,
    pub horizon_ticks: u64,
    pub refresh_mode: RefreshMode,
    /// RFM refreshes disturb the next level out (the Half-Double mechanism).
    pub rfm_refresh_disturbs: bool,
    /// Bits flipped per successful attack on a device row.
    pub bits_per_flip: BitsFlipped,
    /// Patrol scrub: one full pass spread over this many ticks.
    pub scrub_interval_ticks: Option<u64>,
    /// Poisson application reads per tick.
    pub app_read_rate: Option<f64>,
    pub log_events: bool,
    /// Also log activates and refreshes (replay-oracle support; verbose).
    pub log_activity: bool,
}

impl SimConfig {
    pub fn new(rank: RankGeometry, ecc: EccConfig, mitigation: MitigationConfig, hc: u32) -> Self {
        SimConfig {
            rank,
            ecc,
            mitigation,
            hc,
            apr: 4096,
            horizon_ticks: 4096,
            refresh_mode: RefreshMode::Rolling,
            rfm_refresh_disturbs: true,
            bits_per_flip: BitsFlipped::All,
            scrub_interval_ticks: None,
            app_read_rate: None,
            log_events: true,
            log_activity: false,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.rank.validate()?;
        self.mitigation.validate()?;
        if self.ecc.devices() != self.rank.devices() as u32 {
            return Err(SimError::Config(format!(
                "ECC layout spans {} devices but the rank has {}",
                self.ecc.devices(),
                self.rank.devices()
            )));
        }
        if self.hc == 0 {
            return Err(SimError::Config("hc must be >= 1".into()));
        }
        if self.apr < self.mitigation.raaimt as u64 {
            return Err(SimError::Config(format!(
                "apr {} shorter than one RAAIMT window {}",
                self.apr, self.mitigation.raaimt
            )));
        }
        Ok(())
    }
}

/// One attack stream bound to a bank.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StreamSpec {
    pub bank: u32,
    pub pattern: AttackPattern,
    pub aggressors: Vec<RowAddress>,
    #[serde(default)]
    pub decoys: Vec<RowAddress>,
    /// Stop generating after this many windows (low-frequency) or activates
    /// (high-frequency); the bank idles afterwards.
    #[serde(default)]
    pub max_windows: Option<u64>,
    /// Orchestrated shared-victim plan; aggressors come from the plan.
    #[serde(default)]
    pub plan: Option<StreamPlan>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Flip,
    ForcedFlip,
    Corrected,
    DetectedUe,
    Sdc,
    Rfm,
    ScrubPass,
    OracleRetarget,
    Activate,
    Refresh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    pub t: u64,
    pub kind: EventKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub device: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bank: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub controller_addr: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub internal_row: Option<u32>,
    #[serde(skip_serializing_if = "serde_json::Value::is_null", default)]
    pub detail: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalEntry {
    pub bank: u32,
    pub controller_addr: u32,
    pub devices: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOutcome {
    pub seed: u64,
    pub ticks: u64,
    pub flips: u64,
    pub corrected_reads: u64,
    pub detected_ue: u64,
    pub sdc: u64,
    pub rfms: u64,
    pub scrub_passes: u64,
    /// Some controller address held errors in >= 2 devices at one time.
    pub multi_device_corruption: bool,
    /// Controller addresses still in error at the end, with their devices.
    pub terminal: Vec<TerminalEntry>,
    pub events: Vec<SimEvent>,
}

impl SimOutcome {
    pub fn corrupted(&self) -> bool {
        self.flips > 0
    }

    /// Serialize the event log as JSON lines.
    pub fn events_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("event serializes"));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone)]
struct DeviceCharge {
    counters: Vec<u32>,
    flipped: Vec<bool>,
}

#[derive(Debug, Clone)]
struct BankCharge {
    per_device: Vec<DeviceCharge>,
}

impl BankCharge {
    fn new(rank: &RankGeometry) -> Self {
        BankCharge {
            per_device: rank
                .device_maps
                .iter()
                .map(|d| {
                    let size = (d.rows() + d.spare_count) as usize;
                    DeviceCharge { counters: vec![0; size], flipped: vec![false; size] }
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone)]
struct StreamState {
    spec: StreamSpec,
    window_pos: u32,
    agg_pos: u32,
    windows_done: u64,
    activates_done: u64,
    rr: u64,
    device_index: usize,
    exhausted: bool,
}

impl StreamState {
    fn new(spec: StreamSpec) -> Self {
        let device_index = spec.plan.as_ref().map(|p| p.start_device).unwrap_or(0);
        StreamState {
            spec,
            window_pos: 0,
            agg_pos: 0,
            windows_done: 0,
            activates_done: 0,
            rr: 0,
            device_index,
            exhausted: false,
        }
    }

    fn current_aggressor(&self) -> RowAddress {
        match &self.spec.plan {
            Some(plan) => plan.aggressor_for(self.device_index),
            None => self.spec.aggressors[(self.rr % self.spec.aggressors.len() as u64) as usize],
        }
    }

    fn next_row<R: Rng + ?Sized>(&mut self, n: u32, rng: &mut R) -> Option<(RowAddress, bool)> {
        if self.exhausted {
            return None;
        }
        match self.spec.pattern {
            AttackPattern::HighFreq => {
                if let Some(max) = self.spec.max_windows {
                    if self.activates_done >= max {
                        self.exhausted = true;
                        return None;
                    }
                }
                let row = self.current_aggressor();
                self.rr += 1;
                self.activates_done += 1;
                Some((row, true))
            }
            AttackPattern::LowFreq => {
                if self.window_pos == 0 {
                    if let Some(max) = self.spec.max_windows {
                        if self.windows_done >= max {
                            self.exhausted = true;
                            return None;
                        }
                    }
                    self.agg_pos = rng.gen_range(0..n);
                }
                let aggressor = self.window_pos == self.agg_pos;
                let row = if aggressor {
                    let r = self.current_aggressor();
                    self.rr += 1;
                    r
                } else {
                    self.spec.decoys[rng.gen_range(0..self.spec.decoys.len())]
                };
                self.window_pos += 1;
                if self.window_pos == n {
                    self.window_pos = 0;
                    self.windows_done += 1;
                }
                self.activates_done += 1;
                Some((row, aggressor))
            }
        }
    }
}

/// Success criterion for empirical rate estimation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuccessCriterion {
    AnyFlip,
    TwoDevicesSameAddress,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalRate {
    pub trials: u64,
    pub successes: u64,
    pub rate: f64,
    /// One binomial standard deviation of `rate`.
    pub sigma: f64,
}

impl EmpiricalRate {
    pub fn ci3(&self) -> (f64, f64) {
        ((self.rate - 3.0 * self.sigma).max(0.0), (self.rate + 3.0 * self.sigma).min(1.0))
    }

    pub fn consistent_with(&self, p: f64, sigmas: f64) -> bool {
        let sd = (p * (1.0 - p) / self.trials as f64).sqrt();
        (self.rate - p).abs() <= sigmas * sd.max(self.sigma)
    }
}

pub struct RankSimulator {
    cfg: SimConfig,
    engine: MitigationState,
    charge: Vec<Option<BankCharge>>,
    streams: Vec<Vec<StreamState>>,
    rng: ChaCha12Rng,
    tick: u64,
    events: Vec<SimEvent>,
    flips: u64,
    forced_flips: u64,
    corrected_reads: u64,
    detected_ue: u64,
    sdc: u64,
    rfms: u64,
    scrub_passes: u64,
    multi_device: bool,
    error_map: BTreeMap<(u32, u32), u16>,
    refresh_row: u64,
    scrub_row: u64,
    scrub_pass_start: u64,
    seed: u64,
}

impl RankSimulator {
    pub fn new(cfg: SimConfig, streams: Vec<StreamSpec>, seed: u64) -> Result<Self, SimError> {
        cfg.validate()?;
        let rows = cfg.rank.rows();
        for s in &streams {
            if s.bank as u16 >= cfg.rank.banks_per_rank {
                return Err(SimError::Config(format!("stream bank {} out of range", s.bank)));
            }
            if s.plan.is_none() && s.aggressors.is_empty() {
                return Err(AttackError::NoAggressors.into());
            }
            for a in s.aggressors.iter().chain(s.decoys.iter()) {
                if a.0 >= rows {
                    return Err(SimError::Config(format!(
                        "row {a} outside the {}-bit address space",
                        cfg.rank.row_width
                    )));
                }
            }
            if s.pattern == AttackPattern::LowFreq && cfg.mitigation.raaimt > 1 && s.decoys.is_empty()
            {
                return Err(AttackError::EmptyDecoyPool.into());
            }
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        // The run seed perturbs the LFSR phase so repeated trials decorrelate;
        // (scenario, seed) still fully determines the run.
        let mut mitigation = cfg.mitigation.clone();
        mitigation.lfsr_seed ^= rng.gen::<u16>();
        let banks = cfg.rank.banks_per_rank as usize;
        let engine = MitigationState::new(mitigation, banks);
        let mut by_bank: Vec<Vec<StreamState>> = vec![Vec::new(); banks];
        for s in streams {
            by_bank[s.bank as usize].push(StreamState::new(s));
        }
        Ok(RankSimulator {
            cfg,
            engine,
            charge: vec![None; banks],
            streams: by_bank,
            rng,
            tick: 0,
            events: Vec::new(),
            flips: 0,
            forced_flips: 0,
            corrected_reads: 0,
            detected_ue: 0,
            sdc: 0,
            rfms: 0,
            scrub_passes: 0,
            multi_device: false,
            error_map: BTreeMap::new(),
            refresh_row: 0,
            scrub_row: 0,
            scrub_pass_start: 0,
            seed,
        })
    }

    fn log(&mut self, event: SimEvent) {
        if self.cfg.log_events {
            self.events.push(event);
        }
    }

    fn internal_space(&self) -> u64 {
        let dev = &self.cfg.rank.device_maps[0];
        (dev.rows() + dev.spare_count) as u64
    }

    fn ensure_bank(&mut self, bank: u32) {
        let slot = &mut self.charge[bank as usize];
        if slot.is_none() {
            *slot = Some(BankCharge::new(&self.cfg.rank));
        }
    }

    /// Disturb one internal row in one device by one activation-equivalent.
    /// Returns true when this disturb flipped the row.
    fn disturb(&mut self, bank: u32, device: u8, internal: InternalRow) -> bool {
        self.ensure_bank(bank);
        let hc = self.cfg.hc;
        let idx = internal.0 as usize;
        let flipped_now = {
            let dc = &mut self.charge[bank as usize].as_mut().unwrap().per_device[device as usize];
            dc.counters[idx] = dc.counters[idx].saturating_add(1);
            let hit = dc.counters[idx] >= hc && !dc.flipped[idx];
            if hit {
                dc.flipped[idx] = true;
            }
            hit
        };
        if flipped_now {
            self.flips += 1;
            let addr = self.cfg.rank.device(device).inverse_map(internal).ok();
            if let Some(a) = addr {
                let mask = self.error_map.entry((bank, a.0)).or_insert(0);
                *mask |= 1 << device;
                if mask.count_ones() >= 2 {
                    self.multi_device = true;
                }
            }
            self.log(SimEvent {
                t: self.tick,
                kind: EventKind::Flip,
                device: Some(device),
                bank: Some(bank),
                controller_addr: addr.map(|a| a.0),
                internal_row: Some(internal.0),
                detail: serde_json::Value::Null,
            });
        }
        flipped_now
    }

    fn restore(&mut self, bank: u32, device: u8, internal: InternalRow) {
        self.ensure_bank(bank);
        let dc = &mut self.charge[bank as usize].as_mut().unwrap().per_device[device as usize];
        dc.counters[internal.0 as usize] = 0;
    }

    /// Activate one controller row: the engine tracks it, the row's own
    /// charge restores, and neighbors within the blast radius disturb in
    /// every device. Returns (rfm_due, flipped_any).
    fn activate(&mut self, bank: u32, row: RowAddress) -> Result<(bool, bool), SimError> {
        let out = self.engine.record_activate(bank as usize, row)?;
        if self.cfg.log_activity {
            self.log(SimEvent {
                t: self.tick,
                kind: EventKind::Activate,
                device: None,
                bank: Some(bank),
                controller_addr: Some(row.0),
                internal_row: None,
                detail: serde_json::Value::Null,
            });
        }
        let radius = self.cfg.rank.blast_radius as u32;
        let mut flipped_any = false;
        for d in 0..self.cfg.rank.devices() {
            let internal = self.cfg.rank.device(d).map_row(row)?;
            self.restore(bank, d, internal);
            for level in 1..=radius {
                for n in self.cfg.rank.device(d).internal_neighbors(internal, level) {
                    flipped_any |= self.disturb(bank, d, n);
                }
            }
        }
        Ok((out.rfm_due, flipped_any))
    }

    /// Execute one RFM on `bank`: rows refreshed by the command end restored;
    /// their refreshes disturb rows the command did not refresh.
    fn run_rfm(&mut self, bank: u32) -> Result<(), SimError> {
        let rfm = self.engine.issue_rfm(bank as usize, &mut self.rng)?;
        self.rfms += 1;
        let radius = self.cfg.rank.blast_radius as u32;
        for d in 0..self.cfg.rank.devices() {
            let ti = self.cfg.rank.device(d).map_row(rfm.target)?;
            let mut refreshed: Vec<InternalRow> = Vec::new();
            for &level in &rfm.levels {
                refreshed.extend(self.cfg.rank.device(d).internal_neighbors(ti, level));
            }
            for &r in &refreshed {
                self.restore(bank, d, r);
            }
            if self.cfg.rfm_refresh_disturbs {
                for &r in &refreshed {
                    for level in 1..=radius {
                        for n in self.cfg.rank.device(d).internal_neighbors(r, level) {
                            if !refreshed.contains(&n) {
                                self.disturb(bank, d, n);
                            }
                        }
                    }
                }
            }
        }
        let levels = rfm.levels.clone();
        self.log(SimEvent {
            t: self.tick,
            kind: EventKind::Rfm,
            device: None,
            bank: Some(bank),
            controller_addr: Some(rfm.target.0),
            internal_row: None,
            detail: serde_json::json!({ "levels": levels, "duration_ns": rfm.duration_ns }),
        });
        Ok(())
    }

    /// Auto-refresh one internal row index in every device of every touched
    /// bank (refresh restores charge; flipped data stays flipped).
    fn auto_refresh_row(&mut self, internal: u32) {
        for bank in 0..self.charge.len() {
            if let Some(bc) = self.charge[bank].as_mut() {
                for dc in bc.per_device.iter_mut() {
                    if (internal as usize) < dc.counters.len() {
                        dc.counters[internal as usize] = 0;
                    }
                }
            }
        }
        if self.cfg.log_activity {
            self.log(SimEvent {
                t: self.tick,
                kind: EventKind::Refresh,
                device: None,
                bank: None,
                controller_addr: None,
                internal_row: Some(internal),
                detail: serde_json::Value::Null,
            });
        }
    }

    fn aligned_refresh_all(&mut self) {
        for bank in 0..self.charge.len() {
            if let Some(bc) = self.charge[bank].as_mut() {
                for dc in bc.per_device.iter_mut() {
                    dc.counters.fill(0);
                }
            }
        }
        if self.cfg.log_activity {
            self.log(SimEvent {
                t: self.tick,
                kind: EventKind::Refresh,
                device: None,
                bank: None,
                controller_addr: None,
                internal_row: None,
                detail: serde_json::json!("aligned"),
            });
        }
    }

    /// Read one controller address on one bank and decode it; corrected reads
    /// demand-scrub the device errors away.
    pub fn read(&mut self, bank: u32, addr: RowAddress) -> Result<DecodeOutcome, SimError> {
        let mut pattern = ErrorPattern::empty();
        let mut devices_in_error = Vec::new();
        for d in 0..self.cfg.rank.devices() {
            let internal = self.cfg.rank.device(d).map_row(addr)?;
            let in_error = self.charge[bank as usize]
                .as_ref()
                .map(|bc| bc.per_device[d as usize].flipped[internal.0 as usize])
                .unwrap_or(false);
            if in_error {
                pattern.merge(&ecc::device_error_pattern(&self.cfg.ecc, d, self.cfg.bits_per_flip));
                devices_in_error.push((d, internal));
            }
        }
        let outcome = ecc::decode(&self.cfg.ecc, &pattern, &mut self.rng);
        match outcome.class {
            DecodeClass::Clean => {}
            DecodeClass::Corrected => {
                self.corrected_reads += 1;
                for &(d, internal) in &devices_in_error {
                    let bc = self.charge[bank as usize].as_mut().unwrap();
                    let dc = &mut bc.per_device[d as usize];
                    dc.flipped[internal.0 as usize] = false;
                    dc.counters[internal.0 as usize] = 0;
                }
                if let Some(mask) = self.error_map.get_mut(&(bank, addr.0)) {
                    *mask = 0;
                }
                let devices: Vec<u8> = devices_in_error.iter().map(|&(d, _)| d).collect();
                self.log(SimEvent {
                    t: self.tick,
                    kind: EventKind::Corrected,
                    device: devices.first().copied(),
                    bank: Some(bank),
                    controller_addr: Some(addr.0),
                    internal_row: None,
                    detail: serde_json::json!({ "devices": devices }),
                });
            }
            DecodeClass::DetectedUe => {
                self.detected_ue += 1;
                self.log(SimEvent {
                    t: self.tick,
                    kind: EventKind::DetectedUe,
                    device: None,
                    bank: Some(bank),
                    controller_addr: Some(addr.0),
                    internal_row: None,
                    detail: serde_json::json!({
                        "devices": devices_in_error.iter().map(|&(d, _)| d).collect::<Vec<u8>>()
                    }),
                });
            }
            DecodeClass::Sdc => {
                self.sdc += 1;
                self.log(SimEvent {
                    t: self.tick,
                    kind: EventKind::Sdc,
                    device: None,
                    bank: Some(bank),
                    controller_addr: Some(addr.0),
                    internal_row: None,
                    detail: serde_json::Value::Null,
                });
            }
        }
        Ok(outcome)
    }

    /// Inject the flips of one successful attack: in every device, the rows
    /// within `level` of the aggressor's mapped row flip.
    pub fn force_attack_success(&mut self, bank: u32, aggressor: RowAddress, level: u32) -> Result<(), SimError> {
        self.ensure_bank(bank);
        for d in 0..self.cfg.rank.devices() {
            let internal = self.cfg.rank.device(d).map_row(aggressor)?;
            for n in self.cfg.rank.device(d).internal_neighbors(internal, level) {
                let fresh = {
                    let dc =
                        &mut self.charge[bank as usize].as_mut().unwrap().per_device[d as usize];
                    let fresh = !dc.flipped[n.0 as usize];
                    dc.flipped[n.0 as usize] = true;
                    fresh
                };
                if !fresh {
                    continue;
                }
                self.forced_flips += 1;
                let addr = self.cfg.rank.device(d).inverse_map(n).ok();
                if let Some(a) = addr {
                    let mask = self.error_map.entry((bank, a.0)).or_insert(0);
                    *mask |= 1 << d;
                    if mask.count_ones() >= 2 {
                        self.multi_device = true;
                    }
                }
                self.log(SimEvent {
                    t: self.tick,
                    kind: EventKind::ForcedFlip,
                    device: Some(d),
                    bank: Some(bank),
                    controller_addr: addr.map(|a| a.0),
                    internal_row: Some(n.0),
                    detail: serde_json::Value::Null,
                });
            }
        }
        Ok(())
    }

    fn scrub_step(&mut self) -> Result<(), SimError> {
        let Some(interval) = self.cfg.scrub_interval_ticks else { return Ok(()) };
        let rows = self.cfg.rank.rows() as u64;
        let elapsed = self.tick.saturating_sub(self.scrub_pass_start);
        // Row r of the pass is due at tick floor(r * interval / rows).
        while self.scrub_row < rows && self.scrub_row * interval / rows <= elapsed {
            let addr = RowAddress(self.scrub_row as u32);
            for bank in 0..self.charge.len() as u32 {
                if self.charge[bank as usize].is_some() {
                    self.read(bank, addr)?;
                }
            }
            self.scrub_row += 1;
        }
        if self.scrub_row >= rows && elapsed >= interval {
            self.scrub_passes += 1;
            self.scrub_row = 0;
            self.scrub_pass_start = self.tick;
            self.log(SimEvent {
                t: self.tick,
                kind: EventKind::ScrubPass,
                device: None,
                bank: None,
                controller_addr: None,
                internal_row: None,
                detail: serde_json::Value::Null,
            });
        }
        Ok(())
    }

    fn refresh_step(&mut self) {
        match self.cfg.refresh_mode {
            RefreshMode::Aligned => {
                if self.tick > 0 && self.tick % self.cfg.apr == 0 {
                    self.aligned_refresh_all();
                }
            }
            RefreshMode::Rolling => {
                let space = self.internal_space();
                let apr = self.cfg.apr;
                let tick_in = self.tick % apr;
                let interval_index = self.tick / apr;
                let base = interval_index * space;
                // Row r of this interval refreshes at tick floor(r*apr/space).
                while self.refresh_row < base + space
                    && (self.refresh_row - base) * apr / space <= tick_in
                {
                    self.auto_refresh_row((self.refresh_row - base) as u32);
                    self.refresh_row += 1;
                    if self.refresh_row == base + space {
                        break;
                    }
                }
                if tick_in == apr - 1 {
                    self.refresh_row = (interval_index + 1) * space;
                }
            }
        }
    }

    /// Advance one activate tick.
    pub fn step(&mut self) -> Result<(), SimError> {
        self.refresh_step();
        self.scrub_step()?;
        if let Some(rate) = self.cfg.app_read_rate {
            if self.rng.gen::<f64>() < rate {
                let bank = self.rng.gen_range(0..self.charge.len() as u32);
                let addr = RowAddress(self.rng.gen_range(0..self.cfg.rank.rows()));
                self.read(bank, addr)?;
            }
        }
        let n = self.cfg.mitigation.raaimt;
        for bank in 0..self.streams.len() {
            if self.streams[bank].is_empty() {
                continue;
            }
            let k = self.streams[bank].len();
            let pick = (self.tick % k as u64) as usize;
            let stream = &mut self.streams[bank][pick];
            let oracle = stream.spec.plan.as_ref().map(|p| p.oracle).unwrap_or(false);
            let current_agg = stream.current_aggressor();
            let Some((row, is_aggressor)) = stream.next_row(n, &mut self.rng) else { continue };
            let (rfm_due, flipped) = self.activate(bank as u32, row)?;
            if rfm_due {
                self.run_rfm(bank as u32)?;
            }
            if oracle && flipped && is_aggressor && row == current_agg {
                let (new_device, victim) = {
                    let stream = &mut self.streams[bank][pick];
                    let plan = stream.spec.plan.as_ref().unwrap();
                    let devices = plan.aggressors_by_device.len();
                    let victim = plan.victim.0;
                    stream.device_index = (stream.device_index + 1) % devices;
                    (stream.device_index, victim)
                };
                self.log(SimEvent {
                    t: self.tick,
                    kind: EventKind::OracleRetarget,
                    device: Some(new_device as u8),
                    bank: Some(bank as u32),
                    controller_addr: Some(victim),
                    internal_row: None,
                    detail: serde_json::Value::Null,
                });
            }
        }
        self.tick += 1;
        Ok(())
    }

    pub fn run(mut self) -> Result<SimOutcome, SimError> {
        while self.tick < self.cfg.horizon_ticks {
            self.step()?;
        }
        Ok(self.finish())
    }

    pub fn finish(self) -> SimOutcome {
        let mut terminal = Vec::new();
        for (&(bank, addr), &mask) in &self.error_map {
            if mask != 0 {
                let devices: Vec<u8> = (0..16).filter(|d| mask & (1 << d) != 0).collect();
                terminal.push(TerminalEntry { bank, controller_addr: addr, devices });
            }
        }
        SimOutcome {
            seed: self.seed,
            ticks: self.tick,
            flips: self.flips + self.forced_flips,
            corrected_reads: self.corrected_reads,
            detected_ue: self.detected_ue,
            sdc: self.sdc,
            rfms: self.rfms,
            scrub_passes: self.scrub_passes,
            multi_device_corruption: self.multi_device,
            terminal,
            events: self.events,
        }
    }

    pub fn engine(&self) -> &MitigationState {
        &self.engine
    }
}

/// Run one full scenario.
pub fn run(cfg: &SimConfig, streams: &[StreamSpec], seed: u64) -> Result<SimOutcome, SimError> {
    RankSimulator::new(cfg.clone(), streams.to_vec(), seed)?.run()
}

/// Estimate the per-trial success probability over independent seeded trials
/// (trial i derives its stream from (seed, i)); returns the empirical rate
/// with a binomial sigma.
pub fn empirical_success_rate(
    cfg: &SimConfig,
    streams: &[StreamSpec],
    trials: u64,
    seed: u64,
    criterion: SuccessCriterion,
) -> Result<EmpiricalRate, SimError> {
    let mut quiet = cfg.clone();
    quiet.log_events = false;
    quiet.log_activity = false;
    // Validate once up front so per-trial errors are config bugs, not data.
    RankSimulator::new(quiet.clone(), streams.to_vec(), seed)?;
    let successes: u64 = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            rng.set_stream(i.wrapping_add(1));
            let trial_seed = rng.gen::<u64>();
            let out = RankSimulator::new(quiet.clone(), streams.to_vec(), trial_seed)
                .expect("validated config")
                .run()
                .expect("validated config");
            let hit = match criterion {
                SuccessCriterion::AnyFlip => out.corrupted(),
                SuccessCriterion::TwoDevicesSameAddress => out.multi_device_corruption,
            };
            hit as u64
        })
        .sum();
    let rate = successes as f64 / trials as f64;
    let sigma = (rate * (1.0 - rate) / trials as f64).sqrt().max(1.0 / trials as f64);
    Ok(EmpiricalRate { trials, successes, rate, sigma })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::build_decoy_pool;
    use crate::mitigation::Scheme;

    fn desk_rank(devices: u8, width: u8, rampart: bool) -> RankGeometry {
        let mut rank = if rampart {
            RankGeometry::shift_by_id(devices - 2, 2, width)
        } else {
            RankGeometry::no_remap(devices - 2, 2, width)
        };
        rank.banks_per_rank = 4;
        rank
    }

    fn desk_ecc(devices: u8) -> EccConfig {
        // Symbol layout matching the device count: 4 symbols per device.
        let mut cfg = EccConfig::rs40_32();
        cfg.total_symbols = devices as u32 * 4;
        cfg.data_symbols = (devices as u32 - 2) * 4;
        cfg.name = format!("rs{}_{}", cfg.total_symbols, cfg.data_symbols);
        cfg
    }

    fn base_cfg(rampart: bool) -> SimConfig {
        let rank = desk_rank(10, 12, rampart);
        let ecc = desk_ecc(10);
        let mit = MitigationConfig::new(Scheme::BrcVl, 8);
        let mut cfg = SimConfig::new(rank, ecc, mit, 16);
        cfg.apr = 512;
        cfg.horizon_ticks = 512;
        cfg
    }

    #[test]
    fn no_attack_no_flips() {
        let mut cfg = base_cfg(true);
        cfg.scrub_interval_ticks = Some(128);
        cfg.horizon_ticks = 2048;
        let out = run(&cfg, &[], 1).unwrap();
        assert_eq!(out.flips, 0);
        assert_eq!(out.detected_ue + out.sdc, 0);
    }

    #[test]
    fn forced_success_confined_and_corrected_with_rampart() {
        let cfg = base_cfg(true);
        let mut sim = RankSimulator::new(cfg, vec![], 2).unwrap();
        sim.force_attack_success(0, RowAddress(0x0001), 1).unwrap();
        // Every victim controller address holds errors in exactly one device.
        let devices = sim.cfg.rank.devices();
        for d in 0..devices {
            for v in sim.cfg.rank.device(d).victim_addresses(RowAddress(0x0001), 1).unwrap() {
                let out = sim.read(0, v).unwrap();
                assert_eq!(out.class, DecodeClass::Corrected, "device {d} victim {v}");
                // Demand scrub healed it.
                let again = sim.read(0, v).unwrap();
                assert_eq!(again.class, DecodeClass::Clean);
            }
        }
        assert!(!sim.finish().multi_device_corruption);
    }

    #[test]
    fn forced_success_overwhelms_ecc_without_rampart() {
        let cfg = base_cfg(false);
        let mut sim = RankSimulator::new(cfg, vec![], 3).unwrap();
        sim.force_attack_success(0, RowAddress(0x0001), 1).unwrap();
        let out = sim.read(0, RowAddress(0x0000)).unwrap();
        assert!(matches!(out.class, DecodeClass::DetectedUe | DecodeClass::Sdc));
        assert!(sim.finish().multi_device_corruption);
    }

    #[test]
    fn scrub_pass_heals_single_device_errors() {
        let mut cfg = base_cfg(true);
        cfg.scrub_interval_ticks = Some(1 << 12);
        cfg.horizon_ticks = 3 << 12;
        let mut sim = RankSimulator::new(cfg, vec![], 4).unwrap();
        sim.force_attack_success(0, RowAddress(0x0100), 1).unwrap();
        sim.force_attack_success(1, RowAddress(0x0200), 1).unwrap();
        while sim.tick < sim.cfg.horizon_ticks {
            sim.step().unwrap();
        }
        let out = sim.finish();
        assert!(out.scrub_passes >= 1);
        assert!(out.corrected_reads > 0);
        assert!(out.terminal.is_empty(), "terminal errors remain: {:?}", out.terminal);
    }

    #[test]
    fn seed_determinism_byte_identical_logs() {
        let mut cfg = base_cfg(true);
        cfg.scrub_interval_ticks = Some(256);
        cfg.horizon_ticks = 2048;
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let pool = build_decoy_pool(&cfg.rank, &[RowAddress(0x123)], 2, 32, &mut rng).unwrap();
        let stream = StreamSpec {
            bank: 0,
            pattern: AttackPattern::LowFreq,
            aggressors: vec![RowAddress(0x123)],
            decoys: pool,
            max_windows: None,
            plan: None,
        };
        let a = run(&cfg, &[stream.clone()], 77).unwrap();
        let b = run(&cfg, &[stream.clone()], 77).unwrap();
        assert_eq!(a.events_jsonl(), b.events_jsonl());
        let c = run(&cfg, &[stream], 78).unwrap();
        assert_ne!(a.events_jsonl(), c.events_jsonl());
    }

    #[test]
    fn high_freq_attack_flips_level2_victims() {
        // Victim-focused mechanism: with BRC-VL and a hot aggressor, level-1
        // refreshes disturb the level-2 rows until they flip.
        let mut cfg = base_cfg(true);
        cfg.hc = 8;
        cfg.mitigation.raaimt = 4;
        cfg.apr = 1 << 14;
        cfg.horizon_ticks = 1 << 14;
        let stream = StreamSpec {
            bank: 0,
            pattern: AttackPattern::HighFreq,
            aggressors: vec![RowAddress(0x800)],
            decoys: vec![],
            max_windows: None,
            plan: None,
        };
        let out = run(&cfg, &[stream], 5).unwrap();
        assert!(out.flips > 0, "victim-focused attack never flipped at desk scale");
    }

    #[test]
    fn n_equals_one_never_flips_when_hc_above_one() {
        // N=1: every window ends in an RFM that refreshes the victims.
        let mut cfg = base_cfg(true);
        cfg.hc = 4;
        cfg.mitigation.raaimt = 1;
        cfg.mitigation.scheme = Scheme::Brc;
        cfg.rfm_refresh_disturbs = false;
        cfg.apr = 4096;
        cfg.horizon_ticks = 4096;
        let stream = StreamSpec {
            bank: 0,
            pattern: AttackPattern::HighFreq,
            aggressors: vec![RowAddress(0x400)],
            decoys: vec![],
            max_windows: None,
            plan: None,
        };
        let out = run(&cfg, &[stream], 6).unwrap();
        assert_eq!(out.flips, 0);
    }

    #[test]
    fn empirical_rate_is_deterministic_per_seed() {
        let mut cfg = base_cfg(true);
        cfg.hc = 8;
        cfg.mitigation.raaimt = 4;
        cfg.apr = 64;
        cfg.horizon_ticks = 64;
        let mut rng = ChaCha12Rng::seed_from_u64(10);
        let pool = build_decoy_pool(&cfg.rank, &[RowAddress(0x123)], 2, 32, &mut rng).unwrap();
        let stream = StreamSpec {
            bank: 0,
            pattern: AttackPattern::LowFreq,
            aggressors: vec![RowAddress(0x123)],
            decoys: pool,
            max_windows: None,
            plan: None,
        };
        let a = empirical_success_rate(&cfg, &[stream.clone()], 2000, 11, SuccessCriterion::AnyFlip)
            .unwrap();
        let b = empirical_success_rate(&cfg, &[stream], 2000, 11, SuccessCriterion::AnyFlip).unwrap();
        assert_eq!(a.successes, b.successes);
    }

    #[test]
    fn oracle_stream_retargets_after_success() {
        let rank = desk_rank(4, 10, true);
        let ecc = desk_ecc(4);
        let mut cfg = SimConfig::new(rank, ecc, MitigationConfig::new(Scheme::BrcVl, 4), 4);
        cfg.apr = 1 << 13;
        cfg.horizon_ticks = 1 << 13;
        cfg.rfm_refresh_disturbs = false;
        let spec = crate::attack::AttackSpec::single(AttackPattern::HighFreq, RowAddress(0));
        let plans = crate::attack::orchestrate(&cfg.rank, RowAddress(0x40), 1, &{
            let mut s = spec;
            s.oracle = true;
            s
        })
        .unwrap();
        let stream = StreamSpec {
            bank: 0,
            pattern: AttackPattern::HighFreq,
            aggressors: vec![],
            decoys: vec![],
            max_windows: None,
            plan: Some(plans[0].clone()),
        };
        let out = run(&cfg, &[stream], 13).unwrap();
        let retargets = out.events.iter().filter(|e| e.kind == EventKind::OracleRetarget).count();
        assert!(retargets >= 1, "oracle attacker never retargeted");
    }
}
