//! Scenario files: one strict TOML document describing a run.
//!
//! Unknown keys are rejected everywhere, and every run embeds the resolved
//! scenario (defaults materialized) in its output. Sections are optional;
//! each subcommand validates that the sections it needs are present.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{AnalysisParams, AttackKind};
use crate::attack::{self, AttackPattern};
use crate::ecc::EccConfig;
use crate::lfsr;
use crate::mitigation::{MitigationConfig, Scheme};
use crate::remap::{DeviceMap, RankGeometry, RemapFn, RowAddress};
use crate::sim::{RefreshMode, SimConfig, StreamSpec, SuccessCriterion};
use crate::timing::TimingParams;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error("scenario missing required [{0}] section")]
    MissingSection(&'static str),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid(msg.into())
}

/// Parse "0x1a2b" or "123" row addresses.
pub fn parse_row(s: &str) -> Result<u32, ScenarioError> {
    let t = s.trim();
    let parsed = if let Some(hex) = t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
        u32::from_str_radix(hex, 16)
    } else {
        t.parse()
    };
    parsed.map_err(|_| invalid(format!("bad row address {s:?}")))
}

/// Parse durations like "32ms", "130ns", "1h", "1d", "1y", "86400s", "0.5".
/// Bare numbers are seconds.
pub fn parse_duration(s: &str) -> Result<f64, ScenarioError> {
    let t = s.trim();
    let (num, mult) = if let Some(v) = t.strip_suffix("ns") {
        (v, 1e-9)
    } else if let Some(v) = t.strip_suffix("us") {
        (v, 1e-6)
    } else if let Some(v) = t.strip_suffix("ms") {
        (v, 1e-3)
    } else if let Some(v) = t.strip_suffix('s') {
        (v, 1.0)
    } else if let Some(v) = t.strip_suffix('m') {
        (v, 60.0)
    } else if let Some(v) = t.strip_suffix('h') {
        (v, 3600.0)
    } else if let Some(v) = t.strip_suffix('d') {
        (v, 86_400.0)
    } else if let Some(v) = t.strip_suffix('y') {
        (v, 365.0 * 86_400.0)
    } else {
        (t, 1.0)
    };
    num.trim()
        .parse::<f64>()
        .map(|v| v * mult)
        .map_err(|_| invalid(format!("bad duration {s:?}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RemapKind {
    /// Circular left shift by device ID (the default).
    ShiftById,
    /// All devices map identically (remapping disabled).
    Identity,
    /// Shifts listed explicitly per device.
    ExplicitShifts,
    /// LFSR permutation stepped device-ID times.
    LfsrById,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RankSection {
    pub data_devices: u8,
    pub ecc_devices: u8,
    pub row_width: u8,
    pub banks_per_rank: u16,
    pub blast_radius: u8,
    pub remap: RemapKind,
    /// Required for `explicit-shifts`.
    pub shifts: Option<Vec<u8>>,
    /// Tap mask for `lfsr-by-id` (bit 0 must be set).
    pub lfsr_taps: Option<u32>,
    pub spare_count: u32,
    /// Repairs per device: device id (as string) -> [[internal_row, spare], ..].
    pub repairs: BTreeMap<String, Vec<(u32, u32)>>,
}

impl Default for RankSection {
    fn default() -> Self {
        RankSection {
            data_devices: 8,
            ecc_devices: 2,
            row_width: 16,
            banks_per_rank: 32,
            blast_radius: 1,
            remap: RemapKind::ShiftById,
            shifts: None,
            lfsr_taps: None,
            spare_count: 0,
            repairs: BTreeMap::new(),
        }
    }
}

impl RankSection {
    pub fn build(&self) -> Result<RankGeometry, ScenarioError> {
        let total = self.data_devices + self.ecc_devices;
        if total == 0 {
            return Err(invalid("rank has zero devices"));
        }
        let width = self.row_width;
        let device_maps: Vec<DeviceMap> = (0..total)
            .map(|d| {
                let remap = match self.remap {
                    RemapKind::ShiftById => RemapFn::Rotate { shift: d % width },
                    RemapKind::Identity => RemapFn::Rotate { shift: 0 },
                    RemapKind::ExplicitShifts => {
                        let shifts = self.shifts.as_ref().ok_or_else(|| {
                            invalid("remap = explicit-shifts requires a shifts list")
                        })?;
                        let s = *shifts
                            .get(d as usize)
                            .ok_or_else(|| invalid(format!("no shift for device {d}")))?;
                        RemapFn::Rotate { shift: s % width }
                    }
                    RemapKind::LfsrById => RemapFn::LfsrPermute {
                        taps: self.lfsr_taps.unwrap_or(0xB401),
                        steps: d as u32,
                    },
                };
                Ok(DeviceMap {
                    device_id: d,
                    width,
                    remap,
                    repairs: BTreeMap::new(),
                    spare_count: self.spare_count,
                })
            })
            .collect::<Result<_, ScenarioError>>()?;
        let mut rank = RankGeometry {
            data_devices: self.data_devices,
            ecc_devices: self.ecc_devices,
            row_width: width,
            banks_per_rank: self.banks_per_rank,
            blast_radius: self.blast_radius,
            device_maps,
        };
        for (dev, pairs) in &self.repairs {
            let id: usize =
                dev.parse().map_err(|_| invalid(format!("bad repair device key {dev:?}")))?;
            let map = rank
                .device_maps
                .get_mut(id)
                .ok_or_else(|| invalid(format!("repair device {id} out of range")))?;
            for &(row, spare) in pairs {
                map.repairs.insert(row, spare);
            }
        }
        rank.validate().map_err(|e| invalid(e.to_string()))?;
        Ok(rank)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EccSection {
    /// "rs10_8", "rs40_32", "rs36_32", or "custom".
    pub code: String,
    pub custom: Option<EccConfig>,
}

impl Default for EccSection {
    fn default() -> Self {
        EccSection { code: "rs40_32".into(), custom: None }
    }
}

impl EccSection {
    pub fn build(&self) -> Result<EccConfig, ScenarioError> {
        if self.code == "custom" {
            return self.custom.clone().ok_or_else(|| invalid("code = \"custom\" needs [ecc.custom]"));
        }
        EccConfig::by_name(&self.code)
            .ok_or_else(|| invalid(format!("unknown ECC code {:?}", self.code)))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MitigationSection {
    pub scheme: Scheme,
    pub raaimt: u32,
    pub victim_levels: u32,
    pub brc_ratio: Option<f64>,
    pub lfsr_seed: u16,
    pub lfsr_taps: u16,
}

impl Default for MitigationSection {
    fn default() -> Self {
        MitigationSection {
            scheme: Scheme::BrcVl,
            raaimt: 16,
            victim_levels: 2,
            brc_ratio: None,
            lfsr_seed: lfsr::DEFAULT_SEED,
            lfsr_taps: lfsr::DEFAULT_TAPS,
        }
    }
}

impl MitigationSection {
    pub fn build(&self) -> Result<MitigationConfig, ScenarioError> {
        let cfg = MitigationConfig {
            scheme: self.scheme,
            raaimt: self.raaimt,
            victim_levels: self.victim_levels,
            brc_ratio: self.brc_ratio,
            lfsr_seed: self.lfsr_seed,
            lfsr_taps: self.lfsr_taps,
        };
        cfg.validate().map_err(|e| invalid(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackSection {
    pub pattern: AttackPattern,
    /// Row addresses, hex or decimal strings.
    pub aggressors: Vec<String>,
    pub banks: u32,
    pub channels: u32,
    pub simultaneous: u32,
    pub oracle: bool,
    /// Only "uniform-outside-exclusion" is defined.
    pub decoy_policy: String,
    pub decoy_pool_size: usize,
    /// Orchestrate per-device aggressors for this shared victim address.
    pub shared_victim: Option<String>,
    /// Stop each stream after this many windows.
    pub windows: Option<u64>,
}

impl Default for AttackSection {
    fn default() -> Self {
        AttackSection {
            pattern: AttackPattern::LowFreq,
            aggressors: vec!["0x0001".into()],
            banks: 1,
            channels: 1,
            simultaneous: 1,
            oracle: false,
            decoy_policy: "uniform-outside-exclusion".into(),
            decoy_pool_size: 64,
            shared_victim: None,
            windows: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalysisMethod {
    ClosedForm,
    ClosedFormTwoSuccess,
    Markov,
    Bound,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisJob {
    pub id: String,
    pub method: AnalysisMethod,
    pub hc: u32,
    pub raaimt: u32,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    #[serde(default = "default_attack")]
    pub attack: AttackKind,
    #[serde(default)]
    pub two_success: bool,
    #[serde(default)]
    pub scrub_period: Option<String>,
    #[serde(default = "one_u32")]
    pub k: u32,
    #[serde(default = "one_u32")]
    pub banks_attacked: u32,
    #[serde(default = "one_u32")]
    pub channels: u32,
    #[serde(default = "default_vl")]
    pub victim_levels: u32,
    #[serde(default = "default_true")]
    pub double_hammer: bool,
    #[serde(default)]
    pub emit_curve: bool,
}

fn default_scheme() -> Scheme {
    Scheme::Brc
}
fn default_attack() -> AttackKind {
    AttackKind::Traditional
}
fn one_u32() -> u32 {
    1
}
fn default_vl() -> u32 {
    4
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    pub preset: String,
    /// Horizon labels, e.g. ["32ms", "1d", "1y"].
    pub horizons: Vec<String>,
    pub curve_points: usize,
    pub jobs: Vec<AnalysisJob>,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            preset: String::new(),
            horizons: vec!["1d".into(), "1y".into()],
            curve_points: 48,
            jobs: Vec::new(),
        }
    }
}

impl AnalysisJob {
    pub fn params(&self, timing: TimingParams, horizon_s: f64) -> Result<AnalysisParams, ScenarioError> {
        let scrub = self.scrub_period.as_deref().map(parse_duration).transpose()?;
        Ok(AnalysisParams {
            hc: self.hc,
            raaimt: self.raaimt,
            scheme: self.scheme,
            victim_levels: self.victim_levels,
            attack: self.attack,
            timing,
            horizon_s,
            scrub_period_s: scrub,
            requires_two_successes: self.two_success,
            simultaneous: self.k,
            banks_attacked: self.banks_attacked,
            channels: self.channels,
            double_hammer: self.double_hammer,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScrubSection {
    pub enabled: bool,
    pub period: String,
    pub capacity_bytes: f64,
    pub peak_bandwidth: f64,
}

impl Default for ScrubSection {
    fn default() -> Self {
        ScrubSection {
            enabled: true,
            period: "1d".into(),
            capacity_bytes: (1u64 << 40) as f64,
            peak_bandwidth: 44.8e9,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedsSection {
    pub master: u64,
}

impl Default for SeedsSection {
    fn default() -> Self {
        SeedsSection { master: 0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub hc: u32,
    /// Activate ticks per refresh interval.
    pub apr: u64,
    pub horizon_ticks: u64,
    pub refresh_mode: RefreshMode,
    pub rfm_refresh_disturbs: bool,
    /// Bits flipped per successful attack; omitted means every bit.
    pub bits_per_flip: Option<u32>,
    pub scrub_interval_ticks: Option<u64>,
    pub app_read_rate: Option<f64>,
    /// Monte Carlo trials; 1 runs a single logged simulation.
    pub trials: u64,
    pub success_criterion: SuccessCriterion,
    pub log_events: bool,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            hc: 16,
            apr: 4096,
            horizon_ticks: 4096,
            refresh_mode: RefreshMode::Rolling,
            rfm_refresh_disturbs: true,
            bits_per_flip: None,
            scrub_interval_ticks: None,
            app_read_rate: None,
            trials: 1,
            success_criterion: SuccessCriterion::AnyFlip,
            log_events: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: String,
    pub format: OutputFormat,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: "out".into(), format: OutputFormat::Csv }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BandwidthSection {
    /// Workloads: "rand", "hamr".
    pub workloads: Vec<String>,
    /// Schemes: "none", "brc", "brc_vl".
    pub schemes: Vec<String>,
    pub raaimt_values: Vec<u32>,
    /// Simulated wall time per grid point.
    pub duration: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub rank: Option<RankSection>,
    pub ecc: Option<EccSection>,
    pub mitigation: Option<MitigationSection>,
    pub attack: Option<AttackSection>,
    pub analysis: Option<AnalysisSection>,
    pub timing: Option<TimingParams>,
    pub scrub: Option<ScrubSection>,
    pub seeds: Option<SeedsSection>,
    pub sim: Option<SimSection>,
    pub bandwidth: Option<BandwidthSection>,
    pub output: Option<OutputSection>,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ScenarioError::Parse(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// The resolved scenario with every default materialized, for embedding
    /// in outputs.
    pub fn resolved(&self) -> Scenario {
        let mut s = self.clone();
        s.rank.get_or_insert_with(Default::default);
        s.ecc.get_or_insert_with(Default::default);
        s.mitigation.get_or_insert_with(Default::default);
        s.timing.get_or_insert_with(TimingParams::ddr5_5600);
        s.seeds.get_or_insert_with(Default::default);
        s.output.get_or_insert_with(Default::default);
        s
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn rank_section(&self) -> Result<&RankSection, ScenarioError> {
        self.rank.as_ref().ok_or(ScenarioError::MissingSection("rank"))
    }

    pub fn analysis_section(&self) -> Result<&AnalysisSection, ScenarioError> {
        self.analysis.as_ref().ok_or(ScenarioError::MissingSection("analysis"))
    }

    pub fn timing(&self) -> TimingParams {
        self.timing.unwrap_or_else(TimingParams::ddr5_5600)
    }

    pub fn master_seed(&self) -> u64 {
        self.seeds.map(|s| s.master).unwrap_or(0)
    }

    /// Build the simulator config and attack streams for `simulate`.
    pub fn build_sim(&self) -> Result<(SimConfig, Vec<StreamSpec>), ScenarioError> {
        use rand::SeedableRng;
        let rank = self.rank_section()?.build()?;
        let ecc = self.ecc.clone().unwrap_or_default().build()?;
        let mitigation = self.mitigation.clone().unwrap_or_default().build()?;
        let sim = self.sim.clone().ok_or(ScenarioError::MissingSection("sim"))?;
        let attack = self.attack.clone().unwrap_or_default();

        let mut cfg = SimConfig::new(rank, ecc, mitigation, sim.hc);
        cfg.apr = sim.apr;
        cfg.horizon_ticks = sim.horizon_ticks;
        cfg.refresh_mode = sim.refresh_mode;
        cfg.rfm_refresh_disturbs = sim.rfm_refresh_disturbs;
        cfg.bits_per_flip = match sim.bits_per_flip {
            Some(b) => crate::ecc::BitsFlipped::Count(b),
            None => crate::ecc::BitsFlipped::All,
        };
        cfg.scrub_interval_ticks = sim.scrub_interval_ticks;
        cfg.app_read_rate = sim.app_read_rate;
        cfg.log_events = sim.log_events;

        let aggressors: Vec<RowAddress> = attack
            .aggressors
            .iter()
            .map(|s| parse_row(s).map(RowAddress))
            .collect::<Result<_, _>>()?;
        let mut pool_rng = rand_chacha::ChaCha12Rng::seed_from_u64(self.master_seed() ^ 0xDEC0);
        let decoys = if attack.pattern == AttackPattern::LowFreq && cfg.mitigation.raaimt > 1 {
            if attack.decoy_policy != "uniform-outside-exclusion" {
                return Err(invalid(format!("unknown decoy policy {:?}", attack.decoy_policy)));
            }
            attack::build_decoy_pool(
                &cfg.rank,
                &aggressors,
                cfg.mitigation.victim_levels,
                attack.decoy_pool_size,
                &mut pool_rng,
            )
            .map_err(|e| invalid(e.to_string()))?
        } else {
            Vec::new()
        };

        let mut streams = Vec::new();
        if let Some(victim) = &attack.shared_victim {
            let victim = RowAddress(parse_row(victim)?);
            let spec = attack::AttackSpec {
                pattern: attack.pattern,
                aggressors: aggressors.clone(),
                decoy_pool: decoys.clone(),
                banks: attack.banks,
                channels: attack.channels,
                simultaneous: attack.simultaneous,
                oracle: attack.oracle,
            };
            let plans = attack::orchestrate(&cfg.rank, victim, 1, &spec)
                .map_err(|e| invalid(e.to_string()))?;
            for plan in plans {
                streams.push(StreamSpec {
                    bank: plan.bank,
                    pattern: attack.pattern,
                    aggressors: Vec::new(),
                    decoys: decoys.clone(),
                    max_windows: attack.windows,
                    plan: Some(plan),
                });
            }
        } else {
            for bank in 0..attack.banks {
                for _ in 0..attack.simultaneous {
                    streams.push(StreamSpec {
                        bank,
                        pattern: attack.pattern,
                        aggressors: aggressors.clone(),
                        decoys: decoys.clone(),
                        max_windows: attack.windows,
                        plan: None,
                    });
                }
            }
        }
        Ok((cfg, streams))
    }
}
