//! Scenario configuration, loaded from TOML.

use std::path::{Path, PathBuf};

use localcoin_core::node::{BuilderPolicy, NodeConfig};
use localcoin_core::{ProtocolParams, SimTime};
use serde::{Deserialize, Serialize};

use crate::adversary::AttackPlanConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("invalid `{field}`: {message}")]
    Invalid { field: &'static str, message: String },
}

impl ConfigError {
    fn invalid(field: &'static str, message: impl Into<String>) -> Self {
        ConfigError::Invalid { field, message: message.into() }
    }
}

/// Protocol knobs as written in a config file.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamsConfig {
    pub m_tr: u32,
    pub block_size: u32,
    pub m_vu: u32,
    pub avd: f64,
    pub r_cov: f64,
    pub strict_threshold: bool,
    pub location_slack: f64,
}

impl Default for ParamsConfig {
    fn default() -> Self {
        ProtocolParams::default().into()
    }
}

impl From<ProtocolParams> for ParamsConfig {
    fn from(p: ProtocolParams) -> Self {
        ParamsConfig {
            m_tr: p.m_tr,
            block_size: p.block_size,
            m_vu: p.m_vu,
            avd: p.avd,
            r_cov: p.r_cov,
            strict_threshold: p.strict_threshold,
            location_slack: p.location_slack,
        }
    }
}

impl From<ParamsConfig> for ProtocolParams {
    fn from(p: ParamsConfig) -> Self {
        ProtocolParams {
            m_tr: p.m_tr,
            block_size: p.block_size,
            m_vu: p.m_vu,
            avd: p.avd,
            r_cov: p.r_cov,
            strict_threshold: p.strict_threshold,
            location_slack: p.location_slack,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PlacementConfig {
    Uniform {
        n: usize,
        #[serde(default)]
        pinned: Vec<PinnedNode>,
    },
    /// Uniform on the unit torus; distances wrap around.
    Torus { n: usize },
    /// Poisson counts on a 10x10 grid, one rate per cell.
    GridPoisson { weights: Vec<Vec<f64>> },
    /// Nodes split evenly over axis-aligned boxes `[x0, y0, x1, y1]`.
    Clusters {
        n: usize,
        boxes: Vec<[f64; 4]>,
        #[serde(default)]
        pinned: Vec<PinnedNode>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PinnedNode {
    pub id: u64,
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MobilityConfig {
    Static,
    /// Random waypoint over a square service area, speeds in km/h.
    Waypoint {
        speed_min: f64,
        speed_max: f64,
        area_km2: f64,
        #[serde(default)]
        pause: f64,
    },
    /// Contacts come from a CSV trace (`a,b,start,end`), resolved relative
    /// to the config file.
    TraceReplay { trace: PathBuf },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalLaw {
    /// Each user sends `per_user` payments at uniform times.
    Uniform,
    /// One network-wide Poisson stream with `rate` payments per second.
    Poisson,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReceiverLaw {
    Uniform,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedTx {
    pub at: f64,
    pub from: u64,
    pub to: u64,
    #[serde(default = "default_amount")]
    pub amount: u64,
}

fn default_amount() -> u64 {
    1000
}

/// Payment workload. Amounts and fees are in milli-coins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Workload {
    pub per_user: u32,
    pub arrival: ArrivalLaw,
    pub rate: f64,
    pub receiver: ReceiverLaw,
    pub start: f64,
    pub amount: u64,
    pub tx_fee: u64,
    pub block_fee: u64,
    pub scripted: Vec<ScriptedTx>,
}

impl Default for Workload {
    fn default() -> Self {
        Workload {
            per_user: 0,
            arrival: ArrivalLaw::Uniform,
            rate: 0.0,
            receiver: ReceiverLaw::Uniform,
            start: 0.0,
            amount: 1000,
            tx_fee: 10,
            block_fee: 10,
            scripted: Vec::new(),
        }
    }
}

/// Initial funds and trusted networks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EconomyConfig {
    /// Milli-coins each user starts with.
    pub initial_balance: u64,
    /// Number of separate outputs the initial balance is split into.
    pub initial_outputs: u32,
    /// Trusted peers each user picks; trust is made symmetric.
    pub trust_size: u32,
}

impl Default for EconomyConfig {
    fn default() -> Self {
        EconomyConfig { initial_balance: 100_000, initial_outputs: 10, trust_size: 8 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuilderPolicyConfig {
    Any,
    Participants,
}

/// Relay and proposal behavior of every node, in seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NodeSettings {
    pub carry_forward: bool,
    pub carry_ttl: f64,
    pub builder_policy: BuilderPolicyConfig,
    pub proposal_timeout: f64,
    pub fresh_window: f64,
}

impl Default for NodeSettings {
    fn default() -> Self {
        let d = NodeConfig::default();
        NodeSettings {
            carry_forward: d.carry_forward,
            carry_ttl: d.carry_ttl.as_secs_f64(),
            builder_policy: BuilderPolicyConfig::Participants,
            proposal_timeout: d.proposal_timeout.as_secs_f64(),
            fresh_window: d.fresh_window.as_secs_f64(),
        }
    }
}

impl From<NodeSettings> for NodeConfig {
    fn from(s: NodeSettings) -> Self {
        NodeConfig {
            carry_forward: s.carry_forward,
            carry_ttl: SimTime::from_secs_f64(s.carry_ttl),
            builder_policy: match s.builder_policy {
                BuilderPolicyConfig::Any => BuilderPolicy::Any,
                BuilderPolicyConfig::Participants => BuilderPolicy::Participants,
            },
            proposal_timeout: SimTime::from_secs_f64(s.proposal_timeout),
            fresh_window: SimTime::from_secs_f64(s.fresh_window),
        }
    }
}

/// Everything one run needs. Times are in seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub params: ParamsConfig,
    pub placement: PlacementConfig,
    #[serde(default = "static_mobility")]
    pub mobility: MobilityConfig,
    pub duration: f64,
    #[serde(default)]
    pub tx_workload: Workload,
    #[serde(default)]
    pub adversary_plan: Option<AttackPlanConfig>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one_second")]
    pub tick: f64,
    #[serde(default)]
    pub economy: EconomyConfig,
    #[serde(default)]
    pub node: NodeSettings,
}

fn static_mobility() -> MobilityConfig {
    MobilityConfig::Static
}

fn one_second() -> f64 {
    1.0
}

impl ScenarioConfig {
    /// A static uniform scenario with default settings.
    pub fn new(n: usize, duration: f64) -> Self {
        ScenarioConfig {
            params: ParamsConfig::default(),
            placement: PlacementConfig::Uniform { n, pinned: Vec::new() },
            mobility: MobilityConfig::Static,
            duration,
            tx_workload: Workload::default(),
            adversary_plan: None,
            seed: 0,
            tick: 1.0,
            economy: EconomyConfig::default(),
            node: NodeSettings::default(),
        }
    }

    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let mut cfg: ScenarioConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            line: e.span().map_or(0, |s| text[..s.start.min(text.len())].matches('\n').count() + 1),
            message: e.message().to_string(),
        })?;
        if let MobilityConfig::TraceReplay { trace } = &mut cfg.mobility {
            if trace.is_relative() {
                if let Some(dir) = path.parent() {
                    *trace = dir.join(&*trace);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn users(&self) -> usize {
        match &self.placement {
            PlacementConfig::Uniform { n, .. } | PlacementConfig::Torus { n } | PlacementConfig::Clusters { n, .. } => {
                *n
            }
            // fixed only once sampled; callers use the world's size
            PlacementConfig::GridPoisson { .. } => 0,
        }
    }

    pub fn protocol(&self) -> ProtocolParams {
        self.params.into()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.protocol().validate().map_err(|e| ConfigError::invalid("params", e.to_string()))?;
        if !(self.duration > 0.0) {
            return Err(ConfigError::invalid("duration", "must be positive"));
        }
        if !(self.tick > 0.0) || SimTime::from_secs_f64(self.tick).millis() == 0 {
            return Err(ConfigError::invalid("tick", "must be at least one millisecond"));
        }
        match &self.placement {
            PlacementConfig::GridPoisson { weights } => {
                if weights.len() != 10 || weights.iter().any(|r| r.len() != 10) {
                    return Err(ConfigError::invalid("placement", "grid weights must be 10x10"));
                }
                if weights.iter().flatten().any(|w| !(*w >= 0.0)) {
                    return Err(ConfigError::invalid("placement", "grid weights must be non-negative"));
                }
            }
            PlacementConfig::Clusters { boxes, .. } if boxes.is_empty() => {
                return Err(ConfigError::invalid("placement", "at least one box is required"));
            }
            _ => {}
        }
        let n = self.users() as u64;
        let pinned = match &self.placement {
            PlacementConfig::Uniform { pinned, .. } | PlacementConfig::Clusters { pinned, .. } => pinned.as_slice(),
            _ => &[],
        };
        if pinned.iter().any(|p| p.id >= n || !(0.0..=1.0).contains(&p.x) || !(0.0..=1.0).contains(&p.y)) {
            return Err(ConfigError::invalid("placement", "pinned node out of range"));
        }
        if let MobilityConfig::Waypoint { speed_min, speed_max, area_km2, pause } = self.mobility {
            if !(speed_min > 0.0 && speed_max >= speed_min) {
                return Err(ConfigError::invalid("mobility", "waypoint speeds must be positive and ordered"));
            }
            if !(area_km2 > 0.0) || !(pause >= 0.0) {
                return Err(ConfigError::invalid("mobility", "area must be positive and pause non-negative"));
            }
        }
        let w = &self.tx_workload;
        if w.arrival == ArrivalLaw::Poisson && !(w.rate >= 0.0) {
            return Err(ConfigError::invalid("tx_workload", "rate must be non-negative"));
        }
        if w.scripted.iter().any(|s| s.from >= n && n > 0 || s.to >= n && n > 0 || s.from == s.to || !(s.at >= 0.0)) {
            return Err(ConfigError::invalid("tx_workload", "scripted payment has bad endpoints or time"));
        }
        if self.economy.initial_outputs == 0 {
            return Err(ConfigError::invalid("economy", "initial_outputs must be at least 1"));
        }
        if let Some(plan) = &self.adversary_plan {
            plan.validate(n).map_err(|m| ConfigError::invalid("adversary_plan", m))?;
        }
        Ok(())
    }
}
