//! Scenario configuration: the TOML schema, validation with precise
//! errors, and the named presets for the standard experiment suite.
//!
//! A scenario file describes the cluster (nodes, positions, services),
//! the radio profile, protocol knobs, metric reporting, fault injections,
//! and optional bundle-sync traffic. Unknown keys are rejected. All
//! durations are strings like `"300us"`, `"45s"`, `"5m"`, `"2h"`, or
//! combinations (`"1h30m"`).

use crate::cluster::{ServiceLayout, ServicePlacement, ServiceSpec, StartTimeModel};
use crate::kernel::SimTime;
use crate::radio::{NodePosition, PathLossModel, RadioParams};
use crate::transfer::TransferConfig;
use crate::NodeId;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer};
use std::collections::BTreeSet;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read scenario file: {0}")]
    Io(#[from] std::io::Error),
    #[error("scenario parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
}

fn invalid(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid(msg.into())
}

/// Parse a human duration like `"150us"`, `"20ms"`, `"45s"`, `"5m"`,
/// `"2h"`, or a concatenation (`"1h30m"`). A bare integer means seconds.
pub fn parse_duration(text: &str) -> Result<SimTime, String> {
    let s = text.trim();
    if s.is_empty() {
        return Err("empty duration".into());
    }
    if let Ok(secs) = s.parse::<u64>() {
        return Ok(SimTime::from_secs(secs));
    }
    let mut total = 0u64;
    let mut number = String::new();
    let mut chars = s.chars().peekable();
    while let Some(c) = chars.next() {
        if c.is_ascii_digit() {
            number.push(c);
            continue;
        }
        let value: u64 = number
            .parse()
            .map_err(|_| format!("missing number before unit in `{text}`"))?;
        number.clear();
        let factor = match c {
            'h' => 3_600_000_000,
            's' => 1_000_000,
            'm' => {
                if chars.peek() == Some(&'s') {
                    chars.next();
                    1_000
                } else {
                    60_000_000
                }
            }
            'u' => {
                if chars.next() != Some('s') {
                    return Err(format!("unknown unit in `{text}`"));
                }
                1
            }
            other => return Err(format!("unknown unit `{other}` in `{text}`")),
        };
        total += value * factor;
    }
    if !number.is_empty() {
        return Err(format!("trailing number without unit in `{text}`"));
    }
    Ok(SimTime::from_micros(total))
}

/// A duration field in the TOML schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ConfigDuration(pub SimTime);

impl<'de> Deserialize<'de> for ConfigDuration {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        parse_duration(&text)
            .map(ConfigDuration)
            .map_err(D::Error::custom)
    }
}

impl From<ConfigDuration> for SimTime {
    fn from(d: ConfigDuration) -> SimTime {
        d.0
    }
}

// ---------------------------------------------------------------------------
// Raw file schema (serde view of the TOML)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub duration: ConfigDuration,
    /// A latency above `spike_factor` times the run median counts as a
    /// spike in the summary.
    #[serde(default = "default_spike_factor")]
    pub spike_factor: f64,
    #[serde(default)]
    pub radio: RadioParams,
    #[serde(default)]
    pub link: LinkSection,
    #[serde(default)]
    pub duty_cycle: DutySection,
    #[serde(default)]
    pub protocol: ProtocolSection,
    #[serde(default)]
    pub cluster: ClusterSection,
    #[serde(default)]
    pub metrics: MetricsSection,
    pub nodes: Vec<NodeSection>,
    #[serde(default)]
    pub services: Vec<ServiceSection>,
    #[serde(default)]
    pub faults: Vec<FaultSection>,
    #[serde(default)]
    pub sync: Option<SyncSection>,
}

fn default_seed() -> u64 {
    42
}

fn default_spike_factor() -> f64 {
    1.5
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkSection {
    pub path_loss_exponent: f64,
    pub reference_loss_db: f64,
    pub reference_distance_m: f64,
    pub shadowing_sigma_db: f64,
    /// Extra i.i.d. per-frame, per-receiver loss probability.
    pub extra_loss_rate: f64,
    pub capture_enabled: bool,
    pub capture_margin_db: f64,
    /// Override the SF/BW sensitivity table.
    pub sensitivity_dbm: Option<f64>,
}

impl Default for LinkSection {
    fn default() -> Self {
        let p = PathLossModel::default();
        LinkSection {
            path_loss_exponent: p.exponent,
            reference_loss_db: p.reference_loss_db,
            reference_distance_m: p.reference_distance_m,
            shadowing_sigma_db: p.shadowing_sigma_db,
            extra_loss_rate: 0.0,
            capture_enabled: true,
            capture_margin_db: 6.0,
            sensitivity_dbm: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DutySection {
    pub window: ConfigDuration,
    pub budget_numerator: u64,
    pub budget_denominator: u64,
}

impl Default for DutySection {
    fn default() -> Self {
        DutySection {
            window: ConfigDuration(SimTime::from_hours(1)),
            budget_numerator: 1,
            budget_denominator: 100,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolSection {
    pub max_retries: u32,
    pub receiver_gap_floor: ConfigDuration,
    pub nack_round_limit: u32,
    pub ack_timeout_factor: u32,
    pub reassembly_idle_timeout: ConfigDuration,
    pub max_message_bytes: usize,
    /// Timers stretch by a uniform factor in [1, 1 + frac): desynchronises
    /// retry storms after simultaneous collisions.
    pub timer_jitter_frac: f64,
}

impl Default for ProtocolSection {
    fn default() -> Self {
        let t = TransferConfig::default();
        ProtocolSection {
            max_retries: t.max_retries,
            receiver_gap_floor: ConfigDuration(t.receiver_gap_floor),
            nack_round_limit: t.nack_round_limit,
            ack_timeout_factor: t.ack_timeout_factor,
            reassembly_idle_timeout: ConfigDuration(t.reassembly_idle_timeout),
            max_message_bytes: t.max_message_bytes,
            timer_jitter_frac: 0.25,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterSection {
    /// Zero disables heartbeats entirely (link-layer test scenarios).
    pub heartbeat_interval: ConfigDuration,
    pub heartbeat_jitter_frac: f64,
    pub suspect_timeout: ConfigDuration,
    pub offline_timeout: ConfigDuration,
    /// Cadence of the liveness sweep and local service monitor.
    pub check_interval: ConfigDuration,
}

impl Default for ClusterSection {
    fn default() -> Self {
        ClusterSection {
            heartbeat_interval: ConfigDuration(SimTime::from_secs(30)),
            heartbeat_jitter_frac: 0.1,
            suspect_timeout: ConfigDuration(SimTime::from_secs(60)),
            offline_timeout: ConfigDuration(SimTime::from_secs(90)),
            check_interval: ConfigDuration(SimTime::from_secs(1)),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    pub interval: ConfigDuration,
    pub start_offsets: OffsetSpec,
    pub ingestor_service: String,
    /// When false, the node primarily hosting the ingestor service does
    /// not report its own metrics (four-transmitter setup).
    pub ingestor_self_report: bool,
    /// Packets buffered while no ingestor host is reachable.
    pub forward_buffer: usize,
    pub cpu_baseline: f64,
    pub memory_baseline: f64,
    /// Gauges are baseline +- uniform(noise).
    pub gauge_noise: f64,
}

impl Default for MetricsSection {
    fn default() -> Self {
        MetricsSection {
            interval: ConfigDuration(SimTime::from_mins(5)),
            start_offsets: OffsetSpec::Staggered,
            ingestor_service: "influxdb".into(),
            ingestor_self_report: false,
            forward_buffer: 64,
            cpu_baseline: 25.0,
            memory_baseline: 40.0,
            gauge_noise: 10.0,
        }
    }
}

/// How reporting nodes phase their first samples within the interval.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OffsetSpec {
    Synchronized,
    Staggered,
    Explicit(Vec<ConfigDuration>),
}

impl<'de> Deserialize<'de> for OffsetSpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Named(String),
            Explicit(Vec<ConfigDuration>),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Named(name) => match name.as_str() {
                "synchronized" => Ok(OffsetSpec::Synchronized),
                "staggered" => Ok(OffsetSpec::Staggered),
                other => Err(D::Error::custom(format!(
                    "start_offsets must be \"synchronized\", \"staggered\", or a list, got `{other}`"
                ))),
            },
            Raw::Explicit(list) => Ok(OffsetSpec::Explicit(list)),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSection {
    pub name: String,
    /// Metres: [x, y, z].
    pub position: [f64; 3],
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceSection {
    pub name: String,
    pub primary: String,
    pub fallbacks: Vec<String>,
    #[serde(default = "default_image_size")]
    pub image_size_mb: f64,
    #[serde(default)]
    pub start_time: StartTimeSpec,
}

fn default_image_size() -> f64 {
    339.0
}

/// Start-time model in the file schema.
#[derive(Debug, Clone, PartialEq)]
pub enum StartTimeSpec {
    TablePool,
    Constant(ConfigDuration),
    Pool(Vec<ConfigDuration>),
}

impl Default for StartTimeSpec {
    fn default() -> Self {
        StartTimeSpec::TablePool
    }
}

impl<'de> Deserialize<'de> for StartTimeSpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Named(String),
            Constant { constant: ConfigDuration },
            Pool { pool: Vec<ConfigDuration> },
        }
        match Raw::deserialize(deserializer)? {
            Raw::Named(name) if name == "table-pool" => Ok(StartTimeSpec::TablePool),
            Raw::Named(other) => Err(D::Error::custom(format!(
                "start_time must be \"table-pool\", {{ constant = .. }}, or {{ pool = [..] }}, got `{other}`"
            ))),
            Raw::Constant { constant } => Ok(StartTimeSpec::Constant(constant)),
            Raw::Pool { pool } => Ok(StartTimeSpec::Pool(pool)),
        }
    }
}

impl StartTimeSpec {
    fn to_model(&self) -> Result<StartTimeModel, ScenarioError> {
        Ok(match self {
            StartTimeSpec::TablePool => StartTimeModel::default(),
            StartTimeSpec::Constant(d) => StartTimeModel::Constant(d.0),
            StartTimeSpec::Pool(pool) => {
                if pool.is_empty() {
                    return Err(invalid("start_time pool must not be empty"));
                }
                StartTimeModel::EmpiricalPool(pool.iter().map(|d| d.0).collect())
            }
        })
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSection {
    pub at: ConfigDuration,
    pub kind: FaultKindSection,
    #[serde(default)]
    pub node: Option<String>,
    #[serde(default)]
    pub service: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKindSection {
    KillNode,
    KillService,
    ReviveNode,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyncSection {
    pub publisher: String,
    #[serde(default = "default_sync_start")]
    pub start: ConfigDuration,
    pub interval: ConfigDuration,
    pub bundle_bytes: usize,
    /// Size of a full-resync bundle; defaults to 4x the incremental size.
    #[serde(default)]
    pub resync_bytes: Option<usize>,
}

fn default_sync_start() -> ConfigDuration {
    ConfigDuration(SimTime::from_mins(10))
}

// ---------------------------------------------------------------------------
// Resolved configuration (engine-facing)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    pub duration: SimTime,
    pub spike_factor: f64,
    pub radio: RadioParams,
    pub path_loss: PathLossModel,
    pub extra_loss_rate: f64,
    pub capture_margin_db: Option<f64>,
    pub sensitivity_dbm: Option<f64>,
    pub duty_window: SimTime,
    pub duty_budget: (u64, u64),
    pub transfer: TransferConfig,
    pub timer_jitter_frac: f64,
    pub heartbeat_interval: SimTime,
    pub heartbeat_jitter_frac: f64,
    pub suspect_timeout: SimTime,
    pub offline_timeout: SimTime,
    pub check_interval: SimTime,
    pub metric_interval: SimTime,
    pub ingestor_service: String,
    pub ingestor_self_report: bool,
    pub forward_buffer: usize,
    pub cpu_baseline: f64,
    pub memory_baseline: f64,
    pub gauge_noise: f64,
    pub node_names: Vec<String>,
    pub positions: Vec<NodePosition>,
    pub layout: ServiceLayout,
    /// (node, first-sample offset) for every reporting node.
    pub metric_offsets: Vec<(NodeId, SimTime)>,
    pub faults: Vec<Fault>,
    pub sync: Option<SyncConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fault {
    pub at: SimTime,
    pub action: FaultAction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultAction {
    KillNode(NodeId),
    ReviveNode(NodeId),
    KillService(crate::ServiceIdx),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyncConfig {
    pub publisher: NodeId,
    pub start: SimTime,
    pub interval: SimTime,
    pub bundle_bytes: usize,
    pub resync_bytes: usize,
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        let file: ScenarioFile = toml::from_str(text)?;
        file.resolve()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn node_id(&self, name: &str) -> Option<NodeId> {
        self.node_names
            .iter()
            .position(|n| n == name)
            .map(|i| NodeId(i as u8))
    }

    pub fn node_name(&self, id: NodeId) -> &str {
        &self.node_names[id.index()]
    }

    /// Index of the ingestor service in the layout, when metrics are on.
    pub fn ingestor_idx(&self) -> Option<crate::ServiceIdx> {
        self.layout.index_of(&self.ingestor_service)
    }
}

impl ScenarioFile {
    fn node_id(&self, name: &str) -> Result<NodeId, ScenarioError> {
        self.nodes
            .iter()
            .position(|n| n.name == name)
            .map(|i| NodeId(i as u8))
            .ok_or_else(|| invalid(format!("reference to undefined node `{name}`")))
    }

    /// Validate everything and produce the engine-facing config.
    pub fn resolve(self) -> Result<ScenarioConfig, ScenarioError> {
        if self.duration.0 == SimTime::ZERO {
            return Err(invalid("duration must be positive"));
        }
        if self.nodes.is_empty() {
            return Err(invalid("at least one node is required"));
        }
        if self.nodes.len() > 254 {
            return Err(invalid("at most 254 nodes are supported"));
        }
        self.radio
            .validate()
            .map_err(|e| invalid(e.to_string()))?;

        let mut seen = BTreeSet::new();
        for node in &self.nodes {
            if node.name.contains(',') || node.name.is_empty() {
                return Err(invalid(format!("node name `{}` must be non-empty without commas", node.name)));
            }
            if !seen.insert(&node.name) {
                return Err(invalid(format!("duplicate node name `{}`", node.name)));
            }
        }
        for (i, a) in self.nodes.iter().enumerate() {
            for b in &self.nodes[..i] {
                if a.position == b.position {
                    return Err(invalid(format!(
                        "nodes `{}` and `{}` share the same position",
                        a.name, b.name
                    )));
                }
            }
        }

        if !(0.0..=1.0).contains(&self.link.extra_loss_rate) {
            return Err(invalid("extra_loss_rate must be in [0, 1]"));
        }
        if self.link.shadowing_sigma_db < 0.0 {
            return Err(invalid("shadowing_sigma_db must be non-negative"));
        }
        if self.duty_cycle.budget_denominator == 0
            || self.duty_cycle.budget_numerator > self.duty_cycle.budget_denominator
        {
            return Err(invalid("duty budget fraction must be in (0, 1]"));
        }
        if self.duty_cycle.window.0 == SimTime::ZERO {
            return Err(invalid("duty window must be positive"));
        }
        if !(0.0..1.0).contains(&self.protocol.timer_jitter_frac) {
            return Err(invalid("timer_jitter_frac must be in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.cluster.heartbeat_jitter_frac) {
            return Err(invalid("heartbeat_jitter_frac must be in [0, 1)"));
        }
        if self.cluster.check_interval.0 == SimTime::ZERO {
            return Err(invalid("check_interval must be positive"));
        }
        if self.cluster.heartbeat_interval.0 > SimTime::ZERO
            && self.cluster.offline_timeout.0 <= self.cluster.heartbeat_interval.0
        {
            return Err(invalid(
                "offline_timeout must exceed the heartbeat interval",
            ));
        }

        // Services.
        let mut layout = ServiceLayout::default();
        let mut service_names = BTreeSet::new();
        if self.services.len() > 254 {
            return Err(invalid("at most 254 services are supported"));
        }
        for svc in &self.services {
            if svc.name.contains(',') || svc.name.is_empty() {
                return Err(invalid(format!("service name `{}` must be non-empty without commas", svc.name)));
            }
            if !service_names.insert(svc.name.clone()) {
                return Err(invalid(format!("duplicate service name `{}`", svc.name)));
            }
            if svc.image_size_mb <= 0.0 {
                return Err(invalid(format!(
                    "service `{}` image_size_mb must be positive",
                    svc.name
                )));
            }
            let primary = self.node_id(&svc.primary)?;
            if svc.fallbacks.is_empty() {
                return Err(invalid(format!(
                    "service `{}` needs a non-empty fallback list",
                    svc.name
                )));
            }
            let mut fallbacks = Vec::new();
            for fb in &svc.fallbacks {
                let id = self.node_id(fb)?;
                if id == primary {
                    return Err(invalid(format!(
                        "service `{}` lists its primary among the fallbacks",
                        svc.name
                    )));
                }
                if fallbacks.contains(&id) {
                    return Err(invalid(format!(
                        "service `{}` has duplicate fallback `{fb}`",
                        svc.name
                    )));
                }
                fallbacks.push(id);
            }
            layout.services.push(ServicePlacement {
                spec: ServiceSpec {
                    name: svc.name.clone(),
                    image_size_mb: svc.image_size_mb,
                    start_time_model: svc.start_time.to_model()?,
                },
                primary,
                fallbacks,
            });
        }

        let metrics_active = layout.index_of(&self.metrics.ingestor_service).is_some();
        if !self.services.is_empty() && !metrics_active {
            return Err(invalid(format!(
                "ingestor service `{}` is not among the declared services",
                self.metrics.ingestor_service
            )));
        }
        if metrics_active && self.metrics.interval.0 == SimTime::ZERO {
            return Err(invalid("metrics interval must be positive"));
        }

        // Reporting nodes and their first-sample offsets.
        let mut metric_offsets = Vec::new();
        if metrics_active {
            let ingestor_idx = layout.index_of(&self.metrics.ingestor_service).unwrap();
            let ingestor_primary = layout.get(ingestor_idx).primary;
            let reporters: Vec<NodeId> = (0..self.nodes.len() as u8)
                .map(NodeId)
                .filter(|&n| self.metrics.ingestor_self_report || n != ingestor_primary)
                .collect();
            let interval = self.metrics.interval.0;
            match &self.metrics.start_offsets {
                OffsetSpec::Synchronized => {
                    metric_offsets = reporters.iter().map(|&n| (n, SimTime::ZERO)).collect();
                }
                OffsetSpec::Staggered => {
                    let n = reporters.len() as u64;
                    metric_offsets = reporters
                        .iter()
                        .enumerate()
                        .map(|(rank, &node)| {
                            let off = SimTime::from_micros(
                                interval.as_micros() * rank as u64 / n.max(1),
                            );
                            (node, off)
                        })
                        .collect();
                }
                OffsetSpec::Explicit(list) => {
                    if list.len() != reporters.len() {
                        return Err(invalid(format!(
                            "start_offsets lists {} entries but {} nodes report metrics",
                            list.len(),
                            reporters.len()
                        )));
                    }
                    for off in list {
                        if off.0 >= interval {
                            return Err(invalid(format!(
                                "start offset {} must be below the metric interval {}",
                                off.0, interval
                            )));
                        }
                    }
                    metric_offsets = reporters
                        .iter()
                        .zip(list)
                        .map(|(&n, off)| (n, off.0))
                        .collect();
                }
            }
        }

        // Faults.
        let mut faults = Vec::new();
        for fault in &self.faults {
            let action = match fault.kind {
                FaultKindSection::KillNode | FaultKindSection::ReviveNode => {
                    let name = fault.node.as_ref().ok_or_else(|| {
                        invalid("kill_node/revive_node faults need a `node` field")
                    })?;
                    let id = self.node_id(name)?;
                    if fault.kind == FaultKindSection::KillNode {
                        FaultAction::KillNode(id)
                    } else {
                        FaultAction::ReviveNode(id)
                    }
                }
                FaultKindSection::KillService => {
                    let name = fault
                        .service
                        .as_ref()
                        .ok_or_else(|| invalid("kill_service faults need a `service` field"))?;
                    let idx = layout
                        .index_of(name)
                        .ok_or_else(|| invalid(format!("fault references undefined service `{name}`")))?;
                    FaultAction::KillService(idx)
                }
            };
            if fault.at.0 >= self.duration.0 {
                return Err(invalid(format!(
                    "fault at {} is beyond the scenario duration",
                    fault.at.0
                )));
            }
            faults.push(Fault {
                at: fault.at.0,
                action,
            });
        }
        faults.sort_by_key(|f| f.at);

        // Sync.
        let sync = match &self.sync {
            None => None,
            Some(s) => {
                if s.bundle_bytes == 0 {
                    return Err(invalid("sync bundle_bytes must be positive"));
                }
                if s.interval.0 == SimTime::ZERO {
                    return Err(invalid("sync interval must be positive"));
                }
                Some(SyncConfig {
                    publisher: self.node_id(&s.publisher)?,
                    start: s.start.0,
                    interval: s.interval.0,
                    bundle_bytes: s.bundle_bytes,
                    resync_bytes: s.resync_bytes.unwrap_or(s.bundle_bytes * 4),
                })
            }
        };

        let positions = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| NodePosition {
                node: NodeId(i as u8),
                x: n.position[0],
                y: n.position[1],
                z: n.position[2],
            })
            .collect();

        if !(self.spike_factor >= 1.0) {
            return Err(invalid("spike_factor must be at least 1"));
        }
        Ok(ScenarioConfig {
            name: self.name.unwrap_or_else(|| "scenario".into()),
            seed: self.seed,
            duration: self.duration.0,
            spike_factor: self.spike_factor,
            radio: self.radio,
            path_loss: PathLossModel {
                exponent: self.link.path_loss_exponent,
                reference_loss_db: self.link.reference_loss_db,
                reference_distance_m: self.link.reference_distance_m,
                shadowing_sigma_db: self.link.shadowing_sigma_db,
            },
            extra_loss_rate: self.link.extra_loss_rate,
            capture_margin_db: self
                .link
                .capture_enabled
                .then_some(self.link.capture_margin_db),
            sensitivity_dbm: self.link.sensitivity_dbm,
            duty_window: self.duty_cycle.window.0,
            duty_budget: (
                self.duty_cycle.budget_numerator,
                self.duty_cycle.budget_denominator,
            ),
            transfer: TransferConfig {
                max_retries: self.protocol.max_retries,
                receiver_gap_floor: self.protocol.receiver_gap_floor.0,
                nack_round_limit: self.protocol.nack_round_limit,
                ack_timeout_factor: self.protocol.ack_timeout_factor,
                reassembly_idle_timeout: self.protocol.reassembly_idle_timeout.0,
                max_message_bytes: self.protocol.max_message_bytes,
                ack_resend_min_gap: self.protocol.receiver_gap_floor.0,
            },
            timer_jitter_frac: self.protocol.timer_jitter_frac,
            heartbeat_interval: self.cluster.heartbeat_interval.0,
            heartbeat_jitter_frac: self.cluster.heartbeat_jitter_frac,
            suspect_timeout: self.cluster.suspect_timeout.0,
            offline_timeout: self.cluster.offline_timeout.0,
            check_interval: self.cluster.check_interval.0,
            metric_interval: self.metrics.interval.0,
            ingestor_service: self.metrics.ingestor_service.clone(),
            ingestor_self_report: self.metrics.ingestor_self_report,
            forward_buffer: self.metrics.forward_buffer,
            cpu_baseline: self.metrics.cpu_baseline,
            memory_baseline: self.metrics.memory_baseline,
            gauge_noise: self.metrics.gauge_noise,
            node_names: self.nodes.iter().map(|n| n.name.clone()).collect(),
            positions,
            layout,
            metric_offsets,
            faults,
            sync,
        })
    }
}

// ---------------------------------------------------------------------------
// Presets: the standard experiment suite
// ---------------------------------------------------------------------------

/// Five nodes on two floors of a small building; metres.
const FIVE_NODE_GEOMETRY: &str = r#"
[[nodes]]
name = "node0"
position = [0.0, 0.0, 0.0]

[[nodes]]
name = "node1"
position = [8.0, 0.0, 0.0]

[[nodes]]
name = "node2"
position = [0.0, 8.0, 0.0]

[[nodes]]
name = "node3"
position = [8.0, 8.0, 3.0]

[[nodes]]
name = "node4"
position = [3.0, 4.0, 3.0]
"#;

/// Cluster tuning for the fault-injection presets. Three nominal 30 s
/// intervals leave no slack once the +-10% jitter stretches them: two
/// colliding heartbeats in a row already breach 90 s and a healthy node
/// gets failed over. Four intervals tolerate two consecutive losses.
const FAULT_CLUSTER_TUNING: &str = r#"
[cluster]
offline_timeout = "120s"
"#;

const BASE_SERVICES: &str = r#"
[[services]]
name = "influxdb"
primary = "node0"
fallbacks = ["node1", "node2"]
image_size_mb = 339.0

[[services]]
name = "grafana"
primary = "node1"
fallbacks = ["node2", "node3"]
image_size_mb = 275.0
"#;

fn baseline_toml(name: &str, extra: &str) -> String {
    format!(
        "name = \"{name}\"\nseed = 42\nduration = \"2h\"\n{FIVE_NODE_GEOMETRY}\n{BASE_SERVICES}\n{extra}"
    )
}

fn failover_imagesize_toml() -> String {
    let mut toml = format!(
        "name = \"failover-imagesize\"\nseed = 42\nduration = \"8h\"\n{FIVE_NODE_GEOMETRY}\n{BASE_SERVICES}\n{FAULT_CLUSTER_TUNING}\n"
    );
    toml.push_str(
        r#"
[[services]]
name = "svc-small"
primary = "node2"
fallbacks = ["node3", "node4"]
image_size_mb = 8.83

[[services]]
name = "svc-mid"
primary = "node3"
fallbacks = ["node4", "node2"]
image_size_mb = 339.0

[[services]]
name = "svc-large"
primary = "node4"
fallbacks = ["node2", "node3"]
image_size_mb = 5470.0
"#,
    );
    // Kill each probe service every ten minutes; the local manager
    // restarts it within about a second, yielding 141 redeploy samples.
    for k in 0..47u64 {
        let at = 10 + k * 10;
        for svc in ["svc-small", "svc-mid", "svc-large"] {
            toml.push_str(&format!(
                "\n[[faults]]\nat = \"{at}m\"\nkind = \"kill_service\"\nservice = \"{svc}\"\n"
            ));
        }
    }
    toml
}

fn failover_nodekill_toml() -> String {
    let mut toml = format!(
        "name = \"failover-nodekill\"\nseed = 42\nduration = \"3h30m\"\n{FIVE_NODE_GEOMETRY}\n{BASE_SERVICES}\n{FAULT_CLUSTER_TUNING}\n"
    );
    toml.push_str(
        r#"
[[services]]
name = "app"
primary = "node2"
fallbacks = ["node3", "node4"]
image_size_mb = 120.0

[[faults]]
at = "30m"
kind = "kill_node"
node = "node2"

[[faults]]
at = "60m"
kind = "revive_node"
node = "node2"

[[faults]]
at = "90m"
kind = "kill_node"
node = "node3"

[[faults]]
at = "120m"
kind = "revive_node"
node = "node3"

[[faults]]
at = "150m"
kind = "kill_node"
node = "node4"

[[faults]]
at = "170m"
kind = "kill_node"
node = "node1"
"#,
    );
    toml
}

fn failover_ingestor_toml() -> String {
    format!(
        "name = \"failover-ingestor\"\nseed = 42\nduration = \"2h\"\n{FIVE_NODE_GEOMETRY}\n{BASE_SERVICES}\n{FAULT_CLUSTER_TUNING}\n
[[faults]]
at = \"30m\"
kind = \"kill_node\"
node = \"node0\"
"
    )
}

fn bundle_sync_toml() -> String {
    // The publisher hosts no services: a long bundle burst parks its own
    // heartbeats behind dozens of queued frames (the gate is strictly
    // FIFO), and a service-hosting node that goes quiet that long would
    // trigger a spurious failover.
    format!(
        "name = \"bundle-sync\"\nseed = 42\nduration = \"6h\"\n{FIVE_NODE_GEOMETRY}\n{BASE_SERVICES}\n
[sync]
publisher = \"node4\"
start = \"10m\"
interval = \"90m\"
bundle_bytes = 2048
"
    )
}

pub const PRESET_NAMES: &[&str] = &[
    "baseline-4-node",
    "baseline-5-node",
    "sync-4-node",
    "interval-10min",
    "bw-500k",
    "cr-4-8",
    "power-5dbm",
    "failover-imagesize",
    "failover-nodekill",
    "failover-ingestor",
    "bundle-sync",
];

/// TOML source of a named preset.
pub fn preset_toml(name: &str) -> Result<String, ScenarioError> {
    let toml = match name {
        "baseline-4-node" => baseline_toml("baseline-4-node", ""),
        "baseline-5-node" => baseline_toml(
            "baseline-5-node",
            "[metrics]\ningestor_self_report = true\n",
        ),
        "sync-4-node" => baseline_toml(
            "sync-4-node",
            "[metrics]\nstart_offsets = \"synchronized\"\n",
        ),
        "interval-10min" => baseline_toml(
            "interval-10min",
            "[metrics]\nstart_offsets = \"synchronized\"\ninterval = \"10m\"\n",
        ),
        "bw-500k" => baseline_toml("bw-500k", "[radio]\nbandwidth_hz = 500000\n"),
        "cr-4-8" => baseline_toml("cr-4-8", "[radio]\ncoding_rate_denominator = 8\n"),
        "power-5dbm" => baseline_toml("power-5dbm", "[radio]\ntx_power_dbm = 5\n"),
        "failover-imagesize" => failover_imagesize_toml(),
        "failover-nodekill" => failover_nodekill_toml(),
        "failover-ingestor" => failover_ingestor_toml(),
        "bundle-sync" => bundle_sync_toml(),
        other => return Err(ScenarioError::UnknownPreset(other.to_string())),
    };
    Ok(toml)
}

/// Load a named preset as a resolved config.
pub fn preset(name: &str) -> Result<ScenarioConfig, ScenarioError> {
    ScenarioConfig::from_toml_str(&preset_toml(name)?)
}
