//! Declarative scenario files (TOML) and dotted-key overrides.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::radio::{Area, WaypointParams};
use crate::routing::PhcRounding;
use crate::sim::NodeId;
use crate::tcp::{TcpConfig, Variant};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid scenario: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("bad override `{0}`: {1}")]
    Override(String, String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    #[default]
    Aodv,
    Part,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::Aodv => "aodv",
            Protocol::Part => "part",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "aodv" => Ok(Protocol::Aodv),
            "part" => Ok(Protocol::Part),
            _ => Err(format!("unknown routing protocol `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AreaConfig {
    pub area_w: f64,
    pub area_h: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    Grid,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodesConfig {
    pub layout: Layout,
    #[serde(default)]
    pub rows: u32,
    #[serde(default)]
    pub cols: u32,
    #[serde(default = "default_spacing")]
    pub spacing_m: f64,
    /// Node count for random layouts.
    #[serde(default)]
    pub count: usize,
}

fn default_spacing() -> f64 {
    200.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MobilityModel {
    #[default]
    Static,
    Rwp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MobilityConfig {
    pub model: MobilityModel,
    pub v_min: f64,
    pub v_max: f64,
    pub pause_s: f64,
}

impl Default for MobilityConfig {
    fn default() -> Self {
        MobilityConfig {
            model: MobilityModel::Static,
            v_min: 1.0,
            v_max: 0.0,
            pause_s: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadioConfig {
    pub range_m: f64,
    /// Carrier-sense and interference range. Frames from beyond `range_m`
    /// but within this distance cannot be decoded, yet they keep the medium
    /// busy and corrupt overlapping receptions.
    pub cs_range_m: f64,
    pub link_rate_bps: f64,
    /// Retransmissions of a unicast frame before the link is declared broken.
    pub mac_retries: u32,
    /// Interface queue capacity, packets.
    pub ifq_len: usize,
}

impl Default for RadioConfig {
    fn default() -> Self {
        RadioConfig {
            range_m: 250.0,
            cs_range_m: 550.0,
            link_rate_bps: 2_000_000.0,
            mac_retries: 4,
            ifq_len: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AodvConfig {
    pub rreq_retries: u32,
    /// TTL of a full discovery flood.
    pub rreq_ttl: u32,
    /// Wait for a reply before the first retry; doubles per retry.
    pub rreq_timeout_s: f64,
    pub route_lifetime_s: f64,
}

impl Default for AodvConfig {
    fn default() -> Self {
        AodvConfig {
            rreq_retries: 3,
            rreq_ttl: 30,
            rreq_timeout_s: 1.0,
            route_lifetime_s: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartConfig {
    pub min_allowable_hc: u32,
    pub phc_rounding: PhcRounding,
    /// TTL of a local-repair request.
    pub repair_ttl: u32,
    /// Wait for a repair reply, per attempt.
    pub repair_timeout_s: f64,
    /// Extra repair requests after the first goes unanswered.
    pub repair_retries: u32,
    pub proxy_error_window_s: f64,
    pub proxy_error_threshold: u32,
    /// Source fallback: rediscover after this many RTOs without progress.
    pub fallback_rto_factor: f64,
}

impl Default for PartConfig {
    fn default() -> Self {
        PartConfig {
            min_allowable_hc: 3,
            phc_rounding: PhcRounding::Ceil,
            repair_ttl: 2,
            repair_timeout_s: 0.15,
            repair_retries: 1,
            proxy_error_window_s: 2.0,
            proxy_error_threshold: 3,
            fallback_rto_factor: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub src: NodeId,
    pub dst: NodeId,
    #[serde(default)]
    pub start_s: f64,
}

/// Drops one transmission of a data segment when it reaches `at_node`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultConfig {
    pub flow: u32,
    pub seqno: u32,
    /// Which transmission of the segment to drop, counted from 1.
    #[serde(default = "one")]
    pub transmission: u32,
    pub at_node: NodeId,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub duration_s: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_variant")]
    pub variant: Variant,
    #[serde(default)]
    pub routing: Protocol,
    #[serde(default)]
    pub pack_enabled: bool,
    pub area: AreaConfig,
    pub nodes: NodesConfig,
    #[serde(default)]
    pub mobility: MobilityConfig,
    #[serde(default)]
    pub radio: RadioConfig,
    #[serde(default)]
    pub aodv: AodvConfig,
    #[serde(default)]
    pub part: PartConfig,
    #[serde(default)]
    pub tcp: TcpConfig,
    #[serde(default)]
    pub flows: Vec<FlowConfig>,
    #[serde(default)]
    pub faults: Vec<FaultConfig>,
}

fn default_variant() -> Variant {
    Variant::Reno
}

const BUNDLED: [(&str, &str); 2] = [
    ("grid7x7", include_str!("../scenarios/grid7x7.toml")),
    ("mobile30", include_str!("../scenarios/mobile30.toml")),
];

/// Aliases accepted by [`Scenario::apply_override`].
const ALIASES: [(&str, &str); 1] = [("speed", "mobility.v_max")];

impl Scenario {
    pub fn bundled_names() -> impl Iterator<Item = &'static str> {
        BUNDLED.iter().map(|(n, _)| *n)
    }

    pub fn bundled(name: &str) -> Option<Scenario> {
        BUNDLED
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, text)| Scenario::from_toml(text).expect("bundled scenario is valid"))
    }

    pub fn from_toml(text: &str) -> Result<Scenario, ScenarioError> {
        let sc: Scenario = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        sc.validate()?;
        Ok(sc)
    }

    /// Loads a bundled scenario by name, or a TOML file by path.
    pub fn load(name_or_path: &str) -> Result<Scenario, ScenarioError> {
        if let Some(sc) = Scenario::bundled(name_or_path) {
            return Ok(sc);
        }
        let path = Path::new(name_or_path);
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: name_or_path.to_string(),
            source,
        })?;
        Scenario::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        if self.pack_enabled && self.routing != Protocol::Part {
            return bad("pack_enabled requires routing = \"part\"".into());
        }
        if !(self.duration_s > 0.0) {
            return bad(format!("duration_s must be positive, got {}", self.duration_s));
        }
        if !(self.area.area_w > 0.0 && self.area.area_h > 0.0) {
            return bad("area dimensions must be positive".into());
        }
        let n = self.node_count();
        if n == 0 {
            return bad("scenario has no nodes".into());
        }
        for (i, f) in self.flows.iter().enumerate() {
            if f.src as usize >= n || f.dst as usize >= n || f.src == f.dst {
                return bad(format!("flow {i}: bad endpoints {} -> {}", f.src, f.dst));
            }
            if f.start_s < 0.0 {
                return bad(format!("flow {i}: negative start"));
            }
        }
        for f in &self.faults {
            if f.flow as usize >= self.flows.len() || f.seqno == 0 || f.at_node as usize >= n {
                return bad(format!("fault {f:?} does not match the scenario"));
            }
        }
        if self.mobility.model == MobilityModel::Rwp && self.mobility.v_max < self.mobility.v_min {
            return bad("mobility.v_max below v_min".into());
        }
        if self.radio.range_m <= 0.0 || self.radio.link_rate_bps <= 0.0 {
            return bad("radio range and link rate must be positive".into());
        }
        if self.radio.cs_range_m < self.radio.range_m {
            return bad("radio.cs_range_m below range_m".into());
        }
        if self.tcp.mss_bytes == 0 {
            return bad("tcp.mss_bytes must be positive".into());
        }
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        match self.nodes.layout {
            Layout::Grid => (self.nodes.rows * self.nodes.cols) as usize,
            Layout::Random => self.nodes.count,
        }
    }

    pub fn area(&self) -> Area {
        Area {
            width: self.area.area_w,
            height: self.area.area_h,
        }
    }

    pub fn waypoint_params(&self) -> WaypointParams {
        match self.mobility.model {
            MobilityModel::Static => WaypointParams {
                v_min: 0.0,
                v_max: 0.0,
                pause_s: f64::INFINITY,
            },
            MobilityModel::Rwp => WaypointParams {
                v_min: self.mobility.v_min,
                v_max: self.mobility.v_max,
                pause_s: self.mobility.pause_s,
            },
        }
    }

    /// Nominal speed reported in results: the top speed of moving nodes.
    pub fn speed_mps(&self) -> f64 {
        match self.mobility.model {
            MobilityModel::Static => 0.0,
            MobilityModel::Rwp => self.mobility.v_max,
        }
    }

    /// Applies `key=value`. Keys are dotted paths (`radio.range_m`), or a bare
    /// leaf name when it is unique across the scenario.
    pub fn apply_override(&mut self, spec: &str) -> Result<(), ScenarioError> {
        let err = |m: &str| ScenarioError::Override(spec.to_string(), m.to_string());
        let (key, raw) = spec.split_once('=').ok_or_else(|| err("expected key=value"))?;
        let key = key.trim();
        let raw = raw.trim();
        let mut doc = toml::Value::try_from(&*self).map_err(|e| err(&e.to_string()))?;
        let path = resolve_key(&doc, key).map_err(|m| err(&m))?;
        let value = parse_value(raw);
        let table = doc.as_table_mut().expect("scenario is a table");
        let (leaf, parents) = path.split_last().expect("non-empty path");
        let mut t = table;
        for p in parents {
            t = t
                .get_mut(p.as_str())
                .and_then(toml::Value::as_table_mut)
                .ok_or_else(|| err("unknown section"))?;
        }
        // Keep the existing numeric type: `speed=20` on a float field.
        let value = match (t.get(leaf.as_str()), value) {
            (Some(toml::Value::Float(_)), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
            (_, v) => v,
        };
        t.insert(leaf.clone(), value);
        let sc: Scenario = doc.try_into().map_err(|e: toml::de::Error| err(e.message()))?;
        sc.validate().map_err(|e| err(&e.to_string()))?;
        *self = sc;
        Ok(())
    }
}

fn parse_value(raw: &str) -> toml::Value {
    let probe = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&probe) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn resolve_key(doc: &toml::Value, key: &str) -> Result<Vec<String>, String> {
    let key = ALIASES
        .iter()
        .find(|(a, _)| *a == key)
        .map_or(key, |(_, full)| *full);
    let table = doc.as_table().expect("scenario is a table");
    if key.contains('.') {
        let parts: Vec<String> = key.split('.').map(str::to_string).collect();
        let mut t = table;
        for p in &parts[..parts.len() - 1] {
            t = t
                .get(p)
                .and_then(toml::Value::as_table)
                .ok_or_else(|| format!("unknown section `{p}`"))?;
        }
        let leaf = parts.last().expect("non-empty");
        if !t.contains_key(leaf) {
            return Err(format!("unknown key `{key}`"));
        }
        return Ok(parts);
    }
    let mut hits = Vec::new();
    if table.get(key).is_some_and(|v| !v.is_table()) {
        hits.push(vec![key.to_string()]);
    }
    for (section, v) in table {
        if let Some(t) = v.as_table() {
            if t.contains_key(key) {
                hits.push(vec![section.clone(), key.to_string()]);
            }
        }
    }
    match hits.len() {
        1 => Ok(hits.pop().expect("one hit")),
        0 => Err(format!("unknown key `{key}`")),
        _ => Err(format!("ambiguous key `{key}`; use section.{key}")),
    }
}
