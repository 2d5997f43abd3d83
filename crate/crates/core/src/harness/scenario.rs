//! Scenario files: a TOML document describing topology, flows, a timeline
//! and timing knobs. See the README for the grammar.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::net::Ipv6Addr;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::CostModel;
use crate::proto::{FlowLabel, LinkAddr, MnId, Prefix, SimTime};

use super::HarnessError;

/// A scenario failed to parse or validate.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{}{message}", .line.map(|l| format!("line {l}: ")).unwrap_or_default())]
pub struct ScenarioInvalid {
    pub line: Option<usize>,
    pub message: String,
}

impl ScenarioInvalid {
    pub fn new(message: impl Into<String>) -> Self {
        ScenarioInvalid {
            line: None,
            message: message.into(),
        }
    }
}

/// Validation failure plus a source fragment used to locate its line.
struct Problem {
    message: String,
    needle: Option<String>,
}

fn problem(message: impl Into<String>, needle: impl Into<String>) -> Problem {
    Problem {
        message: message.into(),
        needle: Some(needle.into()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerKind {
    /// Route each flow through the binding owning its destination prefix.
    #[default]
    Prefix,
    Random,
    Pinned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionKind {
    #[default]
    Mih,
    Syslog,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HostModel {
    #[default]
    Weak,
    Lif,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Knobs {
    /// Link SAP detection delay after a link or association change.
    pub d_detect_ms: f64,
    /// One-way latency MAG to MIHF and MIHF to Link SAP.
    pub local_latency_ms: f64,
    pub aaa_latency_ms: f64,
    pub access_latency_ms: f64,
    /// Default LMA to MAG tunnel latency.
    pub tunnel_latency_ms: f64,
    pub cn_latency_ms: f64,
    /// Simulated microseconds per per-packet cost unit.
    pub cost_unit_us: f64,
    /// Simulated microseconds per install-latency cost unit.
    pub install_unit_us: f64,
    /// Uniform loss probability on access links (data only).
    pub loss: f64,
    pub flow_mobility: bool,
    pub scheduler: SchedulerKind,
    /// MAG names in order of preference for the pinned scheduler.
    pub pinned: Vec<String>,
    pub lifetime_s: u16,
    pub renewal_margin_s: f64,
    pub probe_timeout_ms: f64,
    pub probe_retries: u8,
    pub pba_timeout_ms: f64,
    pub pbu_retransmissions: u8,
    pub tick_ms: f64,
    pub detection: DetectionKind,
    pub packet_size: u32,
}

impl Default for Knobs {
    fn default() -> Self {
        Knobs {
            d_detect_ms: 50.0,
            local_latency_ms: 0.0,
            aaa_latency_ms: 1.0,
            access_latency_ms: 1.0,
            tunnel_latency_ms: 2.0,
            cn_latency_ms: 5.0,
            cost_unit_us: 1.0,
            install_unit_us: 1000.0,
            loss: 0.0,
            flow_mobility: true,
            scheduler: SchedulerKind::Prefix,
            pinned: Vec::new(),
            lifetime_s: 300,
            renewal_margin_s: 30.0,
            probe_timeout_ms: 1000.0,
            probe_retries: 1,
            pba_timeout_ms: 1000.0,
            pbu_retransmissions: 0,
            tick_ms: 1000.0,
            detection: DetectionKind::Mih,
            packet_size: 250,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmaSection {
    pub name: String,
    /// NAIs the policy store forbids.
    pub prohibited: Vec<String>,
    pub bce_capacity: Option<usize>,
    pub prefill_rules: usize,
}

impl Default for LmaSection {
    fn default() -> Self {
        LmaSection {
            name: "lma".into(),
            prohibited: Vec::new(),
            bce_capacity: None,
            prefill_rules: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AaaSection {
    pub name: String,
    /// Mobile node names the AAA server refuses.
    pub deny: Vec<String>,
}

impl Default for AaaSection {
    fn default() -> Self {
        AaaSection {
            name: "aaa".into(),
            deny: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FemtocellSpec {
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MagSpec {
    pub name: String,
    pub femtocell: String,
    /// Name of the access link this MAG serves.
    pub link: String,
    pub technology: String,
    pub tunnel_latency_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterfaceSpec {
    pub name: String,
    pub addr: String,
    pub prefix: String,
}

impl InterfaceSpec {
    pub fn link_addr(&self) -> Result<LinkAddr, ScenarioInvalid> {
        self.addr
            .parse()
            .map_err(|e| ScenarioInvalid::new(format!("interface {}: {e}", self.name)))
    }

    pub fn home_prefix(&self) -> Result<Prefix, ScenarioInvalid> {
        self.prefix
            .parse()
            .map_err(|e| ScenarioInvalid::new(format!("interface {}: {e}", self.name)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MnSpec {
    pub name: String,
    pub nai: String,
    #[serde(default)]
    pub host: HostModel,
    #[serde(default = "yes")]
    pub responsive: bool,
    pub lifetime_s: Option<u16>,
    #[serde(default, rename = "interface")]
    pub interfaces: Vec<InterfaceSpec>,
}

fn yes() -> bool {
    true
}

impl MnSpec {
    pub fn mn_id(&self) -> Result<MnId, ScenarioInvalid> {
        MnId::new(self.nai.clone()).map_err(|e| ScenarioInvalid::new(format!("mobile node {}: {e}", self.name)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CnSpec {
    pub name: String,
    pub addr: String,
    pub latency_ms: Option<f64>,
}

impl CnSpec {
    pub fn ip(&self) -> Result<Ipv6Addr, ScenarioInvalid> {
        self.addr
            .parse()
            .map_err(|_| ScenarioInvalid::new(format!("correspondent {}: bad address `{}`", self.name, self.addr)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSpec {
    pub name: String,
    /// A correspondent name, or `mn.interface` for uplink flows.
    pub from: String,
    /// `mn.interface` for downlink flows, or a correspondent name.
    pub to: String,
    pub rate_kbps: f64,
    pub size: Option<u32>,
    #[serde(default)]
    pub start_ms: f64,
    pub stop_ms: Option<f64>,
    pub src_port: Option<u16>,
    #[serde(default = "default_dst_port")]
    pub dst_port: u16,
    #[serde(default = "default_protocol")]
    pub protocol: u8,
    #[serde(default)]
    pub flow_label: u32,
}

fn default_dst_port() -> u16 {
    5001
}

fn default_protocol() -> u8 {
    17
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Attach,
    Detach,
    Move,
    LinkDown,
    LinkUp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventSpec {
    pub at_ms: f64,
    pub action: Action,
    pub mn: Option<String>,
    pub interface: Option<String>,
    pub mag: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub horizon_ms: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub knobs: Knobs,
    #[serde(default)]
    pub costs: CostModel,
    #[serde(default)]
    pub lma: LmaSection,
    #[serde(default)]
    pub aaa: AaaSection,
    #[serde(default, rename = "femtocell")]
    pub femtocells: Vec<FemtocellSpec>,
    #[serde(default, rename = "mag")]
    pub mags: Vec<MagSpec>,
    #[serde(default, rename = "mn")]
    pub mns: Vec<MnSpec>,
    #[serde(default, rename = "cn")]
    pub cns: Vec<CnSpec>,
    #[serde(default, rename = "flow")]
    pub flows: Vec<FlowSpec>,
    #[serde(default, rename = "event")]
    pub events: Vec<EventSpec>,
    /// Preset parameters; ignored by plain runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<toml::Table>,
}

fn default_seed() -> u64 {
    1
}

/// Endpoint of a flow after name resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endpoint {
    Cn(usize),
    /// Mobile node index and interface index.
    Mn(usize, usize),
}

impl Scenario {
    pub fn empty(horizon_ms: f64) -> Self {
        Scenario {
            horizon_ms,
            seed: default_seed(),
            knobs: Knobs::default(),
            costs: CostModel::default(),
            lma: LmaSection::default(),
            aaa: AaaSection::default(),
            femtocells: Vec::new(),
            mags: Vec::new(),
            mns: Vec::new(),
            cns: Vec::new(),
            flows: Vec::new(),
            events: Vec::new(),
            experiment: None,
        }
    }

    pub fn horizon(&self) -> SimTime {
        SimTime::from_ms_f64(self.horizon_ms)
    }

    pub fn mag_index(&self, name: &str) -> Option<usize> {
        self.mags.iter().position(|m| m.name == name)
    }

    pub fn mn_index(&self, name: &str) -> Option<usize> {
        self.mns.iter().position(|m| m.name == name)
    }

    pub fn cn_index(&self, name: &str) -> Option<usize> {
        self.cns.iter().position(|c| c.name == name)
    }

    /// Resolves `cn` or `mn.interface`.
    pub fn endpoint(&self, text: &str) -> Option<Endpoint> {
        if let Some((mn, iface)) = text.split_once('.') {
            let m = self.mn_index(mn)?;
            let i = self.mns[m].interfaces.iter().position(|f| f.name == iface)?;
            Some(Endpoint::Mn(m, i))
        } else {
            self.cn_index(text).map(Endpoint::Cn)
        }
    }

    /// Period of a flow in simulated time (exact when it divides evenly).
    pub fn flow_size(&self, flow: &FlowSpec) -> u32 {
        flow.size.unwrap_or(self.knobs.packet_size)
    }

    pub fn validate(&self) -> Result<(), ScenarioInvalid> {
        self.check().map_err(|p| ScenarioInvalid {
            line: None,
            message: p.message,
        })
    }

    fn check(&self) -> Result<(), Problem> {
        let horizon = self.horizon_ms;
        if !horizon.is_finite() || horizon < 0.0 {
            return Err(problem(
                format!("horizon_ms must be non-negative, got {horizon}"),
                "horizon_ms",
            ));
        }
        self.check_knobs()?;

        let mut names = BTreeSet::new();
        let mut claim = |name: &str| -> Result<(), Problem> {
            if name.is_empty() || name.contains('.') || name.contains(char::is_whitespace) {
                return Err(problem(format!("invalid node name `{name}`"), format!("\"{name}\"")));
            }
            if !names.insert(name.to_string()) {
                return Err(problem(format!("duplicate node name `{name}`"), format!("\"{name}\"")));
            }
            Ok(())
        };
        claim(&self.lma.name)?;
        claim(&self.aaa.name)?;
        for f in &self.femtocells {
            claim(&f.name)?;
        }
        for m in &self.mags {
            claim(&m.name)?;
        }
        for m in &self.mns {
            claim(&m.name)?;
        }
        for c in &self.cns {
            claim(&c.name)?;
        }

        let mut links = BTreeSet::new();
        for m in &self.mags {
            if !self.femtocells.iter().any(|f| f.name == m.femtocell) {
                return Err(problem(
                    format!("mag {} references unknown femtocell `{}`", m.name, m.femtocell),
                    format!("\"{}\"", m.femtocell),
                ));
            }
            if !links.insert(m.link.as_str()) {
                return Err(problem(
                    format!("access link `{}` is served by more than one MAG", m.link),
                    format!("\"{}\"", m.link),
                ));
            }
            if let Some(l) = m.tunnel_latency_ms {
                non_negative(&format!("mag {} tunnel_latency_ms", m.name), l, "tunnel_latency_ms")?;
            }
        }

        let mut nais = BTreeSet::new();
        let mut addrs: BTreeMap<LinkAddr, String> = BTreeMap::new();
        let mut prefixes: Vec<(Prefix, String)> = Vec::new();
        for m in &self.mns {
            m.mn_id().map_err(|e| problem(e.message, format!("\"{}\"", m.name)))?;
            if !nais.insert(m.nai.as_str()) {
                return Err(problem(format!("duplicate NAI `{}`", m.nai), format!("\"{}\"", m.nai)));
            }
            if m.lifetime_s == Some(0) {
                return Err(problem(
                    format!("mobile node {} lifetime_s must be positive", m.name),
                    "lifetime_s",
                ));
            }
            let mut iface_names = BTreeSet::new();
            for i in &m.interfaces {
                let owner = format!("{}.{}", m.name, i.name);
                if !iface_names.insert(i.name.as_str()) {
                    return Err(problem(
                        format!("duplicate interface {owner}"),
                        format!("\"{}\"", i.name),
                    ));
                }
                let addr = i
                    .link_addr()
                    .map_err(|e| problem(e.message, format!("\"{}\"", i.addr)))?;
                if let Some(other) = addrs.insert(addr, owner.clone()) {
                    return Err(problem(
                        format!("link address {addr} assigned to both {other} and {owner}"),
                        format!("\"{}\"", i.addr),
                    ));
                }
                let p = i
                    .home_prefix()
                    .map_err(|e| problem(e.message, format!("\"{}\"", i.prefix)))?;
                if p.len() != 64 {
                    return Err(problem(
                        format!("{owner}: home network prefix {p} must be a /64"),
                        format!("\"{}\"", i.prefix),
                    ));
                }
                if let Some((_, other)) = prefixes.iter().find(|(q, _)| q.overlaps(&p)) {
                    return Err(problem(
                        format!("prefix {p} of {owner} overlaps the prefix of {other}"),
                        format!("\"{}\"", i.prefix),
                    ));
                }
                prefixes.push((p, owner));
            }
        }

        for c in &self.cns {
            let ip = c.ip().map_err(|e| problem(e.message, format!("\"{}\"", c.addr)))?;
            if let Some((_, owner)) = prefixes.iter().find(|(p, _)| p.contains(&ip)) {
                return Err(problem(
                    format!("correspondent {} address lies inside the prefix of {owner}", c.name),
                    format!("\"{}\"", c.addr),
                ));
            }
            if let Some(l) = c.latency_ms {
                non_negative(&format!("cn {} latency_ms", c.name), l, "latency_ms")?;
            }
        }

        for name in &self.aaa.deny {
            if self.mn_index(name).is_none() {
                return Err(problem(
                    format!("aaa.deny names unknown mobile node `{name}`"),
                    format!("\"{name}\""),
                ));
            }
        }
        for name in &self.knobs.pinned {
            if self.mag_index(name).is_none() {
                return Err(problem(
                    format!("knobs.pinned names unknown MAG `{name}`"),
                    format!("\"{name}\""),
                ));
            }
        }

        self.check_flows()?;
        self.check_events()?;
        Ok(())
    }

    fn check_knobs(&self) -> Result<(), Problem> {
        let k = &self.knobs;
        for (name, v) in [
            ("d_detect_ms", k.d_detect_ms),
            ("local_latency_ms", k.local_latency_ms),
            ("aaa_latency_ms", k.aaa_latency_ms),
            ("access_latency_ms", k.access_latency_ms),
            ("tunnel_latency_ms", k.tunnel_latency_ms),
            ("cn_latency_ms", k.cn_latency_ms),
            ("cost_unit_us", k.cost_unit_us),
            ("install_unit_us", k.install_unit_us),
            ("renewal_margin_s", k.renewal_margin_s),
            ("probe_timeout_ms", k.probe_timeout_ms),
            ("pba_timeout_ms", k.pba_timeout_ms),
        ] {
            non_negative(&format!("knobs.{name}"), v, name)?;
        }
        if !(k.tick_ms.is_finite() && k.tick_ms > 0.0) {
            return Err(problem("knobs.tick_ms must be positive", "tick_ms"));
        }
        if !(0.0..=1.0).contains(&k.loss) {
            return Err(problem(
                format!("knobs.loss must lie in [0, 1], got {}", k.loss),
                "loss",
            ));
        }
        if k.lifetime_s == 0 {
            return Err(problem("knobs.lifetime_s must be positive", "lifetime_s"));
        }
        if k.packet_size == 0 {
            return Err(problem("knobs.packet_size must be positive", "packet_size"));
        }
        if k.detection == DetectionKind::Syslog {
            return Err(problem(
                "syslog attachment detection is a disabled stub; use detection = \"mih\"",
                "detection",
            ));
        }
        if k.scheduler == SchedulerKind::Pinned && k.pinned.is_empty() {
            return Err(problem("scheduler = \"pinned\" needs a knobs.pinned list", "scheduler"));
        }
        Ok(())
    }

    fn check_flows(&self) -> Result<(), Problem> {
        let mut names = BTreeSet::new();
        let mut selectors = BTreeMap::new();
        for (idx, f) in self.flows.iter().enumerate() {
            let at = || format!("\"{}\"", f.name);
            if !names.insert(f.name.as_str()) {
                return Err(problem(format!("duplicate flow name `{}`", f.name), at()));
            }
            let from = self.endpoint(&f.from).ok_or_else(|| {
                problem(
                    format!("flow {} source `{}` does not resolve", f.name, f.from),
                    format!("\"{}\"", f.from),
                )
            })?;
            let to = self.endpoint(&f.to).ok_or_else(|| {
                problem(
                    format!("flow {} destination `{}` does not resolve", f.name, f.to),
                    format!("\"{}\"", f.to),
                )
            })?;
            match (from, to) {
                (Endpoint::Cn(_), Endpoint::Mn(..)) | (Endpoint::Mn(..), Endpoint::Cn(_)) => {}
                _ => {
                    return Err(problem(
                        format!(
                            "flow {} must run between a correspondent and a mobile interface",
                            f.name
                        ),
                        at(),
                    ))
                }
            }
            if !(f.rate_kbps.is_finite() && f.rate_kbps > 0.0) {
                return Err(problem(format!("flow {} rate_kbps must be positive", f.name), at()));
            }
            if self.flow_size(f) == 0 {
                return Err(problem(format!("flow {} size must be positive", f.name), at()));
            }
            if f.flow_label > FlowLabel::MAX {
                return Err(problem(format!("flow {} flow_label exceeds 20 bits", f.name), at()));
            }
            let stop = f.stop_ms.unwrap_or(self.horizon_ms);
            if !(0.0..=self.horizon_ms).contains(&f.start_ms) || stop < f.start_ms {
                return Err(problem(
                    format!("flow {} start/stop must lie within the horizon", f.name),
                    at(),
                ));
            }
            let key = (
                f.from.clone(),
                f.to.clone(),
                self.src_port(idx),
                f.dst_port,
                f.protocol,
                f.flow_label,
            );
            if let Some(other) = selectors.insert(key, f.name.clone()) {
                return Err(problem(
                    format!("flows {other} and {} share a traffic selector", f.name),
                    at(),
                ));
            }
        }
        Ok(())
    }

    /// Source port of flow `idx`: explicit or derived from its position.
    pub fn src_port(&self, idx: usize) -> u16 {
        self.flows[idx].src_port.unwrap_or(10_000 + idx as u16)
    }

    fn check_events(&self) -> Result<(), Problem> {
        for (i, e) in self.events.iter().enumerate() {
            let label = format!("event #{} ({:?})", i + 1, e.action);
            if !e.at_ms.is_finite() || e.at_ms < 0.0 || e.at_ms > self.horizon_ms {
                return Err(problem(
                    format!("{label} at {} ms lies outside [0, {}]", e.at_ms, self.horizon_ms),
                    format!("at_ms = {}", e.at_ms),
                ));
            }
            let needs_mn = matches!(e.action, Action::Attach | Action::Detach | Action::Move);
            let needs_mag = !matches!(e.action, Action::Detach);
            if needs_mn {
                let mn =
                    e.mn.as_deref()
                        .ok_or_else(|| problem(format!("{label} needs `mn`"), format!("at_ms = {}", e.at_ms)))?;
                let m = self
                    .mn_index(mn)
                    .ok_or_else(|| problem(format!("{label} names unknown mobile node `{mn}`"), format!("\"{mn}\"")))?;
                let iface = e
                    .interface
                    .as_deref()
                    .ok_or_else(|| problem(format!("{label} needs `interface`"), format!("at_ms = {}", e.at_ms)))?;
                if !self.mns[m].interfaces.iter().any(|f| f.name == iface) {
                    return Err(problem(
                        format!("{label} names unknown interface `{mn}.{iface}`"),
                        format!("\"{iface}\""),
                    ));
                }
            }
            if needs_mag {
                let mag = e
                    .mag
                    .as_deref()
                    .ok_or_else(|| problem(format!("{label} needs `mag`"), format!("at_ms = {}", e.at_ms)))?;
                if self.mag_index(mag).is_none() {
                    return Err(problem(
                        format!("{label} names unknown MAG `{mag}`"),
                        format!("\"{mag}\""),
                    ));
                }
            }
        }
        Ok(())
    }
}

fn non_negative(what: &str, v: f64, needle: &str) -> Result<(), Problem> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(problem(
            format!("{what} must be a non-negative number, got {v}"),
            needle,
        ))
    }
}

/// 1-based line of the first occurrence of `needle` in `source`.
fn locate(source: &str, needle: &str) -> Option<usize> {
    source.lines().position(|l| l.contains(needle)).map(|i| i + 1)
}

/// Parses and validates scenario text.
pub fn parse_scenario(source: &str) -> Result<Scenario, ScenarioInvalid> {
    let scenario: Scenario = toml::from_str(source).map_err(|e| ScenarioInvalid {
        line: e.span().map(|s| source[..s.start].lines().count().max(1)),
        message: e.message().trim().to_string(),
    })?;
    scenario.check().map_err(|p| ScenarioInvalid {
        line: p.needle.as_deref().and_then(|n| locate(source, n)),
        message: p.message,
    })?;
    Ok(scenario)
}

pub fn load_scenario(path: &Path) -> Result<Scenario, HarnessError> {
    let source = fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_scenario(&source).map_err(HarnessError::Invalid)
}
