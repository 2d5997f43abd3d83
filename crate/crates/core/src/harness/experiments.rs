//! Preset experiments A to E. Each preset is a committed scenario file
//! whose `[experiment]` table drives a grid of generated variants.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::harness::metrics::{CostEntity, MetricSet};
use crate::harness::output::{create_dir, num, time, Table};
use crate::harness::scenario::{Action, EventSpec, FlowSpec, InterfaceSpec, MnSpec, Scenario, ScenarioInvalid};
use crate::netsim;

use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Preset {
    A,
    B,
    C,
    D,
    E,
}

impl Preset {
    pub const ALL: [Preset; 5] = [Preset::A, Preset::B, Preset::C, Preset::D, Preset::E];

    /// The committed scenario file for this preset.
    pub fn source(self) -> &'static str {
        match self {
            Preset::A => include_str!("../../scenarios/preset_a.scn"),
            Preset::B => include_str!("../../scenarios/preset_b.scn"),
            Preset::C => include_str!("../../scenarios/preset_c.scn"),
            Preset::D => include_str!("../../scenarios/preset_d.scn"),
            Preset::E => include_str!("../../scenarios/preset_e.scn"),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Preset {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "A" => Ok(Preset::A),
            "B" => Ok(Preset::B),
            "C" => Ok(Preset::C),
            "D" => Ok(Preset::D),
            "E" => Ok(Preset::E),
            _ => Err(HarnessError::Experiment(format!("unknown preset `{s}`"))),
        }
    }
}

/// Parses `key=value`. The value is read as a TOML value, falling back to
/// a bare string.
pub fn parse_override(text: &str) -> Result<(String, toml::Value), ScenarioInvalid> {
    let (key, raw) = text
        .split_once('=')
        .ok_or_else(|| ScenarioInvalid::new(format!("override `{text}` is not key=value")))?;
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((key.trim().to_string(), value))
}

fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), ScenarioInvalid> {
    let bad = || ScenarioInvalid::new(format!("override path `{key}` does not resolve"));
    let parts: Vec<&str> = key.split('.').collect();
    let (last, walk) = parts.split_last().ok_or_else(bad)?;
    let mut cur = table;
    for p in walk {
        let next = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = match next {
            toml::Value::Table(t) => t,
            _ => return Err(bad()),
        };
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Applies dotted `key=value` overrides to a scenario source and loads the
/// result.
pub fn with_overrides(source: &str, overrides: &[String]) -> Result<Scenario, ScenarioInvalid> {
    if overrides.is_empty() {
        return super::parse_scenario(source);
    }
    let mut doc: toml::Table = source
        .parse()
        .map_err(|e: toml::de::Error| ScenarioInvalid::new(e.to_string()))?;
    for o in overrides {
        let (k, v) = parse_override(o)?;
        set_path(&mut doc, &k, v)?;
    }
    let text = toml::to_string(&doc).map_err(|e| ScenarioInvalid::new(e.to_string()))?;
    super::parse_scenario(&text)
}

/// Typed access to the `[experiment]` table.
struct Params<'a>(Option<&'a toml::Table>);

impl Params<'_> {
    fn get(&self, key: &str) -> Result<&toml::Value, ScenarioInvalid> {
        self.0
            .and_then(|t| t.get(key))
            .ok_or_else(|| ScenarioInvalid::new(format!("experiment.{key} is missing")))
    }

    fn float(&self, key: &str) -> Result<f64, ScenarioInvalid> {
        match self.get(key)? {
            toml::Value::Integer(i) => Ok(*i as f64),
            toml::Value::Float(f) => Ok(*f),
            _ => Err(ScenarioInvalid::new(format!("experiment.{key} must be a number"))),
        }
    }

    fn int(&self, key: &str) -> Result<usize, ScenarioInvalid> {
        match self.get(key)? {
            toml::Value::Integer(i) if *i >= 0 => Ok(*i as usize),
            _ => Err(ScenarioInvalid::new(format!(
                "experiment.{key} must be a non-negative integer"
            ))),
        }
    }

    fn list<T, F: Fn(&toml::Value) -> Option<T>>(&self, key: &str, f: F) -> Result<Vec<T>, ScenarioInvalid> {
        let err = || ScenarioInvalid::new(format!("experiment.{key} must be a list of numbers"));
        match self.get(key)? {
            toml::Value::Array(a) => a.iter().map(|v| f(v).ok_or_else(err)).collect(),
            _ => Err(err()),
        }
    }

    fn ints(&self, key: &str) -> Result<Vec<usize>, ScenarioInvalid> {
        self.list(key, |v| v.as_integer().and_then(|i| usize::try_from(i).ok()))
    }

    fn floats(&self, key: &str) -> Result<Vec<f64>, ScenarioInvalid> {
        self.list(key, |v| v.as_float().or_else(|| v.as_integer().map(|i| i as f64)))
    }
}

/// One generated scenario of a preset grid.
#[derive(Debug, Clone)]
pub struct Variant {
    pub label: String,
    /// Grid coordinates, in column order.
    pub params: Vec<(&'static str, String)>,
    pub scenario: Scenario,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct VariantRun {
    pub variant: Variant,
    pub digest: String,
    pub metrics: MetricSet,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub preset: Preset,
    pub runs: Vec<VariantRun>,
    pub tables: Vec<Table>,
}

impl ExperimentOutput {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        create_dir(dir)?;
        for t in &self.tables {
            t.write(dir)?;
        }
        Ok(())
    }
}

fn downlink(name: String, to: &str, rate_kbps: f64, start_ms: f64) -> FlowSpec {
    FlowSpec {
        name,
        from: "cn1".into(),
        to: to.into(),
        rate_kbps,
        size: None,
        start_ms,
        stop_ms: None,
        src_port: None,
        dst_port: 5001,
        protocol: 17,
        flow_label: 0,
    }
}

fn attach(at_ms: f64, mn: &str, iface: &str, mag: &str) -> EventSpec {
    EventSpec {
        at_ms,
        action: Action::Attach,
        mn: Some(mn.into()),
        interface: Some(iface.into()),
        mag: Some(mag.into()),
    }
}

/// Period of a flow of `rate_kbps` in ms at the scenario's packet size.
fn period_ms(sc: &Scenario, rate_kbps: f64) -> f64 {
    f64::from(sc.knobs.packet_size) * 8.0 / rate_kbps
}

/// Builds the variant grid of a preset.
pub fn variants(preset: Preset, base: &Scenario) -> Result<Vec<Variant>, ScenarioInvalid> {
    let p = Params(base.experiment.as_ref());
    let start = p.float("start_ms")?;
    let mut out = Vec::new();
    match preset {
        Preset::A => {
            let rate = p.float("rate_kbps")?;
            for n in p.ints("prefill")? {
                let mut sc = base.clone();
                sc.lma.prefill_rules = n;
                sc.flows.push(downlink("probe".into(), "mn1.if1", rate, start));
                out.push(Variant {
                    label: format!("prefill={n}"),
                    params: vec![("prefill", n.to_string())],
                    scenario: sc,
                    seed: base.seed,
                });
            }
        }
        Preset::B => {
            let rate = p.float("rate_kbps")?;
            let interval = p.float("interval_ms")?;
            let mut sc = base.clone();
            for i in 0..p.int("flows")? {
                sc.flows.push(downlink(
                    format!("f{}", i + 1),
                    "mn1.if1",
                    rate,
                    start + interval * i as f64,
                ));
            }
            out.push(Variant {
                label: "staggered".into(),
                params: Vec::new(),
                scenario: sc,
                seed: base.seed,
            });
        }
        Preset::C => {
            for n in p.ints("flows")? {
                for rate in p.floats("rates_kbps")? {
                    let mut sc = base.clone();
                    for i in 0..n {
                        sc.flows.push(downlink(format!("f{}", i + 1), "mn1.if1", rate, start));
                    }
                    out.push(Variant {
                        label: format!("flows={n},rate={}", num(rate)),
                        params: vec![("flows", n.to_string()), ("rate_kbps", num(rate))],
                        scenario: sc,
                        seed: base.seed,
                    });
                }
            }
        }
        Preset::D => {
            let rate = p.float("rate_kbps")?;
            let stagger = p.float("stagger_ms")?;
            for n in p.ints("flows")? {
                for flow_mobility in [true, false] {
                    let mut sc = base.clone();
                    sc.knobs.flow_mobility = flow_mobility;
                    for i in 0..n {
                        let name = format!("mn{}", i + 1);
                        sc.mns.push(MnSpec {
                            name: name.clone(),
                            nai: format!("{name}@example.org"),
                            host: Default::default(),
                            responsive: true,
                            lifetime_s: None,
                            interfaces: vec![InterfaceSpec {
                                name: "if1".into(),
                                addr: format!("02:00:00:00:{:02x}:{:02x}", (i + 1) >> 8, (i + 1) & 0xff),
                                prefix: format!("2001:db8:{:x}:1::/64", i + 1),
                            }],
                        });
                        sc.events.push(attach(0.0, &name, "if1", "mag1"));
                        sc.flows.push(downlink(
                            format!("f{}", i + 1),
                            &format!("{name}.if1"),
                            rate,
                            start + stagger * i as f64,
                        ));
                    }
                    let mode = if flow_mobility { "flow" } else { "bypass" };
                    out.push(Variant {
                        label: format!("flows={n},mode={mode}"),
                        params: vec![("flows", n.to_string()), ("mode", mode.into())],
                        scenario: sc,
                        seed: base.seed,
                    });
                }
            }
        }
        Preset::E => {
            let down = p.float("down_ms")?;
            for n in p.ints("background")? {
                for rate in p.floats("rates_kbps")? {
                    for rep in 0..p.int("repetitions")? {
                        let seed = base.seed + rep as u64;
                        let mut rng = ChaCha8Rng::seed_from_u64(seed);
                        let jitter = rng.gen_range(0.0..period_ms(base, rate));
                        let at = ((down + jitter) * 1000.0).round() / 1000.0;
                        let mut sc = base.clone();
                        sc.flows.push(downlink("moved".into(), "mn1.if1", rate, start));
                        for i in 0..n {
                            sc.flows.push(downlink(format!("bg{}", i + 1), "mn1.if2", rate, start));
                        }
                        sc.events.push(EventSpec {
                            at_ms: at,
                            action: Action::LinkDown,
                            mn: None,
                            interface: None,
                            mag: Some("mag1".into()),
                        });
                        out.push(Variant {
                            label: format!("background={n},rate={},seed={seed}", num(rate)),
                            params: vec![
                                ("background", n.to_string()),
                                ("rate_kbps", num(rate)),
                                ("seed", seed.to_string()),
                                ("down_ms", num(at)),
                            ],
                            scenario: sc,
                            seed,
                        });
                    }
                }
            }
        }
    }
    for v in &out {
        v.scenario.validate()?;
    }
    Ok(out)
}

fn row(v: &Variant, rest: Vec<String>) -> Vec<String> {
    v.params.iter().map(|(_, p)| p.clone()).chain(rest).collect()
}

fn header(v: Option<&Variant>, rest: &[&'static str]) -> Vec<&'static str> {
    v.map(|v| v.params.iter().map(|(k, _)| *k).collect::<Vec<_>>())
        .unwrap_or_default()
        .into_iter()
        .chain(rest.iter().copied())
        .collect()
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (mean, xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n)
}

fn tables(preset: Preset, runs: &[VariantRun]) -> Vec<Table> {
    let first = runs.first().map(|r| &r.variant);
    let mut digests = Table::new("digests", &["variant", "seed", "trace_sha256"]);
    for r in runs {
        digests.push(vec![
            r.variant.label.clone(),
            r.variant.seed.to_string(),
            r.digest.clone(),
        ]);
    }
    let mut out = Vec::new();
    match preset {
        Preset::A => {
            let mut fast = Table::new("fast_path", &header(first, &["rule_index", "cost"]));
            let mut install = Table::new("install", &header(first, &["installed", "latency"]));
            for r in runs {
                let m = &r.metrics;
                if let Some(c) = m.costs_for(CostEntity::Lma).find(|c| c.rule_index.is_some()) {
                    let idx = c.rule_index.expect("filtered");
                    fast.push(row(&r.variant, vec![idx.to_string(), num(c.cost.as_units())]));
                }
                if let Some(i) = m.installs.first() {
                    install.push(row(
                        &r.variant,
                        vec![i.installed.to_string(), num(i.latency.as_units())],
                    ));
                }
            }
            out.extend([fast, install]);
        }
        Preset::B => {
            let mut pk = Table::new(
                "first_packets",
                &[
                    "flow",
                    "background",
                    "k",
                    "path",
                    "cost",
                    "arrived_ms",
                    "install_done_ms",
                ],
            );
            let mut load = Table::new("load", &["flows", "aggregate_mbps"]);
            for r in runs {
                let m = &r.metrics;
                for (fi, f) in m.flows.iter().enumerate() {
                    let done = m
                        .installs
                        .iter()
                        .find(|i| i.flow == Some(fi))
                        .map_or_else(String::new, |i| time(i.completes_at));
                    let samples = m.costs_for(CostEntity::Lma).filter(|c| c.flow == fi).take(10);
                    for (k, c) in samples.enumerate() {
                        pk.push(vec![
                            f.name.clone(),
                            fi.to_string(),
                            (k + 1).to_string(),
                            if c.diverted { "divert" } else { "fast" }.into(),
                            num(c.cost.as_units()),
                            time(c.at),
                            done.clone(),
                        ]);
                    }
                }
                let kbps: f64 = m.flows.iter().map(|f| f.rate_kbps).sum();
                load.push(vec![m.flows.len().to_string(), num(kbps / 1000.0)]);
            }
            out.extend([pk, load]);
        }
        Preset::C => {
            let mut t = Table::new(
                "entity_costs",
                &header(first, &["entity", "samples", "mean", "variance", "min", "max"]),
            );
            for r in runs {
                for (entity, name) in [(CostEntity::Lma, "lma"), (CostEntity::Mag, "mag")] {
                    let xs: Vec<f64> = r.metrics.costs_for(entity).map(|c| c.cost.as_units()).collect();
                    let (mean, var) = mean_var(&xs);
                    let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
                    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    t.push(row(
                        &r.variant,
                        vec![
                            name.into(),
                            xs.len().to_string(),
                            num(mean),
                            num(var),
                            num(if xs.is_empty() { 0.0 } else { min }),
                            num(if xs.is_empty() { 0.0 } else { max }),
                        ],
                    ));
                }
            }
            out.push(t);
        }
        Preset::D => {
            let mut pkt = Table::new("lma_costs", &header(first, &["flow", "seq", "rule_index", "cost"]));
            let mut summary = Table::new("summary", &header(first, &["fast_packets", "mean_fast_cost"]));
            for r in runs {
                let fast: Vec<_> = r
                    .metrics
                    .costs_for(CostEntity::Lma)
                    .filter(|c| c.rule_index.is_some())
                    .collect();
                for c in &fast {
                    pkt.push(row(
                        &r.variant,
                        vec![
                            r.metrics.flows[c.flow].name.clone(),
                            c.seq.to_string(),
                            c.rule_index.expect("filtered").to_string(),
                            num(c.cost.as_units()),
                        ],
                    ));
                }
                let xs: Vec<f64> = fast.iter().map(|c| c.cost.as_units()).collect();
                summary.push(row(&r.variant, vec![xs.len().to_string(), num(mean_var(&xs).0)]));
            }
            out.extend([pkt, summary]);
        }
        Preset::E => {
            let mut t = Table::new(
                "handover",
                &header(
                    first,
                    &[
                        "estimate_ms",
                        "ground_truth_ms",
                        "period_ms",
                        "abs_error_ms",
                        "dropped_flows",
                        "rollback",
                    ],
                ),
            );
            for r in runs {
                let m = &r.metrics;
                let dropped = m.flows.iter().filter(|f| f.ended_dropped).count();
                let moved = m.flows.iter().position(|f| f.name == "moved");
                let rollback = moved.is_some_and(|i| !new_path_continues(m, i));
                let h = moved.and_then(|i| m.handovers.iter().find(|h| h.flow == i));
                let (est, gt, period, err) = match h {
                    Some(h) => (
                        num(h.estimate_ms),
                        h.ground_truth_ms.map_or_else(String::new, num),
                        num(h.period_ms),
                        h.ground_truth_ms
                            .map_or_else(String::new, |g| num((h.estimate_ms - g).abs())),
                    ),
                    None => Default::default(),
                };
                t.push(row(
                    &r.variant,
                    vec![est, gt, period, err, dropped.to_string(), rollback.to_string()],
                ));
            }
            out.push(t);
        }
    }
    out.push(digests);
    out
}

/// Sequence numbers delivered after the first interface or link change
/// are all above every sequence delivered before it, and strictly
/// increasing.
pub fn new_path_continues(m: &MetricSet, flow: usize) -> bool {
    let d = &m.flows[flow].deliveries;
    let Some(split) = d
        .windows(2)
        .position(|w| (w[0].iface, w[0].link) != (w[1].iface, w[1].link))
    else {
        return true;
    };
    let last_old = d[..=split].iter().map(|x| x.seq).max().unwrap_or(0);
    d[split + 1..].windows(2).all(|w| w[0].seq < w[1].seq) && d[split + 1..].iter().all(|x| x.seq > last_old)
}

/// Runs every variant of `preset` in parallel and builds its tables.
pub fn run_preset(preset: Preset, overrides: &[String]) -> Result<ExperimentOutput, HarnessError> {
    let base = with_overrides(preset.source(), overrides)?;
    run_variants(preset, variants(preset, &base)?)
}

pub fn run_variants(preset: Preset, variants: Vec<Variant>) -> Result<ExperimentOutput, HarnessError> {
    let runs = variants
        .into_par_iter()
        .map(|v| {
            let out = netsim::run(&v.scenario, v.seed)?;
            Ok(VariantRun {
                digest: out.trace.digest(),
                metrics: out.metrics,
                variant: v,
            })
        })
        .collect::<Result<Vec<_>, ScenarioInvalid>>()?;
    let tables = tables(preset, &runs);
    Ok(ExperimentOutput { preset, runs, tables })
}

/// Groups rows of a table by the value of `column`.
pub fn group_by<'a>(t: &'a Table, column: &str) -> BTreeMap<String, Vec<&'a Vec<String>>> {
    let mut out: BTreeMap<String, Vec<&Vec<String>>> = BTreeMap::new();
    if let Some(c) = t.column(column) {
        for r in &t.rows {
            out.entry(r[c].clone()).or_default().push(r);
        }
    }
    out
}
