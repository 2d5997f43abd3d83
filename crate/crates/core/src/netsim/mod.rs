//! Deterministic discrete-event simulator wiring the LMA, MAGs, MIH
//! entities, mobile nodes and correspondents together.
//!
//! Events are ordered by `(time, insertion sequence)`. Processing cost is
//! converted to delay with the `cost_unit_us` knob. Every emitted packet
//! ends either delivered or dropped with a [`DropReason`].

pub mod host;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::fmt;

use log::trace;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cost::Cost;
use crate::harness::handover::measure_all;
use crate::harness::metrics::{CostEntity, CostSample, Delivery, FlowMetrics, InstallSample, MetricSet};
use crate::harness::scenario::{Action, DetectionKind, Endpoint, Scenario, ScenarioInvalid, SchedulerKind};
use crate::harness::trace::{Record, Trace};
use crate::lma::{Forwarded, Lma, LmaConfig, LmaEffect, Released, RuleKey, SchedulerPolicy};
use crate::mag::{Detection, Mag, MagConfig, MagOutput};
use crate::mih::{LinkSap, Mihf};
use crate::proto::{
    decode, encode, eui64_from_link_addr, FlowLabel, InterfaceId, LinkAddr, LinkId, MessageBody, MnId, NodeId, Packet,
    ProtocolMessage, SimTime, TrafficSelector,
};

pub use host::{AaaProfile, AaaServer, MnInterface, MobileNode};

/// Why a data packet or control message did not arrive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DropReason {
    LinkDown,
    NotAttached,
    Unroutable,
    FlowDropped,
    NoMagEntry,
    HostRejected,
    StaleSequence,
    WirelessLoss,
    HorizonCutoff,
    QueueFlushed,
    NoRoute,
    Malformed,
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DropReason::LinkDown => "link-down",
            DropReason::NotAttached => "not-attached",
            DropReason::Unroutable => "unroutable",
            DropReason::FlowDropped => "flow-dropped",
            DropReason::NoMagEntry => "no-mag-entry",
            DropReason::HostRejected => "host-rejected",
            DropReason::StaleSequence => "stale-sequence",
            DropReason::WirelessLoss => "wireless-loss",
            DropReason::HorizonCutoff => "horizon-cutoff",
            DropReason::QueueFlushed => "queue-flushed",
            DropReason::NoRoute => "no-route",
            DropReason::Malformed => "malformed",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Lma,
    Aaa,
    Mihf,
    Mag,
    Sap,
    Mn,
    Cn,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub name: String,
    pub latency: SimTime,
    pub up: bool,
    /// Bumped on every state change; in-flight traffic from an older epoch
    /// is lost.
    pub epoch: u64,
    pub access: bool,
}

#[derive(Debug, Clone)]
struct FlowRuntime {
    src: NodeId,
    dst: NodeId,
    /// Interface on the mobile-node end.
    iface: usize,
    uplink: bool,
    selector: TrafficSelector,
    size: u32,
    rate_kbps: f64,
    start: SimTime,
    stop: SimTime,
}

impl FlowRuntime {
    fn emission(&self, k: u64) -> SimTime {
        let us = (k as f64 * f64::from(self.size) * 8000.0 / self.rate_kbps).floor();
        self.start + SimTime::from_us(us as u64)
    }
}

#[derive(Debug, Clone)]
enum Step {
    Attach { mn: NodeId, iface: usize, mag: usize },
    Detach { mn: NodeId, iface: usize },
    LinkDown(usize),
    LinkUp(usize),
}

#[derive(Debug)]
enum Event {
    MagStart(NodeId),
    Message {
        bytes: Vec<u8>,
        link: LinkId,
        epoch: u64,
        iface: Option<usize>,
    },
    Depart {
        pkt: Packet,
        flow: usize,
        from: NodeId,
        to: NodeId,
        iface: Option<usize>,
    },
    Arrive {
        pkt: Packet,
        flow: usize,
        from: NodeId,
        to: NodeId,
        link: LinkId,
        epoch: u64,
        iface: Option<usize>,
    },
    FlowEmit {
        flow: usize,
        k: u64,
    },
    Timeline(usize),
    SapDetect {
        link: LinkId,
        addr: LinkAddr,
    },
    RuleInstalled {
        key: RuleKey,
        generation: u64,
    },
    MagTick(NodeId),
    ProbeTimeout(NodeId, MnId),
    PbaTimeout(NodeId, InterfaceId, u16),
    BceExpiry,
}

#[derive(Debug)]
struct Scheduled {
    at: SimTime,
    seq: u64,
    event: Event,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// reversed: BinaryHeap is a max-heap
impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

/// Result of a complete run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: Trace,
    pub metrics: MetricSet,
}

pub struct Simulator {
    now: SimTime,
    horizon: SimTime,
    heap: BinaryHeap<Scheduled>,
    next_seq: u64,
    roles: Vec<Role>,
    links: Vec<Link>,
    link_map: HashMap<(NodeId, NodeId), LinkId>,
    lma: Lma,
    lma_id: NodeId,
    aaa: AaaServer,
    mags: BTreeMap<NodeId, Mag>,
    mag_ids: Vec<NodeId>,
    mag_names: Vec<String>,
    mihfs: BTreeMap<NodeId, Mihf>,
    saps: BTreeMap<NodeId, LinkSap>,
    sap_of_link: Vec<NodeId>,
    mns: BTreeMap<NodeId, MobileNode>,
    addr_owner: HashMap<LinkAddr, (NodeId, usize)>,
    flows: Vec<FlowRuntime>,
    flow_by_selector: HashMap<TrafficSelector, usize>,
    timeline: Vec<(SimTime, Step)>,
    d_detect: SimTime,
    cost_unit_us: f64,
    loss: f64,
    loss_rng: ChaCha8Rng,
    trace: Trace,
    metrics: MetricSet,
}

fn ms(v: f64) -> SimTime {
    SimTime::from_ms_f64(v)
}

fn bad(message: String) -> ScenarioInvalid {
    ScenarioInvalid::new(message)
}

impl Simulator {
    /// Builds the topology. `seed` replaces the scenario's own seed.
    pub fn new(sc: &Scenario, seed: u64) -> Result<Self, ScenarioInvalid> {
        sc.validate()?;
        let k = &sc.knobs;
        let mut names: Vec<String> = Vec::new();
        let mut roles = Vec::new();
        let mut add = |name: String, role: Role| {
            names.push(name);
            roles.push(role);
            NodeId((roles.len() - 1) as u16)
        };
        let lma_id = add(sc.lma.name.clone(), Role::Lma);
        let aaa_id = add(sc.aaa.name.clone(), Role::Aaa);
        let mut fc_ids = BTreeMap::new();
        for fc in &sc.femtocells {
            fc_ids.insert(fc.name.clone(), add(format!("{}.mihf", fc.name), Role::Mihf));
        }
        let mut mag_ids = Vec::new();
        let mut sap_of_link = Vec::new();
        for m in &sc.mags {
            mag_ids.push(add(m.name.clone(), Role::Mag));
            sap_of_link.push(add(format!("{}.sap", m.link), Role::Sap));
        }
        let mut mn_ids = Vec::new();
        for m in &sc.mns {
            mn_ids.push(add(m.name.clone(), Role::Mn));
        }
        let mut cn_ids = Vec::new();
        for c in &sc.cns {
            cn_ids.push(add(c.name.clone(), Role::Cn));
        }
        if roles.len() > usize::from(u16::MAX) {
            return Err(bad("too many nodes".into()));
        }

        let mut links = Vec::new();
        let mut link_map = HashMap::new();
        for m in &sc.mags {
            links.push(Link {
                name: m.link.clone(),
                latency: ms(k.access_latency_ms),
                up: true,
                epoch: 0,
                access: true,
            });
        }
        let mut connect = |a: NodeId, b: NodeId, latency: f64| {
            let id = LinkId(links.len() as u16);
            links.push(Link {
                name: format!("{}-{}", names[usize::from(a.0)], names[usize::from(b.0)]),
                latency: ms(latency),
                up: true,
                epoch: 0,
                access: false,
            });
            link_map.insert((a.min(b), a.max(b)), id);
        };
        for (i, m) in sc.mags.iter().enumerate() {
            connect(lma_id, mag_ids[i], m.tunnel_latency_ms.unwrap_or(k.tunnel_latency_ms));
            connect(mag_ids[i], aaa_id, k.aaa_latency_ms);
            let fc = fc_ids[&m.femtocell];
            connect(mag_ids[i], fc, k.local_latency_ms);
            connect(fc, sap_of_link[i], k.local_latency_ms);
        }
        for (i, c) in sc.cns.iter().enumerate() {
            connect(cn_ids[i], lma_id, c.latency_ms.unwrap_or(k.cn_latency_ms));
        }

        let mut mn_prefixes = BTreeMap::new();
        let mut mns = BTreeMap::new();
        let mut addr_owner = HashMap::new();
        let mut aaa = AaaServer::default();
        let mut lifetime_overrides = BTreeMap::new();
        for (i, spec) in sc.mns.iter().enumerate() {
            let mn_id = spec.mn_id()?;
            let mut node = MobileNode::new(mn_ids[i], spec.name.clone(), mn_id.clone(), spec.host, spec.responsive);
            let authorized = !sc.aaa.deny.contains(&spec.name);
            for iface in &spec.interfaces {
                let addr = iface.link_addr()?;
                let prefix = iface.home_prefix()?;
                let id = eui64_from_link_addr(addr);
                addr_owner.insert(addr, (mn_ids[i], node.interfaces.len()));
                aaa.insert(
                    id,
                    AaaProfile {
                        mn_id: mn_id.clone(),
                        prefix,
                        authorized,
                    },
                );
                mn_prefixes.entry(mn_id.clone()).or_insert_with(Vec::new).push(prefix);
                node.interfaces.push(MnInterface {
                    name: format!("{}.{}", spec.name, iface.name),
                    addr,
                    id,
                    link: None,
                    prefix: None,
                });
            }
            if let Some(l) = spec.lifetime_s {
                lifetime_overrides.insert(mn_id, l);
            }
            mns.insert(mn_ids[i], node);
        }

        let policy = match k.scheduler {
            SchedulerKind::Prefix => SchedulerPolicy::default(),
            SchedulerKind::Random => SchedulerPolicy::Random { seed },
            SchedulerKind::Pinned => SchedulerPolicy::Pinned(
                k.pinned
                    .iter()
                    .map(|n| sc.mag_index(n).map(|i| mag_ids[i]))
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(|| bad("pinned scheduler names an unknown MAG".into()))?,
            ),
        };
        let prohibited = sc
            .lma
            .prohibited
            .iter()
            .map(|n| MnId::new(n.clone()).map_err(|e| bad(format!("prohibited NAI: {e}"))))
            .collect::<Result<_, _>>()?;
        let lma = Lma::new(
            lma_id,
            LmaConfig {
                flow_mobility: k.flow_mobility,
                bce_capacity: sc.lma.bce_capacity,
                prohibited,
                mn_prefixes,
                prefill_rules: sc.lma.prefill_rules,
                install_unit_us: k.install_unit_us,
            },
            sc.costs.clone(),
            policy,
        );

        let mag_config = MagConfig {
            lifetime_s: k.lifetime_s,
            lifetime_overrides,
            renewal_margin: ms(k.renewal_margin_s * 1000.0),
            probe_timeout: ms(k.probe_timeout_ms),
            probe_retries: k.probe_retries,
            pba_timeout: ms(k.pba_timeout_ms),
            pbu_retransmissions: k.pbu_retransmissions,
            tick: ms(k.tick_ms),
            detection: match k.detection {
                DetectionKind::Mih => Detection::Mih,
                DetectionKind::Syslog => Detection::Syslog,
            },
        };
        let mut mihfs: BTreeMap<NodeId, Mihf> = fc_ids.values().map(|&id| (id, Mihf::new(id))).collect();
        let mut mags = BTreeMap::new();
        let mut saps = BTreeMap::new();
        for (i, m) in sc.mags.iter().enumerate() {
            let link = LinkId(i as u16);
            let fc = fc_ids[&m.femtocell];
            mihfs
                .get_mut(&fc)
                .expect("femtocell resolved")
                .register_link(link, m.technology.clone(), sap_of_link[i]);
            saps.insert(
                sap_of_link[i],
                LinkSap::new(sap_of_link[i], link, m.technology.clone(), fc),
            );
            mags.insert(
                mag_ids[i],
                Mag::new(
                    mag_ids[i],
                    lma_id,
                    aaa_id,
                    fc,
                    link,
                    mag_config.clone(),
                    sc.costs.clone(),
                ),
            );
        }

        let mut flows = Vec::new();
        let mut flow_by_selector = HashMap::new();
        let mut trace_flows = Vec::new();
        let mut flow_metrics = Vec::new();
        for (idx, f) in sc.flows.iter().enumerate() {
            let (from, to) = (sc.endpoint(&f.from), sc.endpoint(&f.to));
            let (cn, mn, iface, uplink) = match (from, to) {
                (Some(Endpoint::Cn(c)), Some(Endpoint::Mn(m, i))) => (c, m, i, false),
                (Some(Endpoint::Mn(m, i)), Some(Endpoint::Cn(c))) => (c, m, i, true),
                _ => {
                    return Err(bad(format!(
                        "flow {} must join a correspondent and an interface",
                        f.name
                    )))
                }
            };
            let cn_addr = sc.cns[cn].ip()?;
            let mn_addr = sc.mns[mn].interfaces[iface].home_prefix()?.host(1);
            let flow_label = FlowLabel::new(f.flow_label).map_err(|e| bad(format!("flow {}: {e}", f.name)))?;
            let (src_addr, dst_addr) = if uplink { (mn_addr, cn_addr) } else { (cn_addr, mn_addr) };
            let selector = TrafficSelector {
                src_addr,
                dst_addr,
                src_port: f.src_port.unwrap_or_else(|| sc.src_port(idx)),
                dst_port: f.dst_port,
                protocol: f.protocol,
                flow_label,
            };
            let (src, dst) = if uplink {
                (mn_ids[mn], cn_ids[cn])
            } else {
                (cn_ids[cn], mn_ids[mn])
            };
            let size = sc.flow_size(f);
            let horizon = sc.horizon();
            let rt = FlowRuntime {
                src,
                dst,
                iface,
                uplink,
                selector,
                size,
                rate_kbps: f.rate_kbps,
                start: ms(f.start_ms),
                stop: f.stop_ms.map_or(horizon, ms).min(horizon),
            };
            flow_by_selector.insert(selector, idx);
            trace_flows.push((f.name.clone(), selector));
            flow_metrics.push(FlowMetrics {
                name: f.name.clone(),
                selector,
                period: SimTime::from_us_f64(f64::from(size) * 8000.0 / f.rate_kbps),
                rate_kbps: f.rate_kbps,
                emitted: 0,
                delivered: 0,
                diverted: 0,
                fast_path: 0,
                drops: BTreeMap::new(),
                ended_dropped: false,
                deliveries: Vec::new(),
            });
            flows.push(rt);
        }

        let mut timeline = Vec::new();
        let node_of = |name: &Option<String>| -> Result<(NodeId, usize), ScenarioInvalid> {
            let name = name.as_deref().ok_or_else(|| bad("event needs an mn".into()))?;
            let i = sc
                .mn_index(name)
                .ok_or_else(|| bad(format!("unknown mobile node {name}")))?;
            Ok((mn_ids[i], i))
        };
        let mag_of = |name: &Option<String>| -> Result<usize, ScenarioInvalid> {
            let name = name.as_deref().ok_or_else(|| bad("event needs a mag".into()))?;
            sc.mag_index(name).ok_or_else(|| bad(format!("unknown MAG {name}")))
        };
        for ev in &sc.events {
            let at = ms(ev.at_ms);
            let iface = |mi: usize| -> Result<usize, ScenarioInvalid> {
                let name = ev
                    .interface
                    .as_deref()
                    .ok_or_else(|| bad("event needs an interface".into()))?;
                sc.mns[mi]
                    .interfaces
                    .iter()
                    .position(|f| f.name == name)
                    .ok_or_else(|| bad(format!("unknown interface {name}")))
            };
            match ev.action {
                Action::Attach => {
                    let (mn, mi) = node_of(&ev.mn)?;
                    timeline.push((
                        at,
                        Step::Attach {
                            mn,
                            iface: iface(mi)?,
                            mag: mag_of(&ev.mag)?,
                        },
                    ));
                }
                Action::Detach => {
                    let (mn, mi) = node_of(&ev.mn)?;
                    timeline.push((at, Step::Detach { mn, iface: iface(mi)? }));
                }
                Action::Move => {
                    let (mn, mi) = node_of(&ev.mn)?;
                    let i = iface(mi)?;
                    timeline.push((at, Step::Detach { mn, iface: i }));
                    timeline.push((
                        at,
                        Step::Attach {
                            mn,
                            iface: i,
                            mag: mag_of(&ev.mag)?,
                        },
                    ));
                }
                Action::LinkDown => timeline.push((at, Step::LinkDown(mag_of(&ev.mag)?))),
                Action::LinkUp => timeline.push((at, Step::LinkUp(mag_of(&ev.mag)?))),
            }
        }

        let trace = Trace {
            nodes: names,
            links: links.iter().map(|l| l.name.clone()).collect(),
            flows: trace_flows,
            records: Vec::new(),
        };
        let mut sim = Simulator {
            now: SimTime::ZERO,
            horizon: sc.horizon(),
            heap: BinaryHeap::new(),
            next_seq: 0,
            roles,
            links,
            link_map,
            lma,
            lma_id,
            aaa,
            mags,
            mag_ids,
            mag_names: sc.mags.iter().map(|m| m.name.clone()).collect(),
            mihfs,
            saps,
            sap_of_link,
            mns,
            addr_owner,
            flows,
            flow_by_selector,
            timeline,
            d_detect: ms(k.d_detect_ms),
            cost_unit_us: k.cost_unit_us,
            loss: k.loss,
            loss_rng: ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15),
            trace,
            metrics: MetricSet {
                flows: flow_metrics,
                ..MetricSet::default()
            },
        };
        for id in sim.mag_ids.clone() {
            sim.schedule(SimTime::ZERO, Event::MagStart(id));
        }
        for i in 0..sim.timeline.len() {
            let at = sim.timeline[i].0;
            sim.schedule(at, Event::Timeline(i));
        }
        for f in 0..sim.flows.len() {
            let at = sim.flows[f].emission(0);
            if at < sim.flows[f].stop {
                sim.schedule(at, Event::FlowEmit { flow: f, k: 0 });
            }
        }
        Ok(sim)
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn lma(&self) -> &Lma {
        &self.lma
    }

    pub fn mag(&self, name: &str) -> Option<&Mag> {
        let i = self.mag_names.iter().position(|n| n == name)?;
        self.mags.get(&self.mag_ids[i])
    }

    pub fn mobile_node(&self, name: &str) -> Option<&MobileNode> {
        self.mns.values().find(|m| m.name == name)
    }

    pub fn node(&self, name: &str) -> Option<NodeId> {
        self.trace
            .nodes
            .iter()
            .position(|n| n == name)
            .map(|i| NodeId(i as u16))
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn metrics(&self) -> &MetricSet {
        &self.metrics
    }

    fn schedule(&mut self, at: SimTime, event: Event) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Scheduled { at, seq, event });
    }

    fn record(&mut self, entity: NodeId, record: Record) {
        self.trace.push(self.now, entity, record);
    }

    fn delay(&self, cost: Cost) -> SimTime {
        SimTime::from_us_f64(cost.as_units() * self.cost_unit_us)
    }

    fn role(&self, id: NodeId) -> Role {
        self.roles[usize::from(id.0)]
    }

    /// Processes the next event if it falls within the horizon.
    pub fn step(&mut self) -> bool {
        match self.heap.peek() {
            Some(s) if s.at <= self.horizon => {}
            _ => return false,
        }
        let s = self.heap.pop().expect("peeked");
        self.now = s.at;
        self.dispatch(s.event);
        true
    }

    /// Runs every event up to and including `t`.
    pub fn run_until(&mut self, t: SimTime) {
        while self.heap.peek().is_some_and(|s| s.at <= t.min(self.horizon)) {
            self.step();
        }
    }

    pub fn run(mut self) -> RunOutput {
        while self.step() {}
        self.finish()
    }

    fn finish(mut self) -> RunOutput {
        self.now = self.now.max(self.horizon);
        let leftover: Vec<Scheduled> = std::mem::take(&mut self.heap).into_sorted_vec();
        for s in leftover.into_iter().rev() {
            match s.event {
                Event::Depart { pkt, flow, from, .. } => {
                    self.drop_packet(from, flow, pkt.seq, DropReason::HorizonCutoff)
                }
                Event::Arrive { pkt, flow, to, .. } => self.drop_packet(to, flow, pkt.seq, DropReason::HorizonCutoff),
                _ => {}
            }
        }
        let lma = self.lma_id;
        let mut queued: Vec<(usize, u64)> = self
            .lma
            .queue()
            .iter()
            .filter_map(|q| {
                self.flow_by_selector
                    .get(&q.packet.selector)
                    .map(|&f| (f, q.packet.seq))
            })
            .collect();
        queued.sort_unstable();
        for (flow, seq) in queued {
            self.drop_packet(lma, flow, seq, DropReason::HorizonCutoff);
        }
        for (f, rt) in self.flows.iter().enumerate() {
            let mn = if rt.uplink { rt.src } else { rt.dst };
            let owner = &self.mns[&mn].mn_id;
            self.metrics.flows[f].ended_dropped = self.lma.dropped_flows().any(|k| match k {
                RuleKey::Flow(s) => *s == rt.selector,
                RuleKey::Node(m) => m == owner,
                RuleKey::Static(_) => false,
            });
        }
        let stats = self.lma.stats().clone();
        self.metrics.mmm_actions = stats.actions;
        self.metrics.fim_invocations = stats.fim_invocations;
        self.metrics.reroutes = stats.reroutes;
        for (i, id) in self.mag_ids.iter().enumerate() {
            self.metrics
                .mags
                .insert(self.mag_names[i].clone(), self.mags[id].stats().clone());
        }
        self.metrics.handovers = measure_all(&self.trace, &self.metrics);
        RunOutput {
            trace: self.trace,
            metrics: self.metrics,
        }
    }

    fn dispatch(&mut self, event: Event) {
        match event {
            Event::MagStart(id) => {
                self.mags.get_mut(&id).expect("mag").start();
                self.mag_outputs(id);
            }
            Event::Message {
                bytes,
                link,
                epoch,
                iface,
            } => self.on_message(&bytes, link, epoch, iface),
            Event::Depart {
                pkt,
                flow,
                from,
                to,
                iface,
            } => self.launch(pkt, flow, from, to, iface),
            Event::Arrive {
                pkt,
                flow,
                from,
                to,
                link,
                epoch,
                iface,
            } => {
                let l = &self.links[usize::from(link.0)];
                if l.epoch != epoch || !l.up {
                    self.drop_packet(to, flow, pkt.seq, DropReason::LinkDown);
                    return;
                }
                self.arrive(pkt, flow, from, to, link, iface);
            }
            Event::FlowEmit { flow, k } => self.emit(flow, k),
            Event::Timeline(i) => self.timeline_step(i),
            Event::SapDetect { link, addr } => self.sap_detect(link, addr),
            Event::RuleInstalled { key, generation } => {
                let released = self.lma.complete_install(&key, generation);
                self.lma_effects();
                self.release(released);
            }
            Event::MagTick(id) => {
                self.mags.get_mut(&id).expect("mag").lifetime_tick(self.now);
                self.mag_outputs(id);
            }
            Event::ProbeTimeout(id, mn) => {
                self.mags.get_mut(&id).expect("mag").probe_timeout(&mn, self.now);
                self.mag_outputs(id);
            }
            Event::PbaTimeout(id, iface, seq) => {
                self.mags.get_mut(&id).expect("mag").pba_timeout(iface, seq, self.now);
                self.mag_outputs(id);
            }
            Event::BceExpiry => {
                for key in self.lma.expire(self.now) {
                    self.record(
                        self.lma_id,
                        Record::Expired {
                            mn: key.mn_id,
                            mag: key.serving_mag,
                        },
                    );
                }
                self.lma_effects();
            }
        }
    }

    fn timeline_step(&mut self, i: usize) {
        let step = self.timeline[i].1.clone();
        match step {
            Step::Attach { mn, iface, mag } => {
                let link = LinkId(mag as u16);
                let node = self.mns.get_mut(&mn).expect("mn");
                let f = &mut node.interfaces[iface];
                if f.link == Some(link) {
                    return;
                }
                let previous = f.link.replace(link);
                let (name, addr) = (f.name.clone(), f.addr);
                if let Some(old) = previous {
                    self.schedule(self.now + self.d_detect, Event::SapDetect { link: old, addr });
                }
                self.record(mn, Record::Attach { iface: name, link });
                self.schedule(self.now + self.d_detect, Event::SapDetect { link, addr });
            }
            Step::Detach { mn, iface } => {
                let node = self.mns.get_mut(&mn).expect("mn");
                let f = &mut node.interfaces[iface];
                let Some(link) = f.link.take() else {
                    return;
                };
                let (name, addr) = (f.name.clone(), f.addr);
                self.record(mn, Record::Detach { iface: name, link });
                self.schedule(self.now + self.d_detect, Event::SapDetect { link, addr });
            }
            Step::LinkDown(mag) | Step::LinkUp(mag) => {
                let up = matches!(step, Step::LinkUp(_));
                let link = LinkId(mag as u16);
                let l = &mut self.links[mag];
                if l.up == up {
                    return;
                }
                l.up = up;
                l.epoch += 1;
                self.record(self.mag_ids[mag], Record::LinkState { link, up });
                let attached: Vec<LinkAddr> = self
                    .mns
                    .values()
                    .flat_map(|m| m.interfaces.iter())
                    .filter(|f| f.link == Some(link))
                    .map(|f| f.addr)
                    .collect();
                for addr in attached {
                    self.schedule(self.now + self.d_detect, Event::SapDetect { link, addr });
                }
            }
        }
    }

    fn sap_detect(&mut self, link: LinkId, addr: LinkAddr) {
        let associated = self
            .addr_owner
            .get(&addr)
            .is_some_and(|(mn, i)| self.mns[mn].interfaces[*i].link == Some(link));
        let up = associated && self.links[usize::from(link.0)].up;
        let sap_id = self.sap_of_link[usize::from(link.0)];
        let sap = self.saps.get_mut(&sap_id).expect("sap");
        if let Some((dst, body)) = sap.report(addr, up) {
            self.record(sap_id, Record::SapReport { link, addr, up });
            self.send(sap_id, dst, body, None);
        }
    }

    /// Resolves the link between two nodes. `iface` selects the interface
    /// when either end is a mobile node.
    fn link_between(&self, a: NodeId, b: NodeId, iface: Option<usize>) -> Option<LinkId> {
        let (mn, other) = match (self.role(a), self.role(b)) {
            (Role::Mn, _) => (a, b),
            (_, Role::Mn) => (b, a),
            _ => return self.link_map.get(&(a.min(b), a.max(b))).copied(),
        };
        let link = self.mns[&mn].interfaces[iface?].link?;
        let mag = self.mags.get(&other)?;
        (mag.access_link() == link).then_some(link)
    }

    fn send(&mut self, src: NodeId, dst: NodeId, body: MessageBody, iface: Option<usize>) {
        let kind = body.kind();
        let msg = ProtocolMessage::new(src, dst, self.now, body);
        let bytes = encode(&msg);
        *self.metrics.signaling.entry(kind).or_default() += 1;
        self.record(
            src,
            Record::Send {
                kind,
                dst,
                bytes: bytes.clone(),
            },
        );
        let lost = |reason| Record::MessageLost { kind, dst, reason };
        let Some(link) = self.link_between(src, dst, iface) else {
            let reason = if matches!(self.role(src), Role::Mn) || matches!(self.role(dst), Role::Mn) {
                DropReason::NotAttached
            } else {
                DropReason::NoRoute
            };
            self.record(src, lost(reason));
            return;
        };
        let l = &self.links[usize::from(link.0)];
        if !l.up {
            self.record(src, lost(DropReason::LinkDown));
            return;
        }
        let (at, epoch) = (self.now + l.latency, l.epoch);
        self.schedule(
            at,
            Event::Message {
                bytes,
                link,
                epoch,
                iface,
            },
        );
    }

    fn on_message(&mut self, bytes: &[u8], link: LinkId, epoch: u64, iface: Option<usize>) {
        let msg = match decode(bytes) {
            Ok(m) => m,
            Err(e) => {
                self.record(
                    self.lma_id,
                    Record::Anomaly {
                        text: format!("malformed message: {e}"),
                    },
                );
                return;
            }
        };
        let (src, dst, now) = (msg.src, msg.dst, self.now);
        let l = &self.links[usize::from(link.0)];
        let still_attached = match (self.role(dst), self.role(src)) {
            (Role::Mn, _) => self.link_between(dst, src, iface) == Some(link),
            (_, Role::Mn) => self.link_between(src, dst, iface) == Some(link),
            _ => true,
        };
        if l.epoch != epoch || !l.up || !still_attached {
            let reason = if still_attached {
                DropReason::LinkDown
            } else {
                DropReason::NotAttached
            };
            self.record(
                dst,
                Record::MessageLost {
                    kind: msg.kind(),
                    dst,
                    reason,
                },
            );
            return;
        }
        trace!("{now} {src} -> {dst}: {}", msg.kind());
        match self.role(dst) {
            Role::Lma => {
                if let MessageBody::Pbu(pbu) = &msg.body {
                    let out = self.lma.mmm_handle_pbu(pbu, src, now);
                    self.record(
                        dst,
                        Record::Mmm {
                            action: out.action,
                            mn: pbu.mn_id.clone(),
                            mag: src,
                            status: out.pba.status,
                        },
                    );
                    self.lma_effects();
                    self.send(dst, src, MessageBody::Pba(out.pba), None);
                } else {
                    self.record(
                        dst,
                        Record::Anomaly {
                            text: format!("unexpected {}", msg.kind()),
                        },
                    );
                }
            }
            Role::Aaa => {
                if let MessageBody::AaaRequest(req) = &msg.body {
                    let resp = self.aaa.handle(req);
                    self.send(dst, src, MessageBody::AaaResponse(resp), None);
                }
            }
            Role::Mag => {
                self.mags
                    .get_mut(&dst)
                    .expect("mag")
                    .handle_message(src, &msg.body, now);
                self.mag_outputs(dst);
            }
            Role::Mihf => {
                let outs = self.mihfs.get_mut(&dst).expect("mihf").handle(src, &msg.body);
                for (to, body) in outs {
                    self.send(dst, to, body, None);
                }
            }
            Role::Sap => {
                let outs = self.saps.get_mut(&dst).expect("sap").handle(&msg.body);
                for (to, body) in outs {
                    self.send(dst, to, body, None);
                }
            }
            Role::Mn => {
                let Some(i) = iface else { return };
                match &msg.body {
                    MessageBody::RouterAdvertisement(ra) => {
                        let node = self.mns.get_mut(&dst).expect("mn");
                        if node.interfaces[i].id != ra.interface_id {
                            return;
                        }
                        if let Some(prefix) = node.assign(i, &ra.hnp) {
                            let name = node.interfaces[i].name.clone();
                            self.record(dst, Record::Prefix { iface: name, prefix });
                        }
                    }
                    MessageBody::NeighborSolicitation(ns) => {
                        let node = &self.mns[&dst];
                        if node.responsive && node.interfaces[i].id == ns.target {
                            let body = MessageBody::NeighborAdvertisement(ns.clone());
                            self.send(dst, src, body, Some(i));
                        }
                    }
                    _ => {}
                }
            }
            Role::Cn => {}
        }
    }

    fn mag_outputs(&mut self, id: NodeId) {
        let outs = self.mags.get_mut(&id).expect("mag").take_output();
        for o in outs {
            match o {
                MagOutput::Send { dst, body } => self.send(id, dst, body, None),
                MagOutput::SendToMn { addr, body } => match self.addr_owner.get(&addr).copied() {
                    Some((mn, i)) => self.send(id, mn, body, Some(i)),
                    None => self.record(
                        id,
                        Record::Anomaly {
                            text: format!("no node owns {addr}"),
                        },
                    ),
                },
                MagOutput::ArmPbaTimeout {
                    interface_id,
                    sequence,
                    at,
                } => self.schedule(at, Event::PbaTimeout(id, interface_id, sequence)),
                MagOutput::ArmProbeTimeout { mn_id, at } => self.schedule(at, Event::ProbeTimeout(id, mn_id)),
                MagOutput::ArmTick { at } => self.schedule(at, Event::MagTick(id)),
                MagOutput::Transition {
                    interface_id,
                    event,
                    before,
                    after,
                } => self.record(
                    id,
                    Record::MagFsm {
                        iface: interface_id,
                        event,
                        before,
                        after,
                    },
                ),
                MagOutput::Anomaly(text) => self.record(id, Record::Anomaly { text }),
                MagOutput::HandshakeFailed(e) => self.record(id, Record::Anomaly { text: e.to_string() }),
            }
        }
    }

    fn flow_of_key(&self, key: &RuleKey) -> Option<usize> {
        key.selector().and_then(|s| self.flow_by_selector.get(s).copied())
    }

    fn lma_effects(&mut self) {
        let lma = self.lma_id;
        for e in self.lma.take_effects() {
            match e {
                LmaEffect::InstallScheduled {
                    key,
                    generation,
                    latency,
                    completes_at,
                    installed,
                    bce,
                } => {
                    self.metrics.installs.push(InstallSample {
                        flow: self.flow_of_key(&key),
                        key: key.clone(),
                        scheduled_at: self.now,
                        completes_at,
                        installed,
                        latency,
                    });
                    self.record(
                        lma,
                        Record::InstallScheduled {
                            key: key.clone(),
                            installed,
                            latency,
                            completes_at,
                            mag: bce.serving_mag,
                        },
                    );
                    self.schedule(completes_at, Event::RuleInstalled { key, generation });
                }
                LmaEffect::RuleInstalled {
                    key, index, table_size, ..
                } => {
                    self.metrics.rule_table.push((self.now, table_size));
                    self.record(lma, Record::RuleInstalled { key, index, table_size });
                }
                LmaEffect::RuleRemoved { key, table_size } => {
                    self.metrics.rule_table.push((self.now, table_size));
                    self.record(lma, Record::RuleRemoved { key, table_size });
                }
                LmaEffect::FlowDropped { key, queued } => {
                    self.record(lma, Record::FlowDropped { key });
                    for p in queued {
                        if let Some(&f) = self.flow_by_selector.get(&p.selector) {
                            self.drop_packet(lma, f, p.seq, DropReason::QueueFlushed);
                        }
                    }
                }
                LmaEffect::Rerouted { key, from, to } => self.record(
                    lma,
                    Record::Rerouted {
                        key,
                        from: from.serving_mag,
                        to: to.serving_mag,
                    },
                ),
                LmaEffect::ExpiryArmed { at, .. } => self.schedule(at, Event::BceExpiry),
                LmaEffect::BindingRemoved { .. } => {}
                LmaEffect::Warning(text) => self.record(lma, Record::Anomaly { text }),
            }
        }
    }

    fn drop_packet(&mut self, at: NodeId, flow: usize, seq: u64, reason: DropReason) {
        *self.metrics.drops.entry(reason).or_default() += 1;
        *self.metrics.flows[flow].drops.entry(reason).or_default() += 1;
        self.record(at, Record::Drop { flow, seq, reason });
    }

    fn emit(&mut self, flow: usize, k: u64) {
        let rt = &self.flows[flow];
        let (src, iface, uplink) = (rt.src, rt.iface, rt.uplink);
        let pkt = Packet::new(rt.selector, rt.size, k, src, self.now);
        let next = rt.emission(k + 1);
        if next < rt.stop && next <= self.horizon {
            self.schedule(next, Event::FlowEmit { flow, k: k + 1 });
        }
        self.metrics.flows[flow].emitted += 1;
        self.record(src, Record::Emit { flow, seq: k });
        if uplink {
            let link = self.mns[&src].interfaces[iface].link;
            let Some(mag) = link.map(|l| self.mag_ids[usize::from(l.0)]) else {
                self.drop_packet(src, flow, k, DropReason::NotAttached);
                return;
            };
            self.launch(pkt, flow, src, mag, Some(iface));
        } else {
            self.launch(pkt, flow, src, self.lma_id, None);
        }
    }

    /// Puts a packet on the wire now, or after `delay` of processing.
    fn transmit(&mut self, pkt: Packet, flow: usize, from: NodeId, to: NodeId, iface: Option<usize>, delay: SimTime) {
        if delay > SimTime::ZERO {
            self.schedule(
                self.now + delay,
                Event::Depart {
                    pkt,
                    flow,
                    from,
                    to,
                    iface,
                },
            );
        } else {
            self.launch(pkt, flow, from, to, iface);
        }
    }

    fn launch(&mut self, pkt: Packet, flow: usize, from: NodeId, to: NodeId, iface: Option<usize>) {
        let Some(link) = self.link_between(from, to, iface) else {
            let reason = if iface.is_some() {
                DropReason::NotAttached
            } else {
                DropReason::NoRoute
            };
            self.drop_packet(from, flow, pkt.seq, reason);
            return;
        };
        let l = &self.links[usize::from(link.0)];
        if !l.up {
            self.drop_packet(from, flow, pkt.seq, DropReason::LinkDown);
            return;
        }
        let (at, epoch, access) = (self.now + l.latency, l.epoch, l.access);
        if access && self.loss > 0.0 && self.loss_rng.gen::<f64>() < self.loss {
            self.drop_packet(from, flow, pkt.seq, DropReason::WirelessLoss);
            return;
        }
        self.schedule(
            at,
            Event::Arrive {
                pkt,
                flow,
                from,
                to,
                link,
                epoch,
                iface,
            },
        );
    }

    #[allow(clippy::too_many_arguments)]
    fn cost_sample(
        &mut self,
        flow: usize,
        seq: u64,
        entity: CostEntity,
        node: NodeId,
        cost: Cost,
        rule_index: Option<usize>,
        diverted: bool,
    ) {
        self.metrics.costs.push(CostSample {
            flow,
            seq,
            at: self.now,
            entity,
            node,
            cost,
            rule_index,
            diverted,
        });
    }

    fn arrive(&mut self, mut pkt: Packet, flow: usize, from: NodeId, to: NodeId, link: LinkId, iface: Option<usize>) {
        pkt.hop(to, self.now);
        let seq = pkt.seq;
        match self.role(to) {
            Role::Lma if self.role(from) == Role::Cn => self.lma_downlink(pkt, flow),
            Role::Lma => {
                let cost = self.lma.forward_uplink();
                self.cost_sample(flow, seq, CostEntity::Lma, to, cost, None, false);
                let dst = self.flows[flow].dst;
                let d = self.delay(cost);
                self.transmit(pkt, flow, to, dst, None, d);
            }
            Role::Mag if from == self.lma_id => {
                let mag = self.mags.get_mut(&to).expect("mag");
                match mag.forward_downlink(&pkt.selector.dst_addr) {
                    Some(eg) => {
                        self.cost_sample(flow, seq, CostEntity::Mag, to, eg.cost, None, false);
                        self.record(
                            to,
                            Record::Bridge {
                                flow,
                                seq,
                                cost: eg.cost,
                            },
                        );
                        match self.addr_owner.get(&eg.addr).copied() {
                            Some((mn, i)) => {
                                let d = self.delay(eg.cost);
                                self.transmit(pkt, flow, to, mn, Some(i), d);
                            }
                            None => self.drop_packet(to, flow, seq, DropReason::NotAttached),
                        }
                    }
                    None => self.drop_packet(to, flow, seq, DropReason::NoMagEntry),
                }
            }
            Role::Mag => {
                let (lma, cost) = self.mags.get_mut(&to).expect("mag").forward_uplink();
                self.cost_sample(flow, seq, CostEntity::Mag, to, cost, None, false);
                self.record(to, Record::Bridge { flow, seq, cost });
                let d = self.delay(cost);
                self.transmit(pkt, flow, to, lma, None, d);
            }
            Role::Mn => {
                let Some(i) = iface else {
                    self.drop_packet(to, flow, seq, DropReason::NotAttached);
                    return;
                };
                if self.mns[&to].interfaces[i].link != Some(link) {
                    self.drop_packet(to, flow, seq, DropReason::NotAttached);
                    return;
                }
                match self
                    .mns
                    .get_mut(&to)
                    .expect("mn")
                    .accept(flow, seq, &pkt.selector.dst_addr)
                {
                    Ok(()) => self.deliver(to, flow, seq, i, link),
                    Err(reason) => self.drop_packet(to, flow, seq, reason),
                }
            }
            Role::Cn => {
                let i = self.flows[flow].iface;
                let src = self.flows[flow].src;
                let l = self.mns[&src].interfaces[i].link.unwrap_or(link);
                self.deliver(to, flow, seq, i, l);
            }
            Role::Aaa | Role::Mihf | Role::Sap => self.drop_packet(to, flow, seq, DropReason::NoRoute),
        }
    }

    fn deliver(&mut self, at: NodeId, flow: usize, seq: u64, iface: usize, link: LinkId) {
        let m = &mut self.metrics.flows[flow];
        m.delivered += 1;
        m.deliveries.push(Delivery {
            seq,
            at: self.now,
            iface,
            link,
        });
        self.record(at, Record::Deliver { flow, seq, iface, link });
    }

    fn lma_downlink(&mut self, pkt: Packet, flow: usize) {
        let now = self.now;
        let lma = self.lma_id;
        let released = self.lma.complete_due(now);
        self.lma_effects();
        self.release(released);
        let seq = pkt.seq;
        let out = self.lma.forward_downlink(pkt, now);
        match out {
            Forwarded::FastPath {
                egress,
                cost,
                rule_index,
            } => {
                self.metrics.flows[flow].fast_path += 1;
                self.cost_sample(flow, seq, CostEntity::Lma, lma, cost, Some(rule_index), false);
                self.record(
                    lma,
                    Record::FastPath {
                        flow,
                        seq,
                        rule_index,
                        cost,
                    },
                );
                let d = self.delay(cost);
                self.transmit(egress.packet, flow, lma, egress.mag, None, d);
            }
            Forwarded::Diverted { cost, classified } => {
                self.metrics.flows[flow].diverted += 1;
                self.cost_sample(flow, seq, CostEntity::Lma, lma, cost, None, true);
                self.record(
                    lma,
                    Record::Divert {
                        flow,
                        seq,
                        cost,
                        classified,
                    },
                );
            }
            Forwarded::Unroutable { cost, .. } => {
                self.cost_sample(flow, seq, CostEntity::Lma, lma, cost, None, true);
                self.drop_packet(lma, flow, seq, DropReason::Unroutable);
            }
            Forwarded::FlowDropped { cost, .. } => {
                self.cost_sample(flow, seq, CostEntity::Lma, lma, cost, None, true);
                self.drop_packet(lma, flow, seq, DropReason::FlowDropped);
            }
        }
        self.lma_effects();
    }

    /// Sends packets freed from the user-space queue. Each leaves once its
    /// own diversion work is done and its rule exists.
    fn release(&mut self, released: Vec<Released>) {
        let divert = self.delay(self.lma.costs().divert);
        for r in released {
            let Some(&flow) = self.flow_by_selector.get(&r.egress.packet.selector) else {
                continue;
            };
            let depart = (r.arrived_at + divert).max(self.now);
            let d = depart - self.now;
            self.transmit(r.egress.packet, flow, self.lma_id, r.egress.mag, None, d);
        }
    }
}

/// Builds and runs a scenario to its horizon.
pub fn run(sc: &Scenario, seed: u64) -> Result<RunOutput, ScenarioInvalid> {
    Ok(Simulator::new(sc, seed)?.run())
}
