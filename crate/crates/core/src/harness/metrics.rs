use std::collections::BTreeMap;

use crate::cost::Cost;
use crate::lma::RuleKey;
use crate::mag::MagStats;
use crate::netsim::DropReason;
use crate::proto::{LinkId, MessageKind, NodeId, SimTime, TrafficSelector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Delivery {
    pub seq: u64,
    pub at: SimTime,
    /// Index of the receiving interface on its mobile node.
    pub iface: usize,
    pub link: LinkId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowMetrics {
    pub name: String,
    pub selector: TrafficSelector,
    pub period: SimTime,
    pub rate_kbps: f64,
    pub emitted: u64,
    pub delivered: u64,
    pub diverted: u64,
    pub fast_path: u64,
    pub drops: BTreeMap<DropReason, u64>,
    /// The flow was in the Dropped state at the end of the run.
    pub ended_dropped: bool,
    pub deliveries: Vec<Delivery>,
}

impl FlowMetrics {
    pub fn dropped(&self) -> u64 {
        self.drops.values().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CostEntity {
    Lma,
    Mag,
}

/// Processing cost of one packet at one entity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostSample {
    pub flow: usize,
    pub seq: u64,
    /// Arrival time at the entity.
    pub at: SimTime,
    pub entity: CostEntity,
    pub node: NodeId,
    pub cost: Cost,
    /// Matched rule position on the fast path; `None` when diverted or at
    /// a MAG.
    pub rule_index: Option<usize>,
    pub diverted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstallSample {
    pub key: RuleKey,
    pub flow: Option<usize>,
    pub scheduled_at: SimTime,
    pub completes_at: SimTime,
    /// Rules in the table when installation started.
    pub installed: usize,
    pub latency: Cost,
}

/// One handover estimate, with the simulator's ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HandoverSample {
    pub flow: usize,
    pub estimate_ms: f64,
    pub ground_truth_ms: Option<f64>,
    pub period_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricSet {
    pub flows: Vec<FlowMetrics>,
    pub costs: Vec<CostSample>,
    pub installs: Vec<InstallSample>,
    pub handovers: Vec<HandoverSample>,
    pub signaling: BTreeMap<MessageKind, u64>,
    /// Rule-table size after every change.
    pub rule_table: Vec<(SimTime, usize)>,
    pub drops: BTreeMap<DropReason, u64>,
    pub mags: BTreeMap<String, MagStats>,
    pub mmm_actions: BTreeMap<String, u32>,
    pub fim_invocations: BTreeMap<TrafficSelector, u32>,
    pub reroutes: BTreeMap<RuleKey, u32>,
}

impl MetricSet {
    pub fn emitted(&self) -> u64 {
        self.flows.iter().map(|f| f.emitted).sum()
    }

    pub fn delivered(&self) -> u64 {
        self.flows.iter().map(|f| f.delivered).sum()
    }

    pub fn dropped(&self) -> u64 {
        self.drops.values().sum()
    }

    /// Emitted packets are either delivered or dropped with a reason, and
    /// per-flow counts agree with the totals.
    pub fn conserved(&self) -> bool {
        let per_flow: u64 = self.flows.iter().map(FlowMetrics::dropped).sum();
        self.emitted() == self.delivered() + self.dropped()
            && per_flow == self.dropped()
            && self.flows.iter().all(|f| f.emitted == f.delivered + f.dropped())
    }

    pub fn costs_for(&self, entity: CostEntity) -> impl Iterator<Item = &CostSample> {
        self.costs.iter().filter(move |c| c.entity == entity)
    }

    pub fn signaling_total(&self) -> u64 {
        self.signaling.values().sum()
    }
}
