//! Local Mobility Anchor: binding cache, flow identification, flow
//! scheduling and the rule-table data path.

pub mod cache;
pub mod rules;
pub mod scheduler;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use log::warn;
use thiserror::Error;

use crate::cost::{Cost, CostModel};
use crate::proto::{MnId, NodeId, Packet, PbaBody, PbaStatus, PbuBody, Prefix, SimTime, TrafficSelector};

pub use cache::{BceKey, BindingCache, BindingCacheEntry, TunnelId};
pub use rules::{Mark, QueuedPacket, Rule, RuleKey, RuleTable, UserSpaceQueue};
pub use scheduler::{FlowDecider, FlowScheduler, PrefixAffinity, SchedulerPolicy};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LmaError {
    #[error("no binding covers destination {0}")]
    Unroutable(std::net::Ipv6Addr),
    #[error("mobile node {0} has no live binding")]
    NoPath(MnId),
}

/// Outcome of the mobility manager for one PBU.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MmmAction {
    Register,
    Renew,
    Handover,
    Delete,
    /// Deregistration for a binding that does not exist.
    DeleteUnknown,
    Reject(PbaStatus),
}

impl fmt::Display for MmmAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MmmAction::Register => f.write_str("REGISTER"),
            MmmAction::Renew => f.write_str("RENEW"),
            MmmAction::Handover => f.write_str("HANDOVER"),
            MmmAction::Delete => f.write_str("DELETE"),
            MmmAction::DeleteUnknown => f.write_str("DELETE-NOOP"),
            MmmAction::Reject(s) => write!(f, "REJECT({s:?})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BindingState {
    /// Route chosen; the rule is not yet in the table.
    Installing,
    Active,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowBinding {
    pub key: RuleKey,
    pub mn_id: MnId,
    pub bce_ref: BceKey,
    pub mark: Mark,
    pub state: BindingState,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct PendingInstall {
    generation: u64,
    mark: Mark,
    completes_at: SimTime,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmaConfig {
    /// Install one rule per flow; otherwise one rule per mobile node.
    pub flow_mobility: bool,
    pub bce_capacity: Option<usize>,
    pub prohibited: BTreeSet<MnId>,
    /// Policy store: every prefix owned by each mobile node.
    pub mn_prefixes: BTreeMap<MnId, Vec<Prefix>>,
    /// Filler rules installed ahead of any flow rule.
    pub prefill_rules: usize,
    /// Simulated microseconds per install-latency cost unit.
    pub install_unit_us: f64,
}

impl Default for LmaConfig {
    fn default() -> Self {
        LmaConfig {
            flow_mobility: true,
            bce_capacity: None,
            prohibited: BTreeSet::new(),
            mn_prefixes: BTreeMap::new(),
            prefill_rules: 0,
            install_unit_us: 1000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PbuOutcome {
    pub action: MmmAction,
    pub pba: PbaBody,
}

/// A packet leaving the LMA toward a MAG.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Egress {
    pub packet: Packet,
    pub mag: NodeId,
    pub tunnel: TunnelId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Forwarded {
    FastPath {
        egress: Egress,
        cost: Cost,
        rule_index: usize,
    },
    /// Held in the user-space queue; `classified` is set when this packet
    /// triggered flow identification.
    Diverted {
        cost: Cost,
        classified: bool,
    },
    Unroutable {
        packet: Packet,
        cost: Cost,
    },
    FlowDropped {
        packet: Packet,
        cost: Cost,
    },
}

/// A queued packet released by a completed installation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Released {
    pub egress: Egress,
    pub arrived_at: SimTime,
}

/// Side effects for the simulator to schedule or record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LmaEffect {
    InstallScheduled {
        key: RuleKey,
        generation: u64,
        latency: Cost,
        completes_at: SimTime,
        installed: usize,
        bce: BceKey,
    },
    RuleInstalled {
        key: RuleKey,
        mark: Mark,
        index: usize,
        table_size: usize,
    },
    RuleRemoved {
        key: RuleKey,
        table_size: usize,
    },
    FlowDropped {
        key: RuleKey,
        queued: Vec<Packet>,
    },
    Rerouted {
        key: RuleKey,
        from: BceKey,
        to: BceKey,
    },
    ExpiryArmed {
        bce: BceKey,
        at: SimTime,
    },
    BindingRemoved {
        bce: BceKey,
    },
    Warning(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LmaStats {
    pub fim_invocations: BTreeMap<TrafficSelector, u32>,
    pub reroutes: BTreeMap<RuleKey, u32>,
    pub dropped_flows: BTreeMap<RuleKey, u32>,
    pub unroutable: u64,
    pub diverted: u64,
    pub fast_path: u64,
    pub actions: BTreeMap<String, u32>,
}

#[derive(Debug)]
pub struct Lma {
    id: NodeId,
    config: LmaConfig,
    costs: CostModel,
    cache: BindingCache,
    bindings: BTreeMap<RuleKey, FlowBinding>,
    dropped: BTreeMap<RuleKey, MnId>,
    rules: RuleTable,
    pending: BTreeMap<RuleKey, PendingInstall>,
    queue: UserSpaceQueue,
    scheduler: FlowScheduler,
    routes: BTreeMap<Mark, BceKey>,
    tunnels: BTreeMap<NodeId, TunnelId>,
    unroutable: BTreeSet<TrafficSelector>,
    next_mark: u32,
    next_generation: u64,
    stats: LmaStats,
    effects: Vec<LmaEffect>,
}

impl Lma {
    pub fn new(id: NodeId, config: LmaConfig, costs: CostModel, policy: SchedulerPolicy) -> Self {
        let mut rules = RuleTable::default();
        for i in 0..config.prefill_rules {
            rules.push(Rule {
                key: RuleKey::Static(i as u32),
                mark: Mark(0),
            });
        }
        Lma {
            id,
            config,
            costs,
            cache: BindingCache::default(),
            bindings: BTreeMap::new(),
            dropped: BTreeMap::new(),
            rules,
            pending: BTreeMap::new(),
            queue: UserSpaceQueue::default(),
            scheduler: FlowScheduler::new(policy),
            routes: BTreeMap::new(),
            tunnels: BTreeMap::new(),
            unroutable: BTreeSet::new(),
            next_mark: 1,
            next_generation: 1,
            stats: LmaStats::default(),
            effects: Vec::new(),
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn cache(&self) -> &BindingCache {
        &self.cache
    }

    pub fn rules(&self) -> &RuleTable {
        &self.rules
    }

    pub fn bindings(&self) -> impl Iterator<Item = &FlowBinding> {
        self.bindings.values()
    }

    pub fn binding(&self, key: &RuleKey) -> Option<&FlowBinding> {
        self.bindings.get(key)
    }

    pub fn is_dropped(&self, key: &RuleKey) -> bool {
        self.dropped.contains_key(key)
    }

    pub fn dropped_flows(&self) -> impl Iterator<Item = &RuleKey> {
        self.dropped.keys()
    }

    pub fn queue(&self) -> &UserSpaceQueue {
        &self.queue
    }

    pub fn pending_installs(&self) -> usize {
        self.pending.len()
    }

    pub fn stats(&self) -> &LmaStats {
        &self.stats
    }

    pub fn costs(&self) -> &CostModel {
        &self.costs
    }

    pub fn take_effects(&mut self) -> Vec<LmaEffect> {
        std::mem::take(&mut self.effects)
    }

    fn tunnel_for(&mut self, mag: NodeId) -> TunnelId {
        let next = TunnelId(self.tunnels.len() as u16 + 1);
        *self.tunnels.entry(mag).or_insert(next)
    }

    fn pba(pbu: &PbuBody, status: PbaStatus, hnp: Vec<Prefix>) -> PbaBody {
        PbaBody {
            mn_id: pbu.mn_id.clone(),
            interface_id: pbu.interface_id,
            hnp,
            lifetime: if status.is_success() { pbu.lifetime } else { 0 },
            sequence: pbu.sequence,
            status,
        }
    }

    /// Prefixes advertised back to the MAG: the interface's own HNPs first,
    /// then every other prefix the node owns.
    fn advertised_prefixes(&self, pbu: &PbuBody) -> Vec<Prefix> {
        let mut out = pbu.hnp.clone();
        let policy = self.config.mn_prefixes.get(&pbu.mn_id).into_iter().flatten();
        let live = self.cache.for_mn(&pbu.mn_id).flat_map(|e| e.hnp.iter());
        for p in policy.chain(live) {
            if !out.contains(p) {
                out.push(*p);
            }
        }
        out
    }

    /// Mobility manager: applies one PBU and returns the chosen action and
    /// the PBA to send back to `from_mag`.
    pub fn mmm_handle_pbu(&mut self, pbu: &PbuBody, from_mag: NodeId, now: SimTime) -> PbuOutcome {
        let outcome = self.mmm_dispatch(pbu, from_mag, now);
        *self.stats.actions.entry(outcome.action.to_string()).or_default() += 1;
        outcome
    }

    fn mmm_dispatch(&mut self, pbu: &PbuBody, from_mag: NodeId, now: SimTime) -> PbuOutcome {
        let key = BceKey {
            mn_id: pbu.mn_id.clone(),
            serving_mag: from_mag,
        };
        if pbu.is_deregistration() {
            let known = self.cache.get(&key).is_some_and(|e| e.interface_id == pbu.interface_id);
            let action = if known {
                self.delete_binding(&key, now);
                MmmAction::Delete
            } else {
                MmmAction::DeleteUnknown
            };
            return PbuOutcome {
                action,
                pba: Self::pba(pbu, PbaStatus::Success, pbu.hnp.clone()),
            };
        }
        if self.config.prohibited.contains(&pbu.mn_id) {
            return self.reject(pbu, PbaStatus::ErrorAdminProhibited);
        }
        let expires = now + SimTime::from_secs(u64::from(pbu.lifetime));
        let existing = self
            .cache
            .find_interface(&pbu.mn_id, &pbu.interface_id)
            .map(BindingCacheEntry::key);
        match existing {
            Some(old) if old.serving_mag == from_mag => {
                let stale = self.cache.get(&key).is_some_and(|e| e.hnp != pbu.hnp);
                if stale {
                    let msg = format!("{}: renewal for {} overwrites its prefixes", self.id, pbu.mn_id);
                    warn!("{msg}");
                    self.effects.push(LmaEffect::Warning(msg));
                }
                self.cache.update(&key, |e| {
                    e.lifetime_expires_at = expires;
                    e.hnp = pbu.hnp.clone();
                });
                self.effects.push(LmaEffect::ExpiryArmed { bce: key, at: expires });
                self.unroutable.clear();
                PbuOutcome {
                    action: MmmAction::Renew,
                    pba: Self::pba(pbu, PbaStatus::Success, self.advertised_prefixes(pbu)),
                }
            }
            Some(old) => {
                if self.cache.contains(&key) {
                    return self.reject(pbu, PbaStatus::ErrorAdminProhibited);
                }
                self.handover(&old, from_mag, pbu, expires);
                self.effects.push(LmaEffect::ExpiryArmed { bce: key, at: expires });
                self.fsm_reroute(&pbu.mn_id, now);
                PbuOutcome {
                    action: MmmAction::Handover,
                    pba: Self::pba(pbu, PbaStatus::Success, self.advertised_prefixes(pbu)),
                }
            }
            None => {
                if self.cache.contains(&key) {
                    return self.reject(pbu, PbaStatus::ErrorAdminProhibited);
                }
                if self.config.bce_capacity.is_some_and(|cap| self.cache.len() >= cap) {
                    return self.reject(pbu, PbaStatus::ErrorNoResources);
                }
                let mark = Mark(self.next_mark);
                self.next_mark += 1;
                let tunnel_id = self.tunnel_for(from_mag);
                self.cache.insert(BindingCacheEntry {
                    mn_id: pbu.mn_id.clone(),
                    interface_id: pbu.interface_id,
                    serving_mag: from_mag,
                    hnp: pbu.hnp.clone(),
                    lifetime_expires_at: expires,
                    tunnel_id,
                    mark,
                });
                self.routes.insert(mark, key.clone());
                self.effects.push(LmaEffect::ExpiryArmed { bce: key, at: expires });
                self.unroutable.clear();
                self.revive_dropped(&pbu.mn_id, now);
                PbuOutcome {
                    action: MmmAction::Register,
                    pba: Self::pba(pbu, PbaStatus::Success, self.advertised_prefixes(pbu)),
                }
            }
        }
    }

    fn reject(&self, pbu: &PbuBody, status: PbaStatus) -> PbuOutcome {
        PbuOutcome {
            action: MmmAction::Reject(status),
            pba: Self::pba(pbu, status, pbu.hnp.clone()),
        }
    }

    /// Moves a binding to a new serving MAG. Flow bindings follow it and
    /// keep their mark; the mark's route now points into the new tunnel.
    fn handover(&mut self, old: &BceKey, new_mag: NodeId, pbu: &PbuBody, expires: SimTime) {
        let Some(mut entry) = self.cache.remove(old) else {
            return;
        };
        entry.serving_mag = new_mag;
        entry.tunnel_id = self.tunnel_for(new_mag);
        entry.hnp = pbu.hnp.clone();
        entry.lifetime_expires_at = expires;
        let new_key = entry.key();
        self.routes.insert(entry.mark, new_key.clone());
        self.cache.insert(entry);
        for b in self.bindings.values_mut().filter(|b| b.bce_ref == *old) {
            b.bce_ref = new_key.clone();
        }
        self.unroutable.clear();
        self.effects.push(LmaEffect::BindingRemoved { bce: old.clone() });
    }

    fn delete_binding(&mut self, key: &BceKey, now: SimTime) {
        let Some(entry) = self.cache.remove(key) else {
            return;
        };
        self.routes.remove(&entry.mark);
        self.effects.push(LmaEffect::BindingRemoved { bce: key.clone() });
        self.fsm_reroute(&entry.mn_id, now);
    }

    /// Removes every binding whose lifetime has run out by `now`.
    pub fn expire(&mut self, now: SimTime) -> Vec<BceKey> {
        let due: Vec<BceKey> = self
            .cache
            .iter()
            .filter(|e| e.lifetime_expires_at <= now)
            .map(BindingCacheEntry::key)
            .collect();
        for key in &due {
            self.delete_binding(key, now);
        }
        due
    }

    /// Flow identification: finds the node owning the destination.
    pub fn fim_classify(&mut self, pkt: &Packet) -> Result<(MnId, TrafficSelector), LmaError> {
        let sel = pkt.selector;
        *self.stats.fim_invocations.entry(sel).or_default() += 1;
        match self.cache.lookup(&sel.dst_addr) {
            Some(e) => Ok((e.mn_id.clone(), sel)),
            None => {
                self.unroutable.insert(sel);
                Err(LmaError::Unroutable(sel.dst_addr))
            }
        }
    }

    /// Flow scheduler: chooses a binding for `key` and starts installing its
    /// rule.
    pub fn fsm_schedule(&mut self, mn_id: &MnId, key: RuleKey, now: SimTime) -> Result<BceKey, LmaError> {
        let candidates: Vec<&BindingCacheEntry> = self.cache.for_mn(mn_id).collect();
        if candidates.is_empty() {
            return Err(LmaError::NoPath(mn_id.clone()));
        }
        let pick = self.scheduler.choose(mn_id, &key, &candidates);
        let chosen = candidates[pick];
        let bce = chosen.key();
        let mark = chosen.mark;
        let installed = self.rules.len();
        let latency = self.costs.install_latency(installed);
        let completes_at = now + SimTime::from_us_f64(latency.as_units() * self.config.install_unit_us);
        let generation = self.next_generation;
        self.next_generation += 1;
        self.pending.insert(
            key.clone(),
            PendingInstall {
                generation,
                mark,
                completes_at,
            },
        );
        self.bindings.insert(
            key.clone(),
            FlowBinding {
                key: key.clone(),
                mn_id: mn_id.clone(),
                bce_ref: bce.clone(),
                mark,
                state: BindingState::Installing,
            },
        );
        self.effects.push(LmaEffect::InstallScheduled {
            key,
            generation,
            latency,
            completes_at,
            installed,
            bce: bce.clone(),
        });
        Ok(bce)
    }

    /// Reschedules every flow of `mn_id` whose binding died. Flows left
    /// without any binding are dropped together with their queued packets.
    pub fn fsm_reroute(&mut self, mn_id: &MnId, now: SimTime) {
        let orphans: Vec<FlowBinding> = self
            .bindings
            .values()
            .filter(|b| b.mn_id == *mn_id && !self.cache.contains(&b.bce_ref))
            .cloned()
            .collect();
        for b in orphans {
            self.bindings.remove(&b.key);
            self.pending.remove(&b.key);
            if self.rules.remove(&b.key).is_some() {
                self.effects.push(LmaEffect::RuleRemoved {
                    key: b.key.clone(),
                    table_size: self.rules.len(),
                });
            }
            *self.stats.reroutes.entry(b.key.clone()).or_default() += 1;
            match self.fsm_schedule(mn_id, b.key.clone(), now) {
                Ok(to) => self.effects.push(LmaEffect::Rerouted {
                    key: b.key,
                    from: b.bce_ref,
                    to,
                }),
                Err(_) => self.drop_flow(b.key, mn_id.clone()),
            }
        }
    }

    fn drop_flow(&mut self, key: RuleKey, mn_id: MnId) {
        *self.stats.dropped_flows.entry(key.clone()).or_default() += 1;
        let queued = self.queue.take(&key).into_iter().map(|q| q.packet).collect();
        self.dropped.insert(key.clone(), mn_id);
        self.effects.push(LmaEffect::FlowDropped { key, queued });
    }

    fn revive_dropped(&mut self, mn_id: &MnId, now: SimTime) {
        let revived: Vec<RuleKey> = self
            .dropped
            .iter()
            .filter(|(_, m)| *m == mn_id)
            .map(|(k, _)| k.clone())
            .collect();
        for key in revived {
            self.dropped.remove(&key);
            // Cannot fail: the caller just registered a binding for mn_id.
            let _ = self.fsm_schedule(mn_id, key, now);
        }
    }

    /// Completes one pending installation if `generation` is still current.
    pub fn complete_install(&mut self, key: &RuleKey, generation: u64) -> Vec<Released> {
        match self.pending.get(key) {
            Some(p) if p.generation == generation => {}
            _ => return Vec::new(),
        }
        let p = self.pending.remove(key).expect("checked above");
        let index = self
            .rules
            .push(Rule {
                key: key.clone(),
                mark: p.mark,
            })
            .unwrap_or_else(|| self.rules.position(key).expect("duplicate rule exists"));
        if let Some(b) = self.bindings.get_mut(key) {
            b.state = BindingState::Active;
        }
        self.effects.push(LmaEffect::RuleInstalled {
            key: key.clone(),
            mark: p.mark,
            index,
            table_size: self.rules.len(),
        });
        let Some(egress) = self.route(p.mark) else {
            return Vec::new();
        };
        self.queue
            .take(key)
            .into_iter()
            .map(|q| Released {
                egress: Egress {
                    packet: q.packet,
                    mag: egress.0,
                    tunnel: egress.1,
                },
                arrived_at: q.arrived_at,
            })
            .collect()
    }

    /// Completes every installation due by `now`, in completion order.
    pub fn complete_due(&mut self, now: SimTime) -> Vec<Released> {
        let mut due: Vec<(SimTime, u64, RuleKey)> = self
            .pending
            .iter()
            .filter(|(_, p)| p.completes_at <= now)
            .map(|(k, p)| (p.completes_at, p.generation, k.clone()))
            .collect();
        due.sort();
        due.into_iter()
            .flat_map(|(_, generation, key)| self.complete_install(&key, generation))
            .collect()
    }

    fn route(&self, mark: Mark) -> Option<(NodeId, TunnelId)> {
        let key = self.routes.get(&mark)?;
        let e = self.cache.get(key)?;
        Some((e.serving_mag, e.tunnel_id))
    }

    fn rule_key_for(&self, sel: &TrafficSelector, owner: Option<&MnId>) -> Option<RuleKey> {
        if self.config.flow_mobility {
            Some(RuleKey::Flow(*sel))
        } else {
            owner.cloned().map(RuleKey::Node)
        }
    }

    /// Downlink data path. Callers complete due installations first.
    pub fn forward_downlink(&mut self, pkt: Packet, now: SimTime) -> Forwarded {
        let sel = pkt.selector;
        let owner = if self.config.flow_mobility {
            None
        } else {
            self.cache.lookup(&sel.dst_addr).map(|e| e.mn_id.clone())
        };
        let hit = self.rules.scan(|k| match k {
            RuleKey::Flow(s) => *s == sel,
            RuleKey::Node(m) => owner.as_ref() == Some(m),
            RuleKey::Static(_) => false,
        });
        if let Some((index, rule)) = hit {
            let per_flow = matches!(rule.key, RuleKey::Flow(_));
            if let Some((mag, tunnel)) = self.route(rule.mark) {
                self.stats.fast_path += 1;
                return Forwarded::FastPath {
                    egress: Egress {
                        packet: pkt,
                        mag,
                        tunnel,
                    },
                    cost: self.costs.fast_path(index, per_flow),
                    rule_index: index,
                };
            }
        }

        let cost = self.costs.divert;
        self.stats.diverted += 1;
        let key = self.rule_key_for(&sel, owner.as_ref());
        if let Some(key) = &key {
            if self.dropped.contains_key(key) {
                return Forwarded::FlowDropped { packet: pkt, cost };
            }
            if self.pending.contains_key(key) {
                self.queue.push(key.clone(), pkt, now);
                return Forwarded::Diverted {
                    cost,
                    classified: false,
                };
            }
        }
        if self.unroutable.contains(&sel) {
            self.stats.unroutable += 1;
            return Forwarded::Unroutable { packet: pkt, cost };
        }
        let mn_id = match self.fim_classify(&pkt) {
            Ok((mn_id, _)) => mn_id,
            Err(_) => {
                self.stats.unroutable += 1;
                return Forwarded::Unroutable { packet: pkt, cost };
            }
        };
        let key = self
            .rule_key_for(&sel, Some(&mn_id))
            .expect("owner is known after classification");
        if self.dropped.contains_key(&key) {
            return Forwarded::FlowDropped { packet: pkt, cost };
        }
        if !self.pending.contains_key(&key) && self.fsm_schedule(&mn_id, key.clone(), now).is_err() {
            self.stats.unroutable += 1;
            return Forwarded::Unroutable { packet: pkt, cost };
        }
        self.queue.push(key, pkt, now);
        Forwarded::Diverted { cost, classified: true }
    }

    /// Uplink packets leave through the kernel without rule lookup.
    pub fn forward_uplink(&mut self) -> Cost {
        self.costs.base_kernel
    }

    /// Checks the structural invariants; returns the first violation.
    pub fn audit(&self) -> Result<(), String> {
        let mut seen = BTreeSet::new();
        for e in self.cache.iter() {
            if !seen.insert((e.mn_id.clone(), e.interface_id)) {
                return Err(format!("interface {} of {} bound twice", e.interface_id, e.mn_id));
            }
            if self.routes.get(&e.mark) != Some(&e.key()) {
                return Err(format!("route for mark {} does not name its binding", e.mark));
            }
        }
        for b in self.bindings.values() {
            let Some(e) = self.cache.get(&b.bce_ref) else {
                return Err(format!("{} references a dead binding", b.key));
            };
            if e.mark != b.mark {
                return Err(format!("{} carries a stale mark", b.key));
            }
            let installed = self.rules.position(&b.key).is_some();
            match b.state {
                BindingState::Active if !installed => {
                    return Err(format!("{} active without a rule", b.key));
                }
                BindingState::Installing if installed || !self.pending.contains_key(&b.key) => {
                    return Err(format!("{} installing inconsistently", b.key));
                }
                _ => {}
            }
        }
        for q in self.queue.iter() {
            if self.rules.position(&q.key).is_some() {
                return Err(format!("{} queued although its rule is installed", q.key));
            }
        }
        for r in self.rules.iter() {
            if !matches!(r.key, RuleKey::Static(_)) && !self.bindings.contains_key(&r.key) {
                return Err(format!("rule {} has no flow binding", r.key));
            }
        }
        Ok(())
    }
}
