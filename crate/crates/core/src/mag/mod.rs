//! Mobile Access Gateway: attachment detection through MIH events, the
//! registration state machine, lifetime probing and the tunnel bridge.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::net::Ipv6Addr;

use log::debug;

use crate::cost::{Cost, CostModel};
use crate::mih::{MihError, MihUser};
use crate::proto::{
    eui64_from_link_addr, AaaRequestBody, AaaResponseBody, InterfaceId, LinkAddr, LinkId, MessageBody, MnId,
    NeighborBody, NodeId, PbaBody, PbuBody, Prefix, RouterAdvertisementBody, SimTime,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EntryStatus {
    Temporary,
    Permanent,
}

impl fmt::Display for EntryStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EntryStatus::Temporary => f.write_str("temporary"),
            EntryStatus::Permanent => f.write_str("permanent"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MagBindingEntry {
    pub mn_id: MnId,
    pub interface_id: InterfaceId,
    pub link_addr: LinkAddr,
    pub hnp: Vec<Prefix>,
    /// Every prefix of the node as returned by the LMA.
    pub mn_prefixes: Vec<Prefix>,
    pub status: EntryStatus,
    pub lifetime_expires_at: SimTime,
    pub access_link: LinkId,
    pub pbu_sequence: u16,
    pub renewing: bool,
    retransmissions_left: u8,
}

impl MagBindingEntry {
    pub fn covers(&self, dst: &Ipv6Addr) -> bool {
        self.hnp.iter().chain(&self.mn_prefixes).any(|p| p.contains(dst))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PendingProbe {
    pub mn_id: MnId,
    pub interface_id: InterfaceId,
    pub solicitation_sent_at: SimTime,
    pub timeout_at: SimTime,
    pub retries_left: u8,
}

/// Attachment detection mechanism. Only one can be active; the syslog
/// path exists as configuration only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Detection {
    #[default]
    Mih,
    Syslog,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MagConfig {
    pub lifetime_s: u16,
    pub lifetime_overrides: BTreeMap<MnId, u16>,
    pub renewal_margin: SimTime,
    pub probe_timeout: SimTime,
    pub probe_retries: u8,
    pub pba_timeout: SimTime,
    pub pbu_retransmissions: u8,
    pub tick: SimTime,
    pub detection: Detection,
}

impl Default for MagConfig {
    fn default() -> Self {
        MagConfig {
            lifetime_s: 300,
            lifetime_overrides: BTreeMap::new(),
            renewal_margin: SimTime::from_secs(30),
            probe_timeout: SimTime::from_secs(1),
            probe_retries: 1,
            pba_timeout: SimTime::from_secs(1),
            pbu_retransmissions: 0,
            tick: SimTime::from_secs(1),
            detection: Detection::Mih,
        }
    }
}

impl MagConfig {
    fn lifetime_for(&self, mn: &MnId) -> u16 {
        self.lifetime_overrides.get(mn).copied().unwrap_or(self.lifetime_s)
    }

    /// Probing starts this long before expiry: the configured margin, but
    /// never more than half the lifetime.
    fn margin_for(&self, lifetime_s: u16) -> SimTime {
        let half = SimTime::from_us(u64::from(lifetime_s) * 500_000);
        self.renewal_margin.min(half)
    }
}

/// Inputs of the registration state machine.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MagEvent {
    Attachment(LinkAddr),
    Detachment(LinkAddr),
    PbaRegister(PbaBody),
    PbaDeregister(PbaBody),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MagOutput {
    Send {
        dst: NodeId,
        body: MessageBody,
    },
    /// Send over the access link to the interface owning `addr`.
    SendToMn {
        addr: LinkAddr,
        body: MessageBody,
    },
    ArmPbaTimeout {
        interface_id: InterfaceId,
        sequence: u16,
        at: SimTime,
    },
    ArmProbeTimeout {
        mn_id: MnId,
        at: SimTime,
    },
    ArmTick {
        at: SimTime,
    },
    Transition {
        interface_id: InterfaceId,
        event: &'static str,
        before: Option<EntryStatus>,
        after: Option<EntryStatus>,
    },
    Anomaly(String),
    HandshakeFailed(MihError),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MagStats {
    pub attachments: u64,
    pub rejected: u64,
    pub anomalies: u64,
    pub renewals: u64,
    pub deregistrations: u64,
    pub silent_detachments: u64,
    pub forwarded_down: u64,
    pub forwarded_up: u64,
    pub dropped_no_entry: u64,
}

/// Where a downlink packet leaves the MAG.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccessEgress {
    pub link: LinkId,
    pub addr: LinkAddr,
    pub cost: Cost,
}

#[derive(Debug)]
pub struct Mag {
    id: NodeId,
    lma: NodeId,
    aaa: NodeId,
    access_link: LinkId,
    config: MagConfig,
    costs: CostModel,
    mih: MihUser,
    entries: BTreeMap<InterfaceId, MagBindingEntry>,
    awaiting_aaa: BTreeMap<InterfaceId, LinkAddr>,
    probes: BTreeMap<MnId, PendingProbe>,
    ticking: bool,
    next_seq: u16,
    stats: MagStats,
    out: Vec<MagOutput>,
}

impl Mag {
    pub fn new(
        id: NodeId,
        lma: NodeId,
        aaa: NodeId,
        mihf: NodeId,
        access_link: LinkId,
        config: MagConfig,
        costs: CostModel,
    ) -> Self {
        Mag {
            id,
            lma,
            aaa,
            access_link,
            config,
            costs,
            mih: MihUser::new(mihf, access_link),
            entries: BTreeMap::new(),
            awaiting_aaa: BTreeMap::new(),
            probes: BTreeMap::new(),
            ticking: false,
            next_seq: 0,
            stats: MagStats::default(),
            out: Vec::new(),
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn access_link(&self) -> LinkId {
        self.access_link
    }

    pub fn mih(&self) -> &MihUser {
        &self.mih
    }

    pub fn entries(&self) -> impl Iterator<Item = &MagBindingEntry> {
        self.entries.values()
    }

    pub fn entry(&self, id: &InterfaceId) -> Option<&MagBindingEntry> {
        self.entries.get(id)
    }

    pub fn probe(&self, mn: &MnId) -> Option<&PendingProbe> {
        self.probes.get(mn)
    }

    pub fn stats(&self) -> &MagStats {
        &self.stats
    }

    pub fn take_output(&mut self) -> Vec<MagOutput> {
        std::mem::take(&mut self.out)
    }

    fn send(&mut self, dst: NodeId, body: MessageBody) {
        self.out.push(MagOutput::Send { dst, body });
    }

    fn anomaly(&mut self, what: String) {
        debug!("{}: {what}", self.id);
        self.stats.anomalies += 1;
        self.out.push(MagOutput::Anomaly(what));
    }

    fn transition(
        &mut self,
        interface_id: InterfaceId,
        event: &'static str,
        before: Option<EntryStatus>,
        after: Option<EntryStatus>,
    ) {
        self.out.push(MagOutput::Transition {
            interface_id,
            event,
            before,
            after,
        });
    }

    fn sequence(&mut self) -> u16 {
        self.next_seq = self.next_seq.wrapping_add(1);
        self.next_seq
    }

    /// Starts the MIH handshake for the access link.
    pub fn start(&mut self) {
        let (dst, body) = self.mih.start();
        self.send(dst, body);
    }

    /// Dispatches one received control message.
    pub fn handle_message(&mut self, src: NodeId, body: &MessageBody, now: SimTime) {
        match body {
            MessageBody::MihRegisterAck(_)
            | MessageBody::MihCapabilityDiscoverResp(_)
            | MessageBody::MihEventSubscribeConfirm(_) => match self.mih.handle(body) {
                Ok(Some((dst, next))) => self.send(dst, next),
                Ok(None) => {}
                Err(e) => self.out.push(MagOutput::HandshakeFailed(e)),
            },
            MessageBody::MihLinkUp(b) | MessageBody::MihLinkDown(b) => {
                if src != self.mih.mihf() || b.link != self.access_link || !self.mih.is_subscribed() {
                    self.anomaly(format!("unsolicited link event for {}", b.link));
                    return;
                }
                let ev = if matches!(body, MessageBody::MihLinkUp(_)) {
                    MagEvent::Attachment(b.addr)
                } else {
                    MagEvent::Detachment(b.addr)
                };
                self.handle_event(ev, now);
            }
            MessageBody::AaaResponse(b) => self.on_aaa(b, now),
            MessageBody::Pba(b) => {
                let ev = if b.status.is_success() && b.lifetime == 0 {
                    MagEvent::PbaDeregister(b.clone())
                } else {
                    MagEvent::PbaRegister(b.clone())
                };
                self.handle_event(ev, now);
            }
            MessageBody::NeighborAdvertisement(b) => self.on_neighbor_advertisement(b, now),
            other => self.anomaly(format!("unexpected {} from {src}", other.kind())),
        }
    }

    pub fn handle_event(&mut self, ev: MagEvent, now: SimTime) {
        match ev {
            MagEvent::Attachment(addr) => self.on_attachment(addr),
            MagEvent::Detachment(addr) => self.on_detachment(addr, now),
            MagEvent::PbaRegister(pba) => self.on_pba_register(&pba, now),
            MagEvent::PbaDeregister(pba) => self.on_pba_deregister(&pba),
        }
    }

    fn on_attachment(&mut self, addr: LinkAddr) {
        let id = eui64_from_link_addr(addr);
        self.stats.attachments += 1;
        if let Some(e) = self.entries.get(&id) {
            if e.status == EntryStatus::Permanent {
                self.anomaly(format!("attachment of {id} while already registered"));
            }
        }
        self.awaiting_aaa.insert(id, addr);
        self.send(self.aaa, MessageBody::AaaRequest(AaaRequestBody { interface_id: id }));
    }

    fn on_aaa(&mut self, b: &AaaResponseBody, now: SimTime) {
        let Some(addr) = self.awaiting_aaa.remove(&b.interface_id) else {
            self.anomaly(format!("AAA answer for {} without a request", b.interface_id));
            return;
        };
        let mn_id = match (&b.mn_id, b.authorized && !b.hnp.is_empty()) {
            (Some(mn), true) => mn.clone(),
            _ => {
                self.stats.rejected += 1;
                self.transition(b.interface_id, "aaa-reject", None, None);
                return;
            }
        };
        let lifetime = self.config.lifetime_for(&mn_id);
        let sequence = self.sequence();
        let before = self.entries.get(&b.interface_id).map(|e| e.status);
        let mn_prefixes = self
            .entries
            .get(&b.interface_id)
            .map(|e| e.mn_prefixes.clone())
            .unwrap_or_default();
        self.entries.insert(
            b.interface_id,
            MagBindingEntry {
                mn_id: mn_id.clone(),
                interface_id: b.interface_id,
                link_addr: addr,
                hnp: b.hnp.clone(),
                mn_prefixes,
                status: EntryStatus::Temporary,
                lifetime_expires_at: now + SimTime::from_secs(u64::from(lifetime)),
                access_link: self.access_link,
                pbu_sequence: sequence,
                renewing: false,
                retransmissions_left: self.config.pbu_retransmissions,
            },
        );
        self.transition(b.interface_id, "attach", before, Some(EntryStatus::Temporary));
        self.send(
            self.lma,
            MessageBody::Pbu(PbuBody {
                mn_id,
                interface_id: b.interface_id,
                hnp: b.hnp.clone(),
                lifetime,
                sequence,
            }),
        );
        self.out.push(MagOutput::ArmPbaTimeout {
            interface_id: b.interface_id,
            sequence,
            at: now + self.config.pba_timeout,
        });
    }

    fn on_pba_register(&mut self, pba: &PbaBody, now: SimTime) {
        let Some(entry) = self.entries.get_mut(&pba.interface_id) else {
            self.anomaly(format!("PBA for unknown interface {}", pba.interface_id));
            return;
        };
        if entry.pbu_sequence != pba.sequence {
            let msg = format!("PBA sequence {} does not answer {}", pba.sequence, entry.pbu_sequence);
            self.anomaly(msg);
            return;
        }
        let before = entry.status;
        if !pba.status.is_success() {
            let id = pba.interface_id;
            self.entries.remove(&id);
            self.probes.retain(|_, p| p.interface_id != id);
            self.transition(id, "pba-error", Some(before), None);
            return;
        }
        entry.lifetime_expires_at = now + SimTime::from_secs(u64::from(pba.lifetime));
        entry.mn_prefixes = pba.hnp.clone();
        entry.status = EntryStatus::Permanent;
        let renewal = entry.renewing;
        entry.renewing = false;
        let id = entry.interface_id;
        let addr = entry.link_addr;
        let hnp = entry.hnp.clone();
        if renewal && before == EntryStatus::Permanent {
            self.stats.renewals += 1;
            self.transition(id, "renewed", Some(before), Some(EntryStatus::Permanent));
        } else {
            self.transition(id, "pba-success", Some(before), Some(EntryStatus::Permanent));
            self.out.push(MagOutput::SendToMn {
                addr,
                body: MessageBody::RouterAdvertisement(RouterAdvertisementBody {
                    interface_id: id,
                    hnp,
                    router_lifetime: pba.lifetime,
                }),
            });
        }
        if !self.ticking {
            self.ticking = true;
            self.out.push(MagOutput::ArmTick {
                at: now + self.config.tick,
            });
        }
    }

    fn on_pba_deregister(&mut self, pba: &PbaBody) {
        let id = pba.interface_id;
        self.probes.retain(|_, p| p.interface_id != id);
        self.awaiting_aaa.remove(&id);
    }

    fn on_detachment(&mut self, addr: LinkAddr, _now: SimTime) {
        let id = eui64_from_link_addr(addr);
        if self.awaiting_aaa.remove(&id).is_some() && !self.entries.contains_key(&id) {
            return;
        }
        if !self.deregister(id, "detach") {
            self.anomaly(format!("detachment of unknown interface {id}"));
        }
    }

    /// Deletes the entry for `id` and sends a deregistration PBU.
    fn deregister(&mut self, id: InterfaceId, event: &'static str) -> bool {
        let Some(entry) = self.entries.remove(&id) else {
            return false;
        };
        self.probes.remove(&entry.mn_id);
        self.stats.deregistrations += 1;
        self.transition(id, event, Some(entry.status), None);
        let sequence = self.sequence();
        self.send(
            self.lma,
            MessageBody::Pbu(PbuBody {
                mn_id: entry.mn_id,
                interface_id: id,
                hnp: entry.hnp,
                lifetime: 0,
                sequence,
            }),
        );
        true
    }

    /// A PBA did not arrive in time.
    pub fn pba_timeout(&mut self, id: InterfaceId, sequence: u16, now: SimTime) {
        let Some(entry) = self.entries.get_mut(&id) else {
            return;
        };
        if entry.pbu_sequence != sequence || (entry.status == EntryStatus::Permanent && !entry.renewing) {
            return;
        }
        if entry.retransmissions_left > 0 {
            entry.retransmissions_left -= 1;
            let lifetime = self.config.lifetime_for(&entry.mn_id);
            let pbu = PbuBody {
                mn_id: entry.mn_id.clone(),
                interface_id: id,
                hnp: entry.hnp.clone(),
                lifetime,
                sequence,
            };
            self.send(self.lma, MessageBody::Pbu(pbu));
            self.out.push(MagOutput::ArmPbaTimeout {
                interface_id: id,
                sequence,
                at: now + self.config.pba_timeout,
            });
            return;
        }
        if entry.status == EntryStatus::Temporary {
            self.entries.remove(&id);
            self.transition(id, "pba-timeout", Some(EntryStatus::Temporary), None);
            self.anomaly(format!("no PBA for {id}"));
        } else {
            entry.renewing = false;
        }
    }

    /// Periodic lifetime check.
    pub fn lifetime_tick(&mut self, now: SimTime) {
        let mut expired = Vec::new();
        let mut probe = Vec::new();
        for e in self.entries.values() {
            if e.status != EntryStatus::Permanent || e.renewing {
                continue;
            }
            if e.lifetime_expires_at <= now {
                expired.push(e.interface_id);
                continue;
            }
            let lifetime = self.config.lifetime_for(&e.mn_id);
            let window = e.lifetime_expires_at.saturating_sub(now);
            if window <= self.config.margin_for(lifetime) && !self.probes.contains_key(&e.mn_id) {
                probe.push((e.mn_id.clone(), e.interface_id, e.link_addr));
            }
        }
        for id in expired {
            self.deregister(id, "expired");
        }
        for (mn_id, interface_id, addr) in probe {
            self.solicit(mn_id, interface_id, addr, self.config.probe_retries, now);
        }
        if self.entries.is_empty() {
            self.ticking = false;
        } else {
            self.out.push(MagOutput::ArmTick {
                at: now + self.config.tick,
            });
        }
    }

    fn solicit(&mut self, mn_id: MnId, interface_id: InterfaceId, addr: LinkAddr, retries_left: u8, now: SimTime) {
        let timeout_at = now + self.config.probe_timeout;
        self.probes.insert(
            mn_id.clone(),
            PendingProbe {
                mn_id: mn_id.clone(),
                interface_id,
                solicitation_sent_at: now,
                timeout_at,
                retries_left,
            },
        );
        self.out.push(MagOutput::SendToMn {
            addr,
            body: MessageBody::NeighborSolicitation(NeighborBody { target: interface_id }),
        });
        self.out.push(MagOutput::ArmProbeTimeout { mn_id, at: timeout_at });
    }

    /// A neighbour solicitation went unanswered.
    pub fn probe_timeout(&mut self, mn_id: &MnId, now: SimTime) {
        let Some(p) = self.probes.get(mn_id) else {
            return;
        };
        if p.timeout_at > now {
            return;
        }
        let p = self.probes.remove(mn_id).expect("checked above");
        if p.retries_left > 0 {
            if let Some(addr) = self.entries.get(&p.interface_id).map(|e| e.link_addr) {
                self.solicit(p.mn_id, p.interface_id, addr, p.retries_left - 1, now);
            }
            return;
        }
        if self.deregister(p.interface_id, "unreachable") {
            self.stats.silent_detachments += 1;
        }
    }

    fn on_neighbor_advertisement(&mut self, b: &NeighborBody, now: SimTime) {
        let Some(entry) = self.entries.get_mut(&b.target) else {
            self.anomaly(format!("advertisement from unknown interface {}", b.target));
            return;
        };
        if self.probes.remove(&entry.mn_id).is_none() {
            return;
        }
        self.next_seq = self.next_seq.wrapping_add(1);
        let sequence = self.next_seq;
        let lifetime = self.config.lifetime_for(&entry.mn_id);
        entry.pbu_sequence = sequence;
        entry.renewing = true;
        entry.retransmissions_left = self.config.pbu_retransmissions;
        let pbu = PbuBody {
            mn_id: entry.mn_id.clone(),
            interface_id: entry.interface_id,
            hnp: entry.hnp.clone(),
            lifetime,
            sequence,
        };
        let id = entry.interface_id;
        self.send(self.lma, MessageBody::Pbu(pbu));
        self.out.push(MagOutput::ArmPbaTimeout {
            interface_id: id,
            sequence,
            at: now + self.config.pba_timeout,
        });
    }

    /// Tunnel to access link. Any entry, temporary or permanent, whose
    /// prefixes cover the destination is a valid egress.
    pub fn forward_downlink(&mut self, dst: &Ipv6Addr) -> Option<AccessEgress> {
        let hit = self
            .entries
            .values()
            .find(|e| e.hnp.iter().any(|p| p.contains(dst)))
            .or_else(|| self.entries.values().find(|e| e.covers(dst)));
        match hit {
            Some(e) => {
                self.stats.forwarded_down += 1;
                Some(AccessEgress {
                    link: e.access_link,
                    addr: e.link_addr,
                    cost: self.costs.mag_forward,
                })
            }
            None => {
                self.stats.dropped_no_entry += 1;
                None
            }
        }
    }

    /// Access link to tunnel; returns the LMA and the bridge cost.
    pub fn forward_uplink(&mut self) -> (NodeId, Cost) {
        self.stats.forwarded_up += 1;
        (self.lma, self.costs.mag_forward)
    }

    /// Interfaces with an outstanding AAA query.
    pub fn awaiting_aaa(&self) -> BTreeSet<InterfaceId> {
        self.awaiting_aaa.keys().copied().collect()
    }
}

#[cfg(test)]
mod tests;
