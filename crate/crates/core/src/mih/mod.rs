//! 802.21 media independent handover: the MIHF event broker, per-link
//! Link SAPs and the client-side handshake run by each MAG.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::proto::{
    EventMask, LinkAddr, LinkCapability, LinkId, MessageBody, MessageKind, MihCapabilityDiscoverReqBody,
    MihCapabilityDiscoverRespBody, MihEventSubscribeConfirmBody, MihEventSubscribeReqBody, MihLinkEventBody,
    MihRegisterAckBody, MihRegisterBody, MihStatus, NodeId, ProtocolMessage, SimTime,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MihError {
    #[error("link {0} is not managed by the MIHF")]
    UnknownLink(LinkId),
    #[error("MIHF refused {0}")]
    Refused(MessageKind),
    #[error("unexpected {0} during the handshake")]
    Unexpected(MessageKind),
}

/// A message to send: destination and body.
pub type Outgoing = (NodeId, MessageBody);

#[derive(Debug, Clone, PartialEq, Eq)]
struct LinkEntry {
    technology: String,
    sap: NodeId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct PendingSubscription {
    client: NodeId,
    client_tid: u16,
    link: LinkId,
    events: EventMask,
}

/// The MIH function of one femtocell host.
#[derive(Debug, Clone)]
pub struct Mihf {
    id: NodeId,
    registered: BTreeSet<NodeId>,
    links: BTreeMap<LinkId, LinkEntry>,
    subscriptions: BTreeMap<LinkId, BTreeMap<NodeId, EventMask>>,
    pending: BTreeMap<u16, PendingSubscription>,
    next_tid: u16,
    absorbed: u64,
}

impl Mihf {
    pub fn new(id: NodeId) -> Self {
        Mihf {
            id,
            registered: BTreeSet::new(),
            links: BTreeMap::new(),
            subscriptions: BTreeMap::new(),
            pending: BTreeMap::new(),
            next_tid: 1,
            absorbed: 0,
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn register_link(&mut self, link: LinkId, technology: impl Into<String>, sap: NodeId) {
        self.links.insert(
            link,
            LinkEntry {
                technology: technology.into(),
                sap,
            },
        );
    }

    pub fn subscribers(&self, link: LinkId) -> impl Iterator<Item = (NodeId, EventMask)> + '_ {
        self.subscriptions
            .get(&link)
            .into_iter()
            .flat_map(|m| m.iter().map(|(c, e)| (*c, *e)))
    }

    pub fn subscription_count(&self) -> usize {
        self.subscriptions.values().map(BTreeMap::len).sum()
    }

    /// Link events received with no matching subscriber.
    pub fn absorbed(&self) -> u64 {
        self.absorbed
    }

    pub fn handle(&mut self, src: NodeId, body: &MessageBody) -> Vec<Outgoing> {
        match body {
            MessageBody::MihRegister(b) => {
                self.registered.insert(src);
                vec![(
                    src,
                    MessageBody::MihRegisterAck(MihRegisterAckBody {
                        transaction_id: b.transaction_id,
                        status: MihStatus::Success,
                    }),
                )]
            }
            MessageBody::MihCapabilityDiscoverReq(b) => {
                let links = if self.registered.contains(&src) {
                    self.links
                        .iter()
                        .map(|(id, e)| LinkCapability {
                            link: *id,
                            technology: e.technology.clone(),
                            events: EventMask::UP_DOWN,
                        })
                        .collect()
                } else {
                    Vec::new()
                };
                vec![(
                    src,
                    MessageBody::MihCapabilityDiscoverResp(MihCapabilityDiscoverRespBody {
                        transaction_id: b.transaction_id,
                        links,
                    }),
                )]
            }
            MessageBody::MihEventSubscribeReq(b) => self.subscribe(src, b),
            MessageBody::MihEventSubscribeConfirm(b) => self.confirm(b),
            MessageBody::MihLinkUp(b) => self.relay(b, EventMask::LINK_UP, MessageBody::MihLinkUp),
            MessageBody::MihLinkDown(b) => self.relay(b, EventMask::LINK_DOWN, MessageBody::MihLinkDown),
            _ => Vec::new(),
        }
    }

    fn subscribe(&mut self, client: NodeId, b: &MihEventSubscribeReqBody) -> Vec<Outgoing> {
        let entry = self.links.get(&b.link);
        let Some(entry) = entry.filter(|_| self.registered.contains(&client)) else {
            return vec![(
                client,
                MessageBody::MihEventSubscribeConfirm(MihEventSubscribeConfirmBody {
                    transaction_id: b.transaction_id,
                    link: b.link,
                    events: b.events,
                    status: MihStatus::Rejected,
                }),
            )];
        };
        let sap = entry.sap;
        let tid = self.next_tid;
        self.next_tid = self.next_tid.wrapping_add(1);
        self.pending.insert(
            tid,
            PendingSubscription {
                client,
                client_tid: b.transaction_id,
                link: b.link,
                events: b.events,
            },
        );
        vec![(
            sap,
            MessageBody::MihEventSubscribeReq(MihEventSubscribeReqBody {
                transaction_id: tid,
                link: b.link,
                events: b.events,
            }),
        )]
    }

    fn confirm(&mut self, b: &MihEventSubscribeConfirmBody) -> Vec<Outgoing> {
        let Some(p) = self.pending.remove(&b.transaction_id) else {
            return Vec::new();
        };
        if b.status == MihStatus::Success {
            let mask = self
                .subscriptions
                .entry(p.link)
                .or_default()
                .entry(p.client)
                .or_default();
            *mask = mask.union(p.events);
        }
        vec![(
            p.client,
            MessageBody::MihEventSubscribeConfirm(MihEventSubscribeConfirmBody {
                transaction_id: p.client_tid,
                link: p.link,
                events: p.events,
                status: b.status,
            }),
        )]
    }

    fn relay(
        &mut self,
        b: &MihLinkEventBody,
        event: EventMask,
        wrap: fn(MihLinkEventBody) -> MessageBody,
    ) -> Vec<Outgoing> {
        let out: Vec<Outgoing> = self
            .subscribers(b.link)
            .filter(|(_, mask)| mask.contains(event))
            .map(|(client, _)| (client, wrap(b.clone())))
            .collect();
        if out.is_empty() {
            self.absorbed += 1;
        }
        out
    }
}

/// Media-specific adapter for one access link.
#[derive(Debug, Clone)]
pub struct LinkSap {
    id: NodeId,
    link: LinkId,
    technology: String,
    mihf: NodeId,
    attached: BTreeSet<LinkAddr>,
    enabled: EventMask,
}

impl LinkSap {
    pub fn new(id: NodeId, link: LinkId, technology: impl Into<String>, mihf: NodeId) -> Self {
        LinkSap {
            id,
            link,
            technology: technology.into(),
            mihf,
            attached: BTreeSet::new(),
            enabled: EventMask::default(),
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn link(&self) -> LinkId {
        self.link
    }

    pub fn technology(&self) -> &str {
        &self.technology
    }

    pub fn attached(&self) -> impl Iterator<Item = &LinkAddr> {
        self.attached.iter()
    }

    pub fn handle(&mut self, body: &MessageBody) -> Vec<Outgoing> {
        match body {
            MessageBody::MihEventSubscribeReq(b) => {
                let status = if b.link == self.link {
                    self.enabled = self.enabled.union(b.events);
                    MihStatus::Success
                } else {
                    MihStatus::Failure
                };
                vec![(
                    self.mihf,
                    MessageBody::MihEventSubscribeConfirm(MihEventSubscribeConfirmBody {
                        transaction_id: b.transaction_id,
                        link: b.link,
                        events: b.events,
                        status,
                    }),
                )]
            }
            _ => Vec::new(),
        }
    }

    /// Records an address entering (`up`) or leaving the link. A report is
    /// produced only when the attached set actually changes.
    pub fn report(&mut self, addr: LinkAddr, up: bool) -> Option<Outgoing> {
        let changed = if up {
            self.attached.insert(addr)
        } else {
            self.attached.remove(&addr)
        };
        if !changed {
            return None;
        }
        let body = MihLinkEventBody { link: self.link, addr };
        let body = if up {
            MessageBody::MihLinkUp(body)
        } else {
            MessageBody::MihLinkDown(body)
        };
        Some((self.mihf, body))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HandshakeState {
    Idle,
    AwaitRegisterAck,
    AwaitCapabilities,
    AwaitConfirm,
    Subscribed,
    Failed(MihError),
}

/// Client side of the MIHF handshake for one wanted link.
#[derive(Debug, Clone)]
pub struct MihUser {
    mihf: NodeId,
    link: LinkId,
    events: EventMask,
    state: HandshakeState,
    next_tid: u16,
}

impl MihUser {
    pub fn new(mihf: NodeId, link: LinkId) -> Self {
        MihUser {
            mihf,
            link,
            events: EventMask::UP_DOWN,
            state: HandshakeState::Idle,
            next_tid: 1,
        }
    }

    pub fn mihf(&self) -> NodeId {
        self.mihf
    }

    pub fn link(&self) -> LinkId {
        self.link
    }

    pub fn state(&self) -> &HandshakeState {
        &self.state
    }

    pub fn is_subscribed(&self) -> bool {
        self.state == HandshakeState::Subscribed
    }

    fn tid(&mut self) -> u16 {
        let t = self.next_tid;
        self.next_tid = self.next_tid.wrapping_add(1);
        t
    }

    pub fn start(&mut self) -> Outgoing {
        self.state = HandshakeState::AwaitRegisterAck;
        let transaction_id = self.tid();
        (self.mihf, MessageBody::MihRegister(MihRegisterBody { transaction_id }))
    }

    /// Advances the handshake; returns the next request, if any.
    pub fn handle(&mut self, body: &MessageBody) -> Result<Option<Outgoing>, MihError> {
        let next = match (&self.state, body) {
            (HandshakeState::AwaitRegisterAck, MessageBody::MihRegisterAck(b)) => {
                if b.status != MihStatus::Success {
                    return self.fail(MihError::Refused(MessageKind::MihRegister));
                }
                self.state = HandshakeState::AwaitCapabilities;
                let transaction_id = self.tid();
                MessageBody::MihCapabilityDiscoverReq(MihCapabilityDiscoverReqBody { transaction_id })
            }
            (HandshakeState::AwaitCapabilities, MessageBody::MihCapabilityDiscoverResp(b)) => {
                let offered = b.links.iter().find(|c| c.link == self.link);
                let Some(cap) = offered else {
                    return self.fail(MihError::UnknownLink(self.link));
                };
                self.events = EventMask(cap.events.0 & EventMask::UP_DOWN.0);
                self.state = HandshakeState::AwaitConfirm;
                let transaction_id = self.tid();
                MessageBody::MihEventSubscribeReq(MihEventSubscribeReqBody {
                    transaction_id,
                    link: self.link,
                    events: self.events,
                })
            }
            (HandshakeState::AwaitConfirm, MessageBody::MihEventSubscribeConfirm(b)) => {
                if b.status != MihStatus::Success {
                    return self.fail(MihError::Refused(MessageKind::MihEventSubscribeReq));
                }
                self.state = HandshakeState::Subscribed;
                return Ok(None);
            }
            (_, other) => return Err(MihError::Unexpected(other.kind())),
        };
        Ok(Some((self.mihf, next)))
    }

    fn fail(&mut self, err: MihError) -> Result<Option<Outgoing>, MihError> {
        self.state = HandshakeState::Failed(err.clone());
        Err(err)
    }
}

/// Runs a client handshake against an MIHF and its SAPs with instant
/// delivery, returning every message exchanged in order.
pub fn handshake_in_memory(
    mihf: &mut Mihf,
    saps: &mut [LinkSap],
    client: NodeId,
    wanted: LinkId,
) -> Result<Vec<ProtocolMessage>, MihError> {
    let mut user = MihUser::new(mihf.id(), wanted);
    let mut log = Vec::new();
    let mut queue = std::collections::VecDeque::new();
    let (dst, body) = user.start();
    queue.push_back(ProtocolMessage::new(client, dst, SimTime::ZERO, body));
    while let Some(msg) = queue.pop_front() {
        let replies: Vec<Outgoing> = if msg.dst == client {
            user.handle(&msg.body)?.into_iter().collect()
        } else if msg.dst == mihf.id() {
            mihf.handle(msg.src, &msg.body)
        } else if let Some(sap) = saps.iter_mut().find(|s| s.id() == msg.dst) {
            sap.handle(&msg.body)
        } else {
            Vec::new()
        };
        let from = msg.dst;
        log.push(msg);
        for (dst, body) in replies {
            queue.push_back(ProtocolMessage::new(from, dst, SimTime::ZERO, body));
        }
    }
    Ok(log)
}
