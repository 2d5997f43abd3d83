//! Control-plane messages exchanged between MIHF, Link SAPs, MAGs, the AAA
//! server, the LMA and mobile nodes.

use std::fmt;

use super::time::SimTime;
use super::types::{InterfaceId, LinkAddr, LinkId, MnId, NodeId, Prefix};

/// One-byte discriminant of every message on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum MessageKind {
    Pbu = 1,
    Pba = 2,
    RouterAdvertisement = 3,
    NeighborSolicitation = 4,
    NeighborAdvertisement = 5,
    MihRegister = 6,
    MihRegisterAck = 7,
    MihCapabilityDiscoverReq = 8,
    MihCapabilityDiscoverResp = 9,
    MihEventSubscribeReq = 10,
    MihEventSubscribeConfirm = 11,
    MihLinkUp = 12,
    MihLinkDown = 13,
    AaaRequest = 14,
    AaaResponse = 15,
}

impl MessageKind {
    pub const ALL: [MessageKind; 15] = [
        MessageKind::Pbu,
        MessageKind::Pba,
        MessageKind::RouterAdvertisement,
        MessageKind::NeighborSolicitation,
        MessageKind::NeighborAdvertisement,
        MessageKind::MihRegister,
        MessageKind::MihRegisterAck,
        MessageKind::MihCapabilityDiscoverReq,
        MessageKind::MihCapabilityDiscoverResp,
        MessageKind::MihEventSubscribeReq,
        MessageKind::MihEventSubscribeConfirm,
        MessageKind::MihLinkUp,
        MessageKind::MihLinkDown,
        MessageKind::AaaRequest,
        MessageKind::AaaResponse,
    ];

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.iter().copied().find(|k| *k as u8 == tag)
    }

    pub fn name(self) -> &'static str {
        match self {
            MessageKind::Pbu => "PBU",
            MessageKind::Pba => "PBA",
            MessageKind::RouterAdvertisement => "RA",
            MessageKind::NeighborSolicitation => "NS",
            MessageKind::NeighborAdvertisement => "NA",
            MessageKind::MihRegister => "MIH_Register.req",
            MessageKind::MihRegisterAck => "MIH_Register.ack",
            MessageKind::MihCapabilityDiscoverReq => "MIH_Capability_Discover.req",
            MessageKind::MihCapabilityDiscoverResp => "MIH_Capability_Discover.resp",
            MessageKind::MihEventSubscribeReq => "MIH_Event_Subscribe.req",
            MessageKind::MihEventSubscribeConfirm => "MIH_Event_Subscribe.cnf",
            MessageKind::MihLinkUp => "MIH_Link_Up.ind",
            MessageKind::MihLinkDown => "MIH_Link_Down.ind",
            MessageKind::AaaRequest => "AAA.req",
            MessageKind::AaaResponse => "AAA.resp",
        }
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Status carried by a Proxy Binding Acknowledgement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum PbaStatus {
    Success = 0,
    ErrorAdminProhibited = 129,
    ErrorNoResources = 130,
}

impl PbaStatus {
    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(PbaStatus::Success),
            129 => Some(PbaStatus::ErrorAdminProhibited),
            130 => Some(PbaStatus::ErrorNoResources),
            _ => None,
        }
    }

    pub fn is_success(self) -> bool {
        self == PbaStatus::Success
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PbuBody {
    pub mn_id: MnId,
    pub interface_id: InterfaceId,
    pub hnp: Vec<Prefix>,
    /// Seconds; zero deregisters.
    pub lifetime: u16,
    pub sequence: u16,
}

impl PbuBody {
    pub fn is_deregistration(&self) -> bool {
        self.lifetime == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PbaBody {
    pub mn_id: MnId,
    pub interface_id: InterfaceId,
    pub hnp: Vec<Prefix>,
    pub lifetime: u16,
    /// Sequence of the PBU being answered.
    pub sequence: u16,
    pub status: PbaStatus,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RouterAdvertisementBody {
    pub interface_id: InterfaceId,
    pub hnp: Vec<Prefix>,
    pub router_lifetime: u16,
}

/// Body shared by neighbour solicitations and advertisements.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborBody {
    pub target: InterfaceId,
}

/// Bit set of MIH link events.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventMask(pub u8);

impl EventMask {
    pub const LINK_UP: EventMask = EventMask(0x01);
    pub const LINK_DOWN: EventMask = EventMask(0x02);
    /// Reserved for predictive link-going-down; never emitted.
    pub const LINK_GOING_DOWN: EventMask = EventMask(0x04);
    pub const UP_DOWN: EventMask = EventMask(0x03);

    pub fn contains(self, other: EventMask) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn union(self, other: EventMask) -> EventMask {
        EventMask(self.0 | other.0)
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }
}

/// Generic MIH primitive status.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum MihStatus {
    Success = 0,
    Failure = 1,
    Rejected = 2,
}

impl MihStatus {
    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(MihStatus::Success),
            1 => Some(MihStatus::Failure),
            2 => Some(MihStatus::Rejected),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MihRegisterBody {
    pub transaction_id: u16,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MihRegisterAckBody {
    pub transaction_id: u16,
    pub status: MihStatus,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MihCapabilityDiscoverReqBody {
    pub transaction_id: u16,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkCapability {
    pub link: LinkId,
    pub technology: String,
    pub events: EventMask,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MihCapabilityDiscoverRespBody {
    pub transaction_id: u16,
    pub links: Vec<LinkCapability>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MihEventSubscribeReqBody {
    pub transaction_id: u16,
    pub link: LinkId,
    pub events: EventMask,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MihEventSubscribeConfirmBody {
    pub transaction_id: u16,
    pub link: LinkId,
    pub events: EventMask,
    pub status: MihStatus,
}

/// Link up / link down indication for one attached address.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MihLinkEventBody {
    pub link: LinkId,
    pub addr: LinkAddr,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AaaRequestBody {
    pub interface_id: InterfaceId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AaaResponseBody {
    pub interface_id: InterfaceId,
    pub authorized: bool,
    /// Absent when the request is rejected.
    pub mn_id: Option<MnId>,
    pub hnp: Vec<Prefix>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MessageBody {
    Pbu(PbuBody),
    Pba(PbaBody),
    RouterAdvertisement(RouterAdvertisementBody),
    NeighborSolicitation(NeighborBody),
    NeighborAdvertisement(NeighborBody),
    MihRegister(MihRegisterBody),
    MihRegisterAck(MihRegisterAckBody),
    MihCapabilityDiscoverReq(MihCapabilityDiscoverReqBody),
    MihCapabilityDiscoverResp(MihCapabilityDiscoverRespBody),
    MihEventSubscribeReq(MihEventSubscribeReqBody),
    MihEventSubscribeConfirm(MihEventSubscribeConfirmBody),
    MihLinkUp(MihLinkEventBody),
    MihLinkDown(MihLinkEventBody),
    AaaRequest(AaaRequestBody),
    AaaResponse(AaaResponseBody),
}

impl MessageBody {
    pub fn kind(&self) -> MessageKind {
        match self {
            MessageBody::Pbu(_) => MessageKind::Pbu,
            MessageBody::Pba(_) => MessageKind::Pba,
            MessageBody::RouterAdvertisement(_) => MessageKind::RouterAdvertisement,
            MessageBody::NeighborSolicitation(_) => MessageKind::NeighborSolicitation,
            MessageBody::NeighborAdvertisement(_) => MessageKind::NeighborAdvertisement,
            MessageBody::MihRegister(_) => MessageKind::MihRegister,
            MessageBody::MihRegisterAck(_) => MessageKind::MihRegisterAck,
            MessageBody::MihCapabilityDiscoverReq(_) => MessageKind::MihCapabilityDiscoverReq,
            MessageBody::MihCapabilityDiscoverResp(_) => MessageKind::MihCapabilityDiscoverResp,
            MessageBody::MihEventSubscribeReq(_) => MessageKind::MihEventSubscribeReq,
            MessageBody::MihEventSubscribeConfirm(_) => MessageKind::MihEventSubscribeConfirm,
            MessageBody::MihLinkUp(_) => MessageKind::MihLinkUp,
            MessageBody::MihLinkDown(_) => MessageKind::MihLinkDown,
            MessageBody::AaaRequest(_) => MessageKind::AaaRequest,
            MessageBody::AaaResponse(_) => MessageKind::AaaResponse,
        }
    }
}

/// A control message in flight between two nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtocolMessage {
    pub body: MessageBody,
    pub src: NodeId,
    pub dst: NodeId,
    pub sent_at: SimTime,
}

impl ProtocolMessage {
    pub fn new(src: NodeId, dst: NodeId, sent_at: SimTime, body: MessageBody) -> Self {
        ProtocolMessage {
            body,
            src,
            dst,
            sent_at,
        }
    }

    pub fn kind(&self) -> MessageKind {
        self.body.kind()
    }
}
