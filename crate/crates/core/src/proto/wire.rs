//! Canonical wire encoding.
//!
//! Layout: one tag byte (the [`MessageKind`]), a big-endian `u16` holding the
//! number of bytes that follow, then the body fields in declaration order,
//! then `src`, `dst` and `sent_at`. Integers are big-endian. Strings and
//! lists carry a `u16` length/count prefix. Prefixes are 16 address octets
//! followed by one length octet. Times are microseconds as `u64`.

use std::net::Ipv6Addr;

use thiserror::Error;

use super::message::*;
use super::time::SimTime;
use super::types::{InterfaceId, LinkAddr, LinkId, MnId, NodeId, Prefix};

const HEADER_LEN: usize = 3;

/// Input that is not the canonical encoding of any message.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MalformedMessage {
    #[error("empty input")]
    Empty,
    #[error("truncated at offset {offset}: {needed} more byte(s) needed")]
    Truncated { offset: usize, needed: usize },
    #[error("unknown message kind tag {0:#04x}")]
    UnknownKind(u8),
    #[error("declared body length {declared} but {actual} byte(s) follow the header")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("invalid {field} at offset {offset}")]
    InvalidField { field: &'static str, offset: usize },
    #[error("{0} unexpected byte(s) after the last field")]
    TrailingBytes(usize),
    #[error("body of {0} bytes exceeds the u16 length field")]
    Oversized(usize),
}

pub fn encode(msg: &ProtocolMessage) -> Vec<u8> {
    try_encode(msg).expect("message body exceeds 65535 bytes")
}

/// Like [`encode`] but reports bodies too large for the length field.
pub fn try_encode(msg: &ProtocolMessage) -> Result<Vec<u8>, MalformedMessage> {
    let mut w = Writer(Vec::with_capacity(64));
    w.u8(msg.kind() as u8);
    w.u16(0);
    match &msg.body {
        MessageBody::Pbu(b) => {
            w.mn_id(&b.mn_id);
            w.interface_id(&b.interface_id);
            w.prefixes(&b.hnp);
            w.u16(b.lifetime);
            w.u16(b.sequence);
        }
        MessageBody::Pba(b) => {
            w.mn_id(&b.mn_id);
            w.interface_id(&b.interface_id);
            w.prefixes(&b.hnp);
            w.u16(b.lifetime);
            w.u16(b.sequence);
            w.u8(b.status as u8);
        }
        MessageBody::RouterAdvertisement(b) => {
            w.interface_id(&b.interface_id);
            w.prefixes(&b.hnp);
            w.u16(b.router_lifetime);
        }
        MessageBody::NeighborSolicitation(b) | MessageBody::NeighborAdvertisement(b) => {
            w.interface_id(&b.target);
        }
        MessageBody::MihRegister(b) => w.u16(b.transaction_id),
        MessageBody::MihRegisterAck(b) => {
            w.u16(b.transaction_id);
            w.u8(b.status as u8);
        }
        MessageBody::MihCapabilityDiscoverReq(b) => w.u16(b.transaction_id),
        MessageBody::MihCapabilityDiscoverResp(b) => {
            w.u16(b.transaction_id);
            w.u16(b.links.len() as u16);
            for cap in &b.links {
                w.u16(cap.link.0);
                w.string(&cap.technology);
                w.u8(cap.events.0);
            }
        }
        MessageBody::MihEventSubscribeReq(b) => {
            w.u16(b.transaction_id);
            w.u16(b.link.0);
            w.u8(b.events.0);
        }
        MessageBody::MihEventSubscribeConfirm(b) => {
            w.u16(b.transaction_id);
            w.u16(b.link.0);
            w.u8(b.events.0);
            w.u8(b.status as u8);
        }
        MessageBody::MihLinkUp(b) | MessageBody::MihLinkDown(b) => {
            w.u16(b.link.0);
            w.bytes(&b.addr.0);
        }
        MessageBody::AaaRequest(b) => w.interface_id(&b.interface_id),
        MessageBody::AaaResponse(b) => {
            w.interface_id(&b.interface_id);
            w.u8(u8::from(b.authorized));
            w.string(b.mn_id.as_ref().map_or("", MnId::as_str));
            w.prefixes(&b.hnp);
        }
    }
    w.u16(msg.src.0);
    w.u16(msg.dst.0);
    w.u64(msg.sent_at.as_us());

    let mut out = w.0;
    let body_len = out.len() - HEADER_LEN;
    let len = u16::try_from(body_len).map_err(|_| MalformedMessage::Oversized(body_len))?;
    out[1..3].copy_from_slice(&len.to_be_bytes());
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<ProtocolMessage, MalformedMessage> {
    if bytes.is_empty() {
        return Err(MalformedMessage::Empty);
    }
    let tag = bytes[0];
    let kind = MessageKind::from_tag(tag).ok_or(MalformedMessage::UnknownKind(tag))?;
    if bytes.len() < HEADER_LEN {
        return Err(MalformedMessage::Truncated {
            offset: bytes.len(),
            needed: HEADER_LEN - bytes.len(),
        });
    }
    let declared = usize::from(u16::from_be_bytes([bytes[1], bytes[2]]));
    let actual = bytes.len() - HEADER_LEN;
    if declared != actual {
        return Err(MalformedMessage::LengthMismatch { declared, actual });
    }

    let mut r = Reader {
        buf: bytes,
        pos: HEADER_LEN,
    };
    let body = match kind {
        MessageKind::Pbu => MessageBody::Pbu(PbuBody {
            mn_id: r.mn_id()?,
            interface_id: r.interface_id()?,
            hnp: r.prefixes()?,
            lifetime: r.u16()?,
            sequence: r.u16()?,
        }),
        MessageKind::Pba => MessageBody::Pba(PbaBody {
            mn_id: r.mn_id()?,
            interface_id: r.interface_id()?,
            hnp: r.prefixes()?,
            lifetime: r.u16()?,
            sequence: r.u16()?,
            status: {
                let at = r.pos;
                PbaStatus::from_code(r.u8()?).ok_or(MalformedMessage::InvalidField {
                    field: "PBA status",
                    offset: at,
                })?
            },
        }),
        MessageKind::RouterAdvertisement => MessageBody::RouterAdvertisement(RouterAdvertisementBody {
            interface_id: r.interface_id()?,
            hnp: r.prefixes()?,
            router_lifetime: r.u16()?,
        }),
        MessageKind::NeighborSolicitation => MessageBody::NeighborSolicitation(NeighborBody {
            target: r.interface_id()?,
        }),
        MessageKind::NeighborAdvertisement => MessageBody::NeighborAdvertisement(NeighborBody {
            target: r.interface_id()?,
        }),
        MessageKind::MihRegister => MessageBody::MihRegister(MihRegisterBody {
            transaction_id: r.u16()?,
        }),
        MessageKind::MihRegisterAck => MessageBody::MihRegisterAck(MihRegisterAckBody {
            transaction_id: r.u16()?,
            status: r.mih_status()?,
        }),
        MessageKind::MihCapabilityDiscoverReq => MessageBody::MihCapabilityDiscoverReq(MihCapabilityDiscoverReqBody {
            transaction_id: r.u16()?,
        }),
        MessageKind::MihCapabilityDiscoverResp => {
            let transaction_id = r.u16()?;
            let count = r.u16()?;
            let mut links = Vec::with_capacity(usize::from(count).min(64));
            for _ in 0..count {
                links.push(LinkCapability {
                    link: LinkId(r.u16()?),
                    technology: r.string("technology")?,
                    events: EventMask(r.u8()?),
                });
            }
            MessageBody::MihCapabilityDiscoverResp(MihCapabilityDiscoverRespBody { transaction_id, links })
        }
        MessageKind::MihEventSubscribeReq => MessageBody::MihEventSubscribeReq(MihEventSubscribeReqBody {
            transaction_id: r.u16()?,
            link: LinkId(r.u16()?),
            events: EventMask(r.u8()?),
        }),
        MessageKind::MihEventSubscribeConfirm => MessageBody::MihEventSubscribeConfirm(MihEventSubscribeConfirmBody {
            transaction_id: r.u16()?,
            link: LinkId(r.u16()?),
            events: EventMask(r.u8()?),
            status: r.mih_status()?,
        }),
        MessageKind::MihLinkUp => MessageBody::MihLinkUp(r.link_event()?),
        MessageKind::MihLinkDown => MessageBody::MihLinkDown(r.link_event()?),
        MessageKind::AaaRequest => MessageBody::AaaRequest(AaaRequestBody {
            interface_id: r.interface_id()?,
        }),
        MessageKind::AaaResponse => {
            let interface_id = r.interface_id()?;
            let at = r.pos;
            let authorized = match r.u8()? {
                0 => false,
                1 => true,
                _ => {
                    return Err(MalformedMessage::InvalidField {
                        field: "authorization flag",
                        offset: at,
                    })
                }
            };
            let name = r.string("MN identifier")?;
            let mn_id = if name.is_empty() {
                None
            } else {
                Some(MnId::new(name).expect("non-empty"))
            };
            MessageBody::AaaResponse(AaaResponseBody {
                interface_id,
                authorized,
                mn_id,
                hnp: r.prefixes()?,
            })
        }
    };
    let src = NodeId(r.u16()?);
    let dst = NodeId(r.u16()?);
    let sent_at = SimTime::from_us(r.u64()?);
    let rest = bytes.len() - r.pos;
    if rest != 0 {
        return Err(MalformedMessage::TrailingBytes(rest));
    }
    Ok(ProtocolMessage {
        body,
        src,
        dst,
        sent_at,
    })
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn bytes(&mut self, v: &[u8]) {
        self.0.extend_from_slice(v);
    }
    fn string(&mut self, s: &str) {
        self.u16(s.len() as u16);
        self.bytes(s.as_bytes());
    }
    fn mn_id(&mut self, id: &MnId) {
        self.string(id.as_str());
    }
    fn interface_id(&mut self, id: &InterfaceId) {
        self.bytes(&id.0);
    }
    fn prefixes(&mut self, list: &[Prefix]) {
        self.u16(list.len() as u16);
        for p in list {
            self.bytes(&p.addr().octets());
            self.u8(p.len());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], MalformedMessage> {
        let available = self.buf.len() - self.pos;
        if available < n {
            return Err(MalformedMessage::Truncated {
                offset: self.buf.len(),
                needed: n - available,
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, MalformedMessage> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, MalformedMessage> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u64(&mut self) -> Result<u64, MalformedMessage> {
        let b = self.take(8)?;
        Ok(u64::from_be_bytes(b.try_into().expect("8 bytes")))
    }

    fn string(&mut self, field: &'static str) -> Result<String, MalformedMessage> {
        let at = self.pos;
        let len = usize::from(self.u16()?);
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| MalformedMessage::InvalidField { field, offset: at })
    }

    fn mn_id(&mut self) -> Result<MnId, MalformedMessage> {
        let at = self.pos;
        let s = self.string("MN identifier")?;
        MnId::new(s).map_err(|_| MalformedMessage::InvalidField {
            field: "MN identifier",
            offset: at,
        })
    }

    fn interface_id(&mut self) -> Result<InterfaceId, MalformedMessage> {
        Ok(InterfaceId(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn prefixes(&mut self) -> Result<Vec<Prefix>, MalformedMessage> {
        let count = usize::from(self.u16()?);
        let mut out = Vec::with_capacity(count.min(16));
        for _ in 0..count {
            let at = self.pos;
            let octets: [u8; 16] = self.take(16)?.try_into().expect("16 bytes");
            let len = self.u8()?;
            let p = Prefix::new(Ipv6Addr::from(octets), len).map_err(|_| MalformedMessage::InvalidField {
                field: "prefix",
                offset: at,
            })?;
            out.push(p);
        }
        Ok(out)
    }

    fn mih_status(&mut self) -> Result<MihStatus, MalformedMessage> {
        let at = self.pos;
        MihStatus::from_code(self.u8()?).ok_or(MalformedMessage::InvalidField {
            field: "MIH status",
            offset: at,
        })
    }

    fn link_event(&mut self) -> Result<MihLinkEventBody, MalformedMessage> {
        Ok(MihLinkEventBody {
            link: LinkId(self.u16()?),
            addr: LinkAddr(self.take(6)?.try_into().expect("6 bytes")),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pbu(lifetime: u16) -> ProtocolMessage {
        ProtocolMessage::new(
            NodeId(3),
            NodeId(0),
            SimTime::from_ms(150),
            MessageBody::Pbu(PbuBody {
                mn_id: MnId::new("mn1@example.org").unwrap(),
                interface_id: InterfaceId([2, 0x11, 0x22, 0xff, 0xfe, 0x33, 0x44, 0x55]),
                hnp: vec!["2001:db8:1:1::/64".parse().unwrap()],
                lifetime,
                sequence: 7,
            }),
        )
    }

    #[test]
    fn pba_round_trips() {
        let msg = ProtocolMessage::new(
            NodeId(0),
            NodeId(3),
            SimTime::from_us(12),
            MessageBody::Pba(PbaBody {
                mn_id: MnId::new("a@b").unwrap(),
                interface_id: InterfaceId([1; 8]),
                hnp: vec![],
                lifetime: 0,
                sequence: 65535,
                status: PbaStatus::Success,
            }),
        );
        assert_eq!(decode(&encode(&msg)).unwrap(), msg);
    }

    #[test]
    fn deregistration_lifetime_is_two_zero_octets() {
        let bytes = encode(&pbu(0));
        // header(3) + name(2+15) + iface(8) + count(2) + prefix(17)
        let at = 3 + 2 + 15 + 8 + 2 + 17;
        assert_eq!(&bytes[at..at + 2], &[0, 0]);
        assert_eq!(&bytes[at + 2..at + 4], &[0, 7]);
        let live = encode(&pbu(300));
        assert_eq!(&live[at..at + 2], &300u16.to_be_bytes());
    }

    #[test]
    fn header_carries_tag_and_body_length() {
        let bytes = encode(&pbu(300));
        assert_eq!(bytes[0], MessageKind::Pbu as u8);
        let len = u16::from_be_bytes([bytes[1], bytes[2]]) as usize;
        assert_eq!(len, bytes.len() - 3);
    }

    #[test]
    fn empty_input_is_malformed() {
        assert_eq!(decode(&[]), Err(MalformedMessage::Empty));
    }

    #[test]
    fn corrupted_tag_is_unknown_kind() {
        let mut bytes = encode(&pbu(300));
        bytes[0] = 0xff;
        assert_eq!(decode(&bytes), Err(MalformedMessage::UnknownKind(0xff)));
    }

    #[test]
    fn bad_status_code_is_rejected() {
        let msg = ProtocolMessage::new(
            NodeId(0),
            NodeId(1),
            SimTime::ZERO,
            MessageBody::MihRegisterAck(MihRegisterAckBody {
                transaction_id: 1,
                status: MihStatus::Success,
            }),
        );
        let mut bytes = encode(&msg);
        bytes[5] = 9;
        assert!(matches!(
            decode(&bytes),
            Err(MalformedMessage::InvalidField {
                field: "MIH status",
                ..
            })
        ));
    }

    #[test]
    fn inflated_length_with_padding_is_trailing_bytes() {
        let mut bytes = encode(&pbu(300));
        bytes.push(0);
        let len = (bytes.len() - 3) as u16;
        bytes[1..3].copy_from_slice(&len.to_be_bytes());
        assert_eq!(decode(&bytes), Err(MalformedMessage::TrailingBytes(1)));
    }
}
