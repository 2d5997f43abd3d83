use super::*;
use crate::proto::{
    EventMask, LinkCapability, MessageKind, MihCapabilityDiscoverRespBody, MihEventSubscribeConfirmBody,
    MihLinkEventBody, MihRegisterAckBody, MihStatus, PbaStatus,
};

const MAG: NodeId = NodeId(1);
const LMA: NodeId = NodeId(0);
const AAA: NodeId = NodeId(5);
const MIHF: NodeId = NodeId(6);
const LINK: LinkId = LinkId(0);

fn addr(i: u8) -> LinkAddr {
    LinkAddr([0x00, 0x11, 0x22, 0x33, 0x44, i])
}

fn prefix(i: u8) -> Prefix {
    format!("2001:db8:1:{i:x}::/64").parse().unwrap()
}

fn mn(i: u8) -> MnId {
    MnId::new(format!("mn{i}@example.org")).unwrap()
}

fn sends(out: &[MagOutput]) -> Vec<MessageKind> {
    out.iter()
        .filter_map(|o| match o {
            MagOutput::Send { body, .. } | MagOutput::SendToMn { body, .. } => Some(body.kind()),
            _ => None,
        })
        .collect()
}

fn subscribed(config: MagConfig) -> Mag {
    let mut m = Mag::new(MAG, LMA, AAA, MIHF, LINK, config, CostModel::default());
    m.start();
    let t = SimTime::ZERO;
    m.handle_message(
        MIHF,
        &MessageBody::MihRegisterAck(MihRegisterAckBody {
            transaction_id: 1,
            status: MihStatus::Success,
        }),
        t,
    );
    m.handle_message(
        MIHF,
        &MessageBody::MihCapabilityDiscoverResp(MihCapabilityDiscoverRespBody {
            transaction_id: 2,
            links: vec![LinkCapability {
                link: LINK,
                technology: "wifi-2.4".into(),
                events: EventMask::UP_DOWN,
            }],
        }),
        t,
    );
    m.handle_message(
        MIHF,
        &MessageBody::MihEventSubscribeConfirm(MihEventSubscribeConfirmBody {
            transaction_id: 3,
            link: LINK,
            events: EventMask::UP_DOWN,
            status: MihStatus::Success,
        }),
        t,
    );
    assert!(m.mih().is_subscribed());
    m.take_output();
    m
}

fn link_event(up: bool, i: u8) -> MessageBody {
    let b = MihLinkEventBody {
        link: LINK,
        addr: addr(i),
    };
    if up {
        MessageBody::MihLinkUp(b)
    } else {
        MessageBody::MihLinkDown(b)
    }
}

fn aaa_ok(i: u8) -> MessageBody {
    MessageBody::AaaResponse(AaaResponseBody {
        interface_id: eui64_from_link_addr(addr(i)),
        authorized: true,
        mn_id: Some(mn(i)),
        hnp: vec![prefix(i)],
    })
}

fn last_pbu(out: &[MagOutput]) -> PbuBody {
    out.iter()
        .rev()
        .find_map(|o| match o {
            MagOutput::Send {
                body: MessageBody::Pbu(b),
                ..
            } => Some(b.clone()),
            _ => None,
        })
        .expect("a PBU was sent")
}

fn pba_for(pbu: &PbuBody, status: PbaStatus) -> MessageBody {
    MessageBody::Pba(PbaBody {
        mn_id: pbu.mn_id.clone(),
        interface_id: pbu.interface_id,
        hnp: pbu.hnp.clone(),
        lifetime: if status.is_success() { pbu.lifetime } else { 0 },
        sequence: pbu.sequence,
        status,
    })
}

/// Runs attachment through PBA success and returns the registering PBU.
fn register(m: &mut Mag, i: u8, now: SimTime) -> PbuBody {
    m.handle_message(MIHF, &link_event(true, i), now);
    m.handle_message(AAA, &aaa_ok(i), now);
    let pbu = last_pbu(&m.take_output());
    m.handle_message(LMA, &pba_for(&pbu, PbaStatus::Success), now);
    m.take_output();
    pbu
}

#[test]
fn link_up_queries_aaa_then_sends_pbu() {
    let mut m = subscribed(MagConfig::default());
    m.handle_message(MIHF, &link_event(true, 1), SimTime::ZERO);
    let out = m.take_output();
    assert_eq!(sends(&out), vec![MessageKind::AaaRequest]);
    m.handle_message(AAA, &aaa_ok(1), SimTime::ZERO);
    let out = m.take_output();
    assert_eq!(sends(&out), vec![MessageKind::Pbu]);
    let pbu = last_pbu(&out);
    assert_eq!(pbu.mn_id, mn(1));
    assert_eq!(pbu.lifetime, 300);
    let e = m.entry(&eui64_from_link_addr(addr(1))).unwrap();
    assert_eq!(e.status, EntryStatus::Temporary);
}

#[test]
fn pba_success_makes_entry_permanent_and_advertises_prefix() {
    let mut m = subscribed(MagConfig::default());
    m.handle_message(MIHF, &link_event(true, 1), SimTime::ZERO);
    m.handle_message(AAA, &aaa_ok(1), SimTime::ZERO);
    let pbu = last_pbu(&m.take_output());
    m.handle_message(LMA, &pba_for(&pbu, PbaStatus::Success), SimTime::ZERO);
    let out = m.take_output();
    let ra = out
        .iter()
        .find_map(|o| match o {
            MagOutput::SendToMn {
                addr: a,
                body: MessageBody::RouterAdvertisement(b),
            } => Some((*a, b.clone())),
            _ => None,
        })
        .unwrap();
    assert_eq!(ra.0, addr(1));
    assert_eq!(ra.1.hnp, vec![prefix(1)]);
    let e = m.entry(&pbu.interface_id).unwrap();
    assert_eq!(e.status, EntryStatus::Permanent);
}

#[test]
fn spurious_link_down_is_an_anomaly() {
    let mut m = subscribed(MagConfig::default());
    m.handle_message(MIHF, &link_event(false, 9), SimTime::ZERO);
    let out = m.take_output();
    assert!(sends(&out).is_empty());
    assert_eq!(m.stats().anomalies, 1);
}

#[test]
fn aaa_denial_sends_no_pbu() {
    let mut m = subscribed(MagConfig::default());
    m.handle_message(MIHF, &link_event(true, 1), SimTime::ZERO);
    let denied = MessageBody::AaaResponse(AaaResponseBody {
        interface_id: eui64_from_link_addr(addr(1)),
        authorized: false,
        mn_id: None,
        hnp: vec![],
    });
    m.take_output();
    m.handle_message(AAA, &denied, SimTime::ZERO);
    assert!(sends(&m.take_output()).is_empty());
    assert_eq!(m.stats().rejected, 1);
    assert_eq!(m.entries().count(), 0);
}

#[test]
fn pba_error_deletes_temporary_entry() {
    let mut m = subscribed(MagConfig::default());
    m.handle_message(MIHF, &link_event(true, 1), SimTime::ZERO);
    m.handle_message(AAA, &aaa_ok(1), SimTime::ZERO);
    let pbu = last_pbu(&m.take_output());
    m.handle_message(LMA, &pba_for(&pbu, PbaStatus::ErrorAdminProhibited), SimTime::ZERO);
    assert_eq!(m.entries().count(), 0);
    assert!(sends(&m.take_output()).is_empty());
}

#[test]
fn pba_for_unknown_entry_is_dropped() {
    let mut m = subscribed(MagConfig::default());
    let ghost = PbuBody {
        mn_id: mn(4),
        interface_id: eui64_from_link_addr(addr(4)),
        hnp: vec![prefix(4)],
        lifetime: 300,
        sequence: 9,
    };
    m.handle_message(LMA, &pba_for(&ghost, PbaStatus::Success), SimTime::ZERO);
    assert_eq!(m.stats().anomalies, 1);
    assert_eq!(m.entries().count(), 0);
}

#[test]
fn temporary_entry_dies_at_pba_timeout() {
    let mut m = subscribed(MagConfig::default());
    m.handle_message(MIHF, &link_event(true, 1), SimTime::ZERO);
    m.handle_message(AAA, &aaa_ok(1), SimTime::ZERO);
    let out = m.take_output();
    let (id, seq, at) = out
        .iter()
        .find_map(|o| match o {
            MagOutput::ArmPbaTimeout {
                interface_id,
                sequence,
                at,
            } => Some((*interface_id, *sequence, *at)),
            _ => None,
        })
        .unwrap();
    assert_eq!(at, SimTime::from_secs(1));
    m.pba_timeout(id, seq, at);
    assert!(m.entry(&id).is_none());
}

#[test]
fn detachment_sends_deregistration() {
    let mut m = subscribed(MagConfig::default());
    let pbu = register(&mut m, 1, SimTime::ZERO);
    m.handle_message(MIHF, &link_event(false, 1), SimTime::from_ms(10));
    let out = m.take_output();
    let dereg = last_pbu(&out);
    assert_eq!(dereg.lifetime, 0);
    assert_eq!(dereg.interface_id, pbu.interface_id);
    assert!(m.entry(&pbu.interface_id).is_none());
}

#[test]
fn second_attachment_reruns_registration() {
    let mut m = subscribed(MagConfig::default());
    register(&mut m, 1, SimTime::ZERO);
    m.handle_message(MIHF, &link_event(true, 1), SimTime::from_ms(5));
    assert_eq!(sends(&m.take_output()), vec![MessageKind::AaaRequest]);
    assert_eq!(m.stats().anomalies, 1);
}

fn short_lifetime() -> MagConfig {
    MagConfig {
        lifetime_s: 10,
        ..MagConfig::default()
    }
}

/// Ticks every second until `until`, answering solicitations for the
/// responsive interfaces and confirming renewals.
fn run_ticks(m: &mut Mag, responsive: &[u8], until: SimTime) {
    let mut now = SimTime::ZERO;
    let mut timeouts: Vec<(SimTime, MnId)> = Vec::new();
    while now <= until {
        m.lifetime_tick(now);
        for (at, who) in std::mem::take(&mut timeouts) {
            if at <= now {
                m.probe_timeout(&who, now);
            } else {
                timeouts.push((at, who));
            }
        }
        let out = m.take_output();
        for o in out {
            match o {
                MagOutput::SendToMn {
                    addr: a,
                    body: MessageBody::NeighborSolicitation(ns),
                } => {
                    if responsive.contains(&a.0[5]) {
                        m.handle_message(
                            NodeId(100 + u16::from(a.0[5])),
                            &MessageBody::NeighborAdvertisement(NeighborBody { target: ns.target }),
                            now,
                        );
                        let renewal = last_pbu(&m.take_output());
                        m.handle_message(LMA, &pba_for(&renewal, PbaStatus::Success), now);
                        m.take_output();
                    }
                }
                MagOutput::ArmProbeTimeout { mn_id, at } => timeouts.push((at, mn_id)),
                _ => {}
            }
        }
        now += SimTime::from_secs(1);
    }
}

#[test]
fn responsive_node_is_renewed() {
    let mut m = subscribed(short_lifetime());
    let pbu = register(&mut m, 1, SimTime::ZERO);
    run_ticks(&mut m, &[1], SimTime::from_secs(6));
    let e = m.entry(&pbu.interface_id).unwrap();
    assert_eq!(e.status, EntryStatus::Permanent);
    assert_eq!(m.stats().renewals, 1);
    assert_eq!(e.lifetime_expires_at, SimTime::from_secs(15));
}

#[test]
fn silent_node_is_deregistered_after_retry() {
    let mut m = subscribed(short_lifetime());
    let pbu = register(&mut m, 1, SimTime::ZERO);
    run_ticks(&mut m, &[], SimTime::from_secs(8));
    assert!(m.entry(&pbu.interface_id).is_none());
    assert_eq!(m.stats().silent_detachments, 1);
}

#[test]
fn ten_nodes_three_silent() {
    let mut m = subscribed(short_lifetime());
    for i in 1..=10 {
        register(&mut m, i, SimTime::ZERO);
    }
    let responsive: Vec<u8> = (1..=10).filter(|i| ![2, 5, 9].contains(i)).collect();
    // one lifetime period: renewed entries next enter the window at t = 10 s
    run_ticks(&mut m, &responsive, SimTime::from_secs(9));
    assert_eq!(m.stats().silent_detachments, 3);
    assert_eq!(m.stats().deregistrations, 3);
    assert_eq!(m.stats().renewals, 7);
    assert_eq!(m.entries().count(), 7);
}

#[test]
fn downlink_uses_matching_entry_with_flat_cost() {
    let mut m = subscribed(MagConfig::default());
    register(&mut m, 1, SimTime::ZERO);
    register(&mut m, 2, SimTime::ZERO);
    let hit = m.forward_downlink(&prefix(2).host(7)).unwrap();
    assert_eq!(hit.addr, addr(2));
    assert_eq!(hit.cost, CostModel::default().mag_forward);
    let again = m.forward_downlink(&prefix(1).host(7)).unwrap();
    assert_eq!(again.cost, hit.cost);
}

#[test]
fn downlink_after_detach_is_dropped() {
    let mut m = subscribed(MagConfig::default());
    register(&mut m, 1, SimTime::ZERO);
    m.handle_message(MIHF, &link_event(false, 1), SimTime::ZERO);
    assert!(m.forward_downlink(&prefix(1).host(1)).is_none());
    assert_eq!(m.stats().dropped_no_entry, 1);
}

#[test]
fn renewal_margin_is_capped_at_half_the_lifetime() {
    let c = MagConfig::default();
    assert_eq!(c.margin_for(300), SimTime::from_secs(30));
    assert_eq!(c.margin_for(10), SimTime::from_secs(5));
}
