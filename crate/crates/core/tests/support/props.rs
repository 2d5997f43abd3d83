//! Randomized protocol properties shared by the property tests and the
//! acceptance binary.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Debug;
use std::net::Ipv6Addr;

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};

use flowmob::cost::CostModel;
use flowmob::harness::{measure_handover, parse_scenario};
use flowmob::lma::{Forwarded, Lma, LmaConfig, LmaEffect, MmmAction, SchedulerPolicy};
use flowmob::mag::{EntryStatus, Mag, MagConfig, MagOutput};
use flowmob::netsim;
use flowmob::proto::*;

pub const CASES: u32 = 1000;

pub struct Property {
    pub name: &'static str,
    pub run: fn(u32) -> Result<(), String>,
}

pub fn all() -> Vec<Property> {
    vec![
        Property {
            name: "bce-uniqueness",
            run: bce_uniqueness,
        },
        Property {
            name: "divert-once",
            run: divert_once,
        },
        Property {
            name: "temporary-entry-lifecycle",
            run: temporary_entry_lifecycle,
        },
        Property {
            name: "idempotent-delete",
            run: idempotent_delete,
        },
        Property {
            name: "codec-round-trip",
            run: codec_round_trip,
        },
        Property {
            name: "eui64-injectivity",
            run: eui64_injectivity,
        },
        Property {
            name: "simulation-invariants",
            run: simulation_invariants,
        },
        Property {
            name: "handover-estimate-bound",
            run: handover_estimate_bound,
        },
    ]
}

/// Runs `cases` deterministic cases of `test` over `strategy`.
pub fn check<S, F>(cases: u32, strategy: S, test: F) -> Result<(), String>
where
    S: Strategy,
    S::Value: Debug,
    F: Fn(S::Value) -> Result<(), TestCaseError>,
{
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    let mut runner = TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

fn mn(m: u8) -> MnId {
    MnId::new(format!("mn{m}@example.org")).unwrap()
}

fn iface(m: u8, i: u8) -> InterfaceId {
    InterfaceId([0x02, m, 0, 0xff, 0xfe, 0, 0, i])
}

fn home(m: u8, i: u8) -> Prefix {
    format!("2001:db8:{m:x}:{i:x}::/64").parse().unwrap()
}

fn pbu(m: u8, i: u8, lifetime: u16) -> PbuBody {
    PbuBody {
        mn_id: mn(m),
        interface_id: iface(m, i),
        hnp: vec![home(m, i)],
        lifetime,
        sequence: 1,
    }
}

fn lma() -> Lma {
    Lma::new(
        NodeId(0),
        LmaConfig::default(),
        CostModel::default(),
        SchedulerPolicy::default(),
    )
}

/// Registrations and deregistrations from several MAGs never leave two
/// bindings for one interface, and every prefix resolves to one binding.
pub fn bce_uniqueness(cases: u32) -> Result<(), String> {
    let op = (any::<bool>(), 0u8..3, 0u8..3, 1u16..5);
    check(cases, prop::collection::vec(op, 1..40), |ops| {
        let mut l = lma();
        for (k, (register, m, i, mag)) in ops.into_iter().enumerate() {
            let now = SimTime::from_ms(k as u64);
            let out = l.mmm_handle_pbu(&pbu(m, i, if register { 300 } else { 0 }), NodeId(mag), now);
            l.take_effects();
            prop_assert_eq!(l.audit(), Ok(()));
            let mut seen = BTreeSet::new();
            for e in l.cache().iter() {
                prop_assert!(seen.insert((e.mn_id.clone(), e.interface_id)), "interface bound twice");
            }
            let mut owners = BTreeMap::new();
            for e in l.cache().iter() {
                for p in &e.hnp {
                    prop_assert!(owners.insert(*p, e.key()).is_none(), "prefix {} bound twice", p);
                }
            }
            if register && out.pba.status == PbaStatus::Success {
                let e = l.cache().find_interface(&mn(m), &iface(m, i));
                prop_assert_eq!(e.map(|e| e.serving_mag), Some(NodeId(mag)));
            }
            if !register {
                prop_assert!(
                    l.cache().find_interface(&mn(m), &iface(m, i)).map(|e| e.serving_mag) != Some(NodeId(mag))
                );
            }
        }
        Ok(())
    })
}

fn selector(port: u16) -> TrafficSelector {
    TrafficSelector {
        src_addr: "2001:db8:ffff::1".parse().unwrap(),
        dst_addr: home(1, 1).host(1),
        src_port: port,
        dst_port: 5001,
        protocol: 17,
        flow_label: FlowLabel::default(),
    }
}

/// Each new flow is classified once; later packets queue until its rule
/// lands and take the fast path afterwards. No packet is lost.
pub fn divert_once(cases: u32) -> Result<(), String> {
    let arrivals = prop::collection::vec((0usize..6, 0u64..20_000), 1..60);
    check(cases, arrivals, |arrivals| {
        let mut l = lma();
        l.mmm_handle_pbu(&pbu(1, 1, 300), NodeId(1), SimTime::ZERO);
        l.take_effects();
        let mut now = SimTime::ZERO;
        let mut done: BTreeMap<usize, SimTime> = BTreeMap::new();
        let mut classified = BTreeMap::new();
        let (mut sent, mut out) = (0usize, 0usize);
        for (seq, (flow, gap)) in arrivals.into_iter().enumerate() {
            now += SimTime::from_us(gap);
            out += l.complete_due(now).len();
            let pkt = Packet::new(selector(10_000 + flow as u16), 250, seq as u64, NodeId(9), now);
            sent += 1;
            match l.forward_downlink(pkt, now) {
                Forwarded::FastPath { .. } => {
                    out += 1;
                    prop_assert!(done.get(&flow).is_some_and(|&t| t <= now), "fast path before install");
                }
                Forwarded::Diverted { classified: c, .. } => {
                    if c {
                        *classified.entry(flow).or_insert(0) += 1;
                    }
                    if let Some(&t) = done.get(&flow) {
                        prop_assert!(now < t, "diverted after install completed");
                    }
                }
                other => return Err(TestCaseError::fail(format!("unexpected {other:?}"))),
            }
            for e in l.take_effects() {
                if let LmaEffect::InstallScheduled { completes_at, .. } = e {
                    prop_assert!(
                        done.insert(flow, completes_at).is_none(),
                        "second install for flow {}",
                        flow
                    );
                }
            }
            prop_assert_eq!(l.audit(), Ok(()));
        }
        for (flow, n) in &classified {
            prop_assert_eq!(*n, 1, "flow {} classified {} times", flow, n);
            let sel = selector(10_000 + *flow as u16);
            prop_assert_eq!(l.stats().fim_invocations.get(&sel).copied(), Some(1));
        }
        prop_assert_eq!(sent, out + l.queue().len());
        Ok(())
    })
}

const LMA_ID: NodeId = NodeId(0);
const MAG_ID: NodeId = NodeId(1);
const AAA_ID: NodeId = NodeId(2);
const MIHF_ID: NodeId = NodeId(3);
const LINK: LinkId = LinkId(0);

fn subscribed_mag() -> Mag {
    let mut m = Mag::new(
        MAG_ID,
        LMA_ID,
        AAA_ID,
        MIHF_ID,
        LINK,
        MagConfig::default(),
        CostModel::default(),
    );
    m.start();
    let t = SimTime::ZERO;
    for body in [
        MessageBody::MihRegisterAck(MihRegisterAckBody {
            transaction_id: 1,
            status: MihStatus::Success,
        }),
        MessageBody::MihCapabilityDiscoverResp(MihCapabilityDiscoverRespBody {
            transaction_id: 2,
            links: vec![LinkCapability {
                link: LINK,
                technology: "wifi".into(),
                events: EventMask::UP_DOWN,
            }],
        }),
        MessageBody::MihEventSubscribeConfirm(MihEventSubscribeConfirmBody {
            transaction_id: 3,
            link: LINK,
            events: EventMask::UP_DOWN,
            status: MihStatus::Success,
        }),
    ] {
        m.handle_message(MIHF_ID, &body, t);
    }
    m.take_output();
    m
}

#[derive(Debug, Clone, Copy)]
enum MagOp {
    LinkUp(u8),
    LinkDown(u8),
    AaaOk(u8),
    AaaReject(u8),
    PbaOk(u8),
    PbaError(u8),
    PbaStale(u8),
    Timeout(u8),
}

fn mag_op() -> impl Strategy<Value = MagOp> {
    (0u8..8, 1u8..4).prop_map(|(k, i)| match k {
        0 => MagOp::LinkUp(i),
        1 => MagOp::LinkDown(i),
        2 => MagOp::AaaOk(i),
        3 => MagOp::AaaReject(i),
        4 => MagOp::PbaOk(i),
        5 => MagOp::PbaError(i),
        6 => MagOp::PbaStale(i),
        _ => MagOp::Timeout(i),
    })
}

fn link_addr(i: u8) -> LinkAddr {
    LinkAddr([0, 0x11, 0x22, 0x33, 0x44, i])
}

/// Reference model of one MAG interface entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Model {
    Absent,
    Temporary(u16),
    Permanent(u16),
}

/// Entries start temporary on an authorized attachment, become permanent
/// only on a PBA answering their PBU, and vanish on PBA error, timeout or
/// detachment.
pub fn temporary_entry_lifecycle(cases: u32) -> Result<(), String> {
    check(cases, prop::collection::vec(mag_op(), 1..40), |ops| {
        let mut m = subscribed_mag();
        let mut model: BTreeMap<u8, Model> = (1..4).map(|i| (i, Model::Absent)).collect();
        let mut awaiting = BTreeSet::new();
        for (k, op) in ops.into_iter().enumerate() {
            let now = SimTime::from_ms(k as u64);
            let i = match op {
                MagOp::LinkUp(i)
                | MagOp::LinkDown(i)
                | MagOp::AaaOk(i)
                | MagOp::AaaReject(i)
                | MagOp::PbaOk(i)
                | MagOp::PbaError(i)
                | MagOp::PbaStale(i)
                | MagOp::Timeout(i) => i,
            };
            let id = eui64_from_link_addr(link_addr(i));
            let seq = match model[&i] {
                Model::Temporary(s) | Model::Permanent(s) => s,
                Model::Absent => 0,
            };
            let pba = |status: PbaStatus, sequence: u16| {
                MessageBody::Pba(PbaBody {
                    mn_id: mn(i),
                    interface_id: id,
                    hnp: vec![home(1, i)],
                    lifetime: if status.is_success() { 300 } else { 0 },
                    sequence,
                    status,
                })
            };
            match op {
                MagOp::LinkUp(_) => {
                    m.handle_message(
                        MIHF_ID,
                        &MessageBody::MihLinkUp(MihLinkEventBody {
                            link: LINK,
                            addr: link_addr(i),
                        }),
                        now,
                    );
                    awaiting.insert(i);
                }
                MagOp::LinkDown(_) => {
                    m.handle_message(
                        MIHF_ID,
                        &MessageBody::MihLinkDown(MihLinkEventBody {
                            link: LINK,
                            addr: link_addr(i),
                        }),
                        now,
                    );
                    awaiting.remove(&i);
                    model.insert(i, Model::Absent);
                }
                MagOp::AaaOk(_) | MagOp::AaaReject(_) => {
                    let ok = matches!(op, MagOp::AaaOk(_));
                    let body = MessageBody::AaaResponse(AaaResponseBody {
                        interface_id: id,
                        authorized: ok,
                        mn_id: ok.then(|| mn(i)),
                        hnp: if ok { vec![home(1, i)] } else { Vec::new() },
                    });
                    m.handle_message(AAA_ID, &body, now);
                    if awaiting.remove(&i) && ok {
                        let sent = m.take_output().into_iter().find_map(|o| match o {
                            MagOutput::Send {
                                body: MessageBody::Pbu(p),
                                ..
                            } => Some(p.sequence),
                            _ => None,
                        });
                        let Some(s) = sent else {
                            return Err(TestCaseError::fail("authorized attachment sent no PBU"));
                        };
                        model.insert(i, Model::Temporary(s));
                    }
                }
                MagOp::PbaOk(_) => {
                    m.handle_message(LMA_ID, &pba(PbaStatus::Success, seq), now);
                    if let Model::Temporary(s) = model[&i] {
                        model.insert(i, Model::Permanent(s));
                    }
                }
                MagOp::PbaError(_) => {
                    m.handle_message(LMA_ID, &pba(PbaStatus::ErrorAdminProhibited, seq), now);
                    if model[&i] != Model::Absent {
                        model.insert(i, Model::Absent);
                    }
                }
                MagOp::PbaStale(_) => {
                    m.handle_message(LMA_ID, &pba(PbaStatus::Success, seq.wrapping_add(100)), now);
                }
                MagOp::Timeout(_) => {
                    m.pba_timeout(id, seq, now);
                    if let Model::Temporary(_) = model[&i] {
                        model.insert(i, Model::Absent);
                    }
                }
            }
            m.take_output();
            for (&j, want) in &model {
                let got = m
                    .entry(&eui64_from_link_addr(link_addr(j)))
                    .map(|e| (e.status, e.pbu_sequence));
                let expected = match *want {
                    Model::Absent => None,
                    Model::Temporary(s) => Some((EntryStatus::Temporary, s)),
                    Model::Permanent(s) => Some((EntryStatus::Permanent, s)),
                };
                prop_assert_eq!(got, expected, "interface {} after {:?}", j, op);
            }
        }
        Ok(())
    })
}

fn snapshot(l: &Lma) -> String {
    format!(
        "{:?}|{:?}|{:?}",
        l.cache().iter().collect::<Vec<_>>(),
        l.rules().iter().collect::<Vec<_>>(),
        l.bindings().collect::<Vec<_>>()
    )
}

/// A repeated deregistration changes nothing and is still acknowledged.
pub fn idempotent_delete(cases: u32) -> Result<(), String> {
    let regs = prop::collection::vec((0u8..3, 0u8..3, 1u16..5), 1..10);
    check(
        cases,
        (regs, 0u8..3, 0u8..3, 1u16..5, 0usize..4),
        |(regs, m, i, mag, flows)| {
            let mut l = lma();
            for (m, i, mag) in regs {
                l.mmm_handle_pbu(&pbu(m, i, 300), NodeId(mag), SimTime::ZERO);
            }
            for f in 0..flows {
                let sel = TrafficSelector {
                    dst_addr: home(m, i).host(1),
                    ..selector(20_000 + f as u16)
                };
                l.forward_downlink(Packet::new(sel, 250, 0, NodeId(9), SimTime::ZERO), SimTime::ZERO);
            }
            l.complete_due(SimTime::from_secs(1));
            l.take_effects();
            let t = SimTime::from_secs(2);
            let first = l.mmm_handle_pbu(&pbu(m, i, 0), NodeId(mag), t);
            l.take_effects();
            let after_first = snapshot(&l);
            let second = l.mmm_handle_pbu(&pbu(m, i, 0), NodeId(mag), t);
            prop_assert!(matches!(first.action, MmmAction::Delete | MmmAction::DeleteUnknown));
            prop_assert_eq!(second.action, MmmAction::DeleteUnknown);
            prop_assert_eq!(second.pba.status, PbaStatus::Success);
            prop_assert!(l.take_effects().is_empty());
            prop_assert_eq!(snapshot(&l), after_first);
            prop_assert_eq!(l.audit(), Ok(()));
            Ok(())
        },
    )
}

fn prefix_strategy() -> impl Strategy<Value = Prefix> {
    (any::<u128>(), 0u8..=128).prop_map(|(bits, len)| {
        let mask = if len == 0 {
            0
        } else {
            u128::MAX << (128 - u32::from(len))
        };
        Prefix::new(Ipv6Addr::from(bits & mask), len).unwrap()
    })
}

fn mn_strategy() -> impl Strategy<Value = MnId> {
    "[a-z0-9]{1,12}@[a-z]{1,10}\\.org".prop_map(|s| MnId::new(s).unwrap())
}

fn iid() -> impl Strategy<Value = InterfaceId> {
    any::<[u8; 8]>().prop_map(InterfaceId)
}

fn status() -> impl Strategy<Value = PbaStatus> {
    prop_oneof![
        Just(PbaStatus::Success),
        Just(PbaStatus::ErrorAdminProhibited),
        Just(PbaStatus::ErrorNoResources)
    ]
}

fn mih_status() -> impl Strategy<Value = MihStatus> {
    prop_oneof![
        Just(MihStatus::Success),
        Just(MihStatus::Failure),
        Just(MihStatus::Rejected)
    ]
}

fn body() -> impl Strategy<Value = MessageBody> {
    let prefixes = || prop::collection::vec(prefix_strategy(), 0..4);
    prop_oneof![
        (mn_strategy(), iid(), prefixes(), any::<u16>(), any::<u16>()).prop_map(
            |(mn_id, interface_id, hnp, lifetime, sequence)| {
                MessageBody::Pbu(PbuBody {
                    mn_id,
                    interface_id,
                    hnp,
                    lifetime,
                    sequence,
                })
            }
        ),
        (mn_strategy(), iid(), prefixes(), any::<u16>(), any::<u16>(), status()).prop_map(
            |(mn_id, interface_id, hnp, lifetime, sequence, status)| {
                MessageBody::Pba(PbaBody {
                    mn_id,
                    interface_id,
                    hnp,
                    lifetime,
                    sequence,
                    status,
                })
            }
        ),
        (iid(), prefixes(), any::<u16>()).prop_map(|(interface_id, hnp, router_lifetime)| {
            MessageBody::RouterAdvertisement(RouterAdvertisementBody {
                interface_id,
                hnp,
                router_lifetime,
            })
        }),
        iid().prop_map(|target| MessageBody::NeighborSolicitation(NeighborBody { target })),
        iid().prop_map(|target| MessageBody::NeighborAdvertisement(NeighborBody { target })),
        any::<u16>().prop_map(|transaction_id| MessageBody::MihRegister(MihRegisterBody { transaction_id })),
        (any::<u16>(), mih_status()).prop_map(|(transaction_id, status)| MessageBody::MihRegisterAck(
            MihRegisterAckBody { transaction_id, status }
        )),
        any::<u16>().prop_map(
            |transaction_id| MessageBody::MihCapabilityDiscoverReq(MihCapabilityDiscoverReqBody { transaction_id })
        ),
        (
            any::<u16>(),
            prop::collection::vec((any::<u16>(), "[a-z0-9.-]{0,12}", any::<u8>()), 0..4)
        )
            .prop_map(|(transaction_id, links)| {
                MessageBody::MihCapabilityDiscoverResp(MihCapabilityDiscoverRespBody {
                    transaction_id,
                    links: links
                        .into_iter()
                        .map(|(l, technology, e)| LinkCapability {
                            link: LinkId(l),
                            technology,
                            events: EventMask(e),
                        })
                        .collect(),
                })
            }),
        (any::<u16>(), any::<u16>(), any::<u8>()).prop_map(|(transaction_id, l, e)| {
            MessageBody::MihEventSubscribeReq(MihEventSubscribeReqBody {
                transaction_id,
                link: LinkId(l),
                events: EventMask(e),
            })
        }),
        (any::<u16>(), any::<u16>(), any::<u8>(), mih_status()).prop_map(|(transaction_id, l, e, status)| {
            MessageBody::MihEventSubscribeConfirm(MihEventSubscribeConfirmBody {
                transaction_id,
                link: LinkId(l),
                events: EventMask(e),
                status,
            })
        }),
        (any::<u16>(), any::<[u8; 6]>()).prop_map(|(l, a)| MessageBody::MihLinkUp(MihLinkEventBody {
            link: LinkId(l),
            addr: LinkAddr(a)
        })),
        (any::<u16>(), any::<[u8; 6]>()).prop_map(|(l, a)| MessageBody::MihLinkDown(MihLinkEventBody {
            link: LinkId(l),
            addr: LinkAddr(a)
        })),
        iid().prop_map(|interface_id| MessageBody::AaaRequest(AaaRequestBody { interface_id })),
        (iid(), any::<bool>(), prop::option::of(mn_strategy()), prefixes()).prop_map(
            |(interface_id, authorized, mn_id, hnp)| {
                MessageBody::AaaResponse(AaaResponseBody {
                    interface_id,
                    authorized,
                    mn_id,
                    hnp,
                })
            }
        ),
    ]
}

/// decode(encode(m)) == m, and every strict prefix of an encoding is
/// rejected without panicking.
pub fn codec_round_trip(cases: u32) -> Result<(), String> {
    let msg = (body(), any::<u16>(), any::<u16>(), any::<u64>())
        .prop_map(|(b, s, d, t)| ProtocolMessage::new(NodeId(s), NodeId(d), SimTime::from_us(t), b));
    check(cases, msg, |msg| {
        let bytes = encode(&msg);
        prop_assert_eq!(decode(&bytes), Ok(msg));
        for cut in 0..bytes.len() {
            prop_assert!(decode(&bytes[..cut]).is_err());
        }
        let mut longer = bytes.clone();
        longer.push(0);
        prop_assert!(decode(&longer).is_err());
        Ok(())
    })
}

/// Distinct link-layer addresses give distinct interface identifiers.
pub fn eui64_injectivity(cases: u32) -> Result<(), String> {
    check(
        cases,
        (any::<[u8; 6]>(), any::<[u8; 6]>(), 0usize..6, 1u8..=255),
        |(a, b, pos, flip)| {
            let (a, b2) = (LinkAddr(a), LinkAddr(b));
            let mut c = a;
            c.0[pos] ^= flip;
            for (x, y) in [(a, b2), (a, c)] {
                prop_assert_eq!(x == y, eui64_from_link_addr(x) == eui64_from_link_addr(y));
            }
            let id = eui64_from_link_addr(a).0;
            prop_assert_eq!(&id[3..5], &[0xff, 0xfe]);
            Ok(())
        },
    )
}

/// Two femtocells with three MAGs and a dual-interface node attached to
/// mag1 and mag2 once the MIH handshakes are done.
fn topology(horizon: u32, knobs: &str) -> String {
    format!(
        r#"horizon_ms = {horizon}
[knobs]
{knobs}

[[femtocell]]
name = "fc1"

[[femtocell]]
name = "fc2"

[[mag]]
name = "mag1"
femtocell = "fc1"
link = "wlan1"
technology = "wifi-2.4"

[[mag]]
name = "mag2"
femtocell = "fc2"
link = "wlan2"
technology = "wifi-5"

[[mag]]
name = "mag3"
femtocell = "fc2"
link = "wlan3"
technology = "wifi-5"

[[cn]]
name = "cn1"
addr = "2001:db8:ffff::1"

[[mn]]
name = "mn1"
nai = "mn1@example.org"

[[mn.interface]]
name = "if1"
addr = "00:11:22:33:44:01"
prefix = "2001:db8:1:1::/64"

[[mn.interface]]
name = "if2"
addr = "00:11:22:33:44:02"
prefix = "2001:db8:1:2::/64"

[[event]]
at_ms = 10
action = "attach"
mn = "mn1"
interface = "if1"
mag = "mag1"

[[event]]
at_ms = 10
action = "attach"
mn = "mn1"
interface = "if2"
mag = "mag2"
"#
    )
}

fn flow(name: &str, to: &str, rate: u32, start: u32) -> String {
    format!("\n[[flow]]\nname = \"{name}\"\nfrom = \"cn1\"\nto = \"{to}\"\nrate_kbps = {rate}\nstart_ms = {start}\n")
}

fn event(at: u32, action: &str, iface: u8, mag: u8) -> String {
    let mn = match action {
        "link_down" | "link_up" => String::new(),
        _ => format!("mn = \"mn1\"\ninterface = \"if{iface}\"\n"),
    };
    let mag = match action {
        "detach" => String::new(),
        _ => format!("mag = \"mag{mag}\"\n"),
    };
    format!("\n[[event]]\nat_ms = {at}\naction = \"{action}\"\n{mn}{mag}")
}

fn chaotic_scenario() -> impl Strategy<Value = (String, u64)> {
    let actions = prop::sample::select(vec!["attach", "detach", "move", "link_down", "link_up"]);
    let events = prop::collection::vec((0u32..600, actions, 1u8..3, 1u8..4), 0..8);
    let flows = prop::collection::vec((1u8..3, 1u32..200, 0u32..400), 0..4);
    let knobs = (
        0u32..3,
        0u32..80,
        0u32..6,
        prop::sample::select(vec!["prefix", "random"]),
        any::<bool>(),
    );
    (events, flows, knobs, any::<u64>()).prop_map(|(events, flows, (loss, detect, tunnel, sched, fm), seed)| {
        let knobs = format!(
            "loss = {}\nd_detect_ms = {detect}\ntunnel_latency_ms = {tunnel}\nscheduler = \"{sched}\"\nflow_mobility = {fm}\n",
            f64::from(loss) * 0.1
        );
        let mut text = topology(800, &knobs);
        for (i, (iface, rate, start)) in flows.into_iter().enumerate() {
            text += &flow(&format!("f{i}"), &format!("mn1.if{iface}"), rate, start);
        }
        for (at, action, iface, mag) in events {
            text += &event(at, action, iface, mag);
        }
        (text, seed)
    })
}

/// Random topologies and timelines: every emitted packet is accounted for,
/// trace time never runs backwards, and a seed fixes the whole run.
pub fn simulation_invariants(cases: u32) -> Result<(), String> {
    check(cases, chaotic_scenario(), |(text, seed)| {
        let sc = parse_scenario(&text).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
        let a = netsim::run(&sc, seed).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert!(a.metrics.conserved(), "packets not conserved:\n{}", text);
        prop_assert!(
            a.trace.records.windows(2).all(|w| w[0].time <= w[1].time),
            "trace time went backwards"
        );
        let b = netsim::run(&sc, seed).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(a.trace.digest(), b.trace.digest());
        prop_assert_eq!(a.metrics, b.metrics);
        Ok(())
    })
}

/// With a fixed path delay, the gap-based estimate of a link-down handover
/// lies within one packet period below the true interruption.
pub fn handover_estimate_bound(cases: u32) -> Result<(), String> {
    let params = (
        10u32..=100,
        0usize..6,
        300u32..700,
        0u32..100_000,
        0u32..100,
        0u32..8,
        0u32..8,
    );
    check(cases, params, |(rate, background, down, jitter_us, detect, t1, t2)| {
        let knobs = format!("d_detect_ms = {detect}\ncost_unit_us = 0\ninstall_unit_us = 0\n");
        let mut text = topology(2000, &knobs).replace(
            "technology = \"wifi-2.4\"",
            &format!("technology = \"wifi-2.4\"\ntunnel_latency_ms = {t1}"),
        );
        text = text.replacen(
            "technology = \"wifi-5\"",
            &format!("technology = \"wifi-5\"\ntunnel_latency_ms = {t2}"),
            1,
        );
        text += &flow("moved", "mn1.if1", rate, 100);
        for i in 0..background {
            text += &flow(&format!("bg{i}"), "mn1.if2", rate, 100);
        }
        let at = f64::from(down) + f64::from(jitter_us) / 1000.0;
        text += &format!("\n[[event]]\nat_ms = {at}\naction = \"link_down\"\nmag = \"mag1\"\n");
        let sc = parse_scenario(&text).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
        let out = netsim::run(&sc, 1).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert!(out.metrics.conserved());
        let moved = &out.metrics.flows[0];
        let h = measure_handover(&out.trace, &moved.selector, moved.period)
            .map_err(|e| TestCaseError::fail(e.to_string()))?;
        let truth = h
            .ground_truth_ms
            .ok_or_else(|| TestCaseError::fail("no ground truth"))?;
        let period = moved.period.as_ms_f64();
        prop_assert!(
            h.estimate_ms <= truth + 1e-9 && truth - period <= h.estimate_ms + 1e-9,
            "estimate {} truth {} period {}",
            h.estimate_ms,
            truth,
            period
        );
        Ok(())
    })
}
