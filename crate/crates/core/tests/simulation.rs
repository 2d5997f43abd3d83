mod support;

use std::process::Command;

use flowmob::harness::output::metric_tables;
use flowmob::harness::scenario::SchedulerKind;
use flowmob::harness::trace::{Record, Trace};
use flowmob::harness::{measure_handover, parse_scenario, HarnessError};
use flowmob::netsim::{self, DropReason};
use flowmob::proto::{LinkId, NodeId, SimTime};

use support::{golden, scenario};

fn sap_reports(trace: &Trace) -> Vec<(SimTime, String, bool)> {
    trace
        .records
        .iter()
        .filter_map(|r| match r.record {
            Record::SapReport { link, up, .. } => Some((r.time, trace.link(link).to_string(), up)),
            _ => None,
        })
        .collect()
}

#[test]
fn single_attachment_matches_golden_trace() {
    let out = netsim::run(&scenario("single_attach.scn"), 1).unwrap();
    assert_eq!(out.trace.render(), golden("single_attach.trace"));
}

#[test]
fn two_flows_use_distinct_paths() {
    let out = netsim::run(&scenario("two_femtocells.scn"), 1).unwrap();
    let m = &out.metrics;
    assert!(m.conserved());
    for (flow, link) in [("video", "wlan1"), ("voice", "wlan3")] {
        let f = m.flows.iter().find(|f| f.name == flow).unwrap();
        assert!(f.delivered > 0, "{flow} delivered nothing");
        assert_eq!(f.dropped(), 0, "{flow}: {:?}", f.drops);
        assert!(
            f.deliveries.iter().all(|d| out.trace.link(d.link) == link),
            "{flow} left {link}"
        );
    }
}

#[test]
fn empty_scenario_gives_empty_trace() {
    let sc = parse_scenario("horizon_ms = 1000\n").unwrap();
    let out = netsim::run(&sc, 7).unwrap();
    assert!(out.trace.is_empty());
    assert_eq!(out.trace.render(), "");
    assert_eq!(out.metrics.emitted(), 0);
    assert_eq!(out.metrics.signaling_total(), 0);
}

#[test]
fn same_seed_same_trace() {
    let sc = scenario("two_femtocells.scn");
    let a = netsim::run(&sc, 42).unwrap();
    let b = netsim::run(&sc, 42).unwrap();
    assert_eq!(a.trace.render(), b.trace.render());
    assert_eq!(a.trace.digest(), b.trace.digest());
}

#[test]
fn random_scheduler_depends_on_seed() {
    let mut sc = scenario("two_femtocells.scn");
    sc.knobs.scheduler = SchedulerKind::Random;
    let digests: Vec<String> = (1..=4).map(|s| netsim::run(&sc, s).unwrap().trace.digest()).collect();
    assert_eq!(digests[0], netsim::run(&sc, 1).unwrap().trace.digest());
    assert!(digests[1..].iter().any(|d| *d != digests[0]), "seed had no effect");
}

#[test]
fn link_reports_follow_the_timeline() {
    let extra = r#"
[[event]]
at_ms = 200
action = "detach"
mn = "mn1"
interface = "if1"

[[event]]
at_ms = 300
action = "attach"
mn = "mn1"
interface = "if1"
mag = "mag1"
"#;
    let mut text = std::fs::read_to_string(support::scenario_path("single_attach.scn")).unwrap();
    text = text.replace("horizon_ms = 100", "horizon_ms = 500") + extra;
    let out = netsim::run(&parse_scenario(&text).unwrap(), 1).unwrap();
    let reports = sap_reports(&out.trace);
    let ms = SimTime::from_ms;
    assert_eq!(
        reports,
        vec![
            (ms(60), "wlan1".into(), true),
            (ms(250), "wlan1".into(), false),
            (ms(350), "wlan1".into(), true)
        ]
    );
}

#[test]
fn zero_detection_delay_reports_immediately() {
    let mut sc = scenario("single_attach.scn");
    sc.knobs.d_detect_ms = 0.0;
    let out = netsim::run(&sc, 1).unwrap();
    assert_eq!(
        sap_reports(&out.trace),
        vec![(SimTime::from_ms(10), "wlan1".to_string(), true)]
    );
}

#[test]
fn handover_estimate_from_deliveries() {
    let sc = scenario("two_femtocells.scn");
    let out = netsim::run(&sc, 1).unwrap();
    let selector = out.metrics.flows[0].selector;
    let mut trace = Trace {
        links: vec!["a".into(), "b".into()],
        flows: vec![("f".into(), selector)],
        ..Trace::default()
    };
    let deliver = |trace: &mut Trace, ms: u64, seq: u64, link: u16| {
        let record = Record::Deliver {
            flow: 0,
            seq,
            iface: link as usize,
            link: LinkId(link),
        };
        trace.push(SimTime::from_ms(ms), NodeId(0), record);
    };
    deliver(&mut trace, 0, 0, 0);
    deliver(&mut trace, 20, 1, 0);
    trace.push(
        SimTime::from_ms(30),
        NodeId(0),
        Record::LinkState {
            link: LinkId(0),
            up: false,
        },
    );
    deliver(&mut trace, 100, 5, 1);
    deliver(&mut trace, 120, 6, 1);
    let h = measure_handover(&trace, &selector, SimTime::from_ms(20)).unwrap();
    assert_eq!(h.estimate_ms, 60.0);
    assert_eq!(h.ground_truth_ms, Some(70.0));
    assert_eq!((h.last_old, h.first_new), (SimTime::from_ms(20), SimTime::from_ms(100)));
}

#[test]
fn steady_flow_has_no_handover() {
    let out = netsim::run(&scenario("two_femtocells.scn"), 1).unwrap();
    let f = &out.metrics.flows[0];
    match measure_handover(&out.trace, &f.selector, f.period) {
        Err(HarnessError::NoHandoverObserved(name)) => assert_eq!(name, "video"),
        other => panic!("expected NoHandoverObserved, got {other:?}"),
    }
}

#[test]
fn link_down_moves_flow_to_other_interface() {
    let text = std::fs::read_to_string(support::scenario_path("two_femtocells.scn")).unwrap()
        + "\n[[event]]\nat_ms = 1000\naction = \"link_down\"\nmag = \"mag1\"\n";
    let out = netsim::run(&parse_scenario(&text).unwrap(), 1).unwrap();
    let video = &out.metrics.flows[0];
    let h = measure_handover(&out.trace, &video.selector, video.period).unwrap();
    assert_eq!(out.trace.link(h.from.1), "wlan1");
    assert_eq!(out.trace.link(h.to.1), "wlan3");
    let truth = h.ground_truth_ms.unwrap();
    assert!(
        h.estimate_ms <= truth && truth - video.period.as_ms_f64() <= h.estimate_ms,
        "{h:?}"
    );
    assert!(out.metrics.conserved());
    assert!(!video.ended_dropped);
}

#[test]
fn packets_on_a_dead_link_are_lost_not_delivered() {
    let text = std::fs::read_to_string(support::scenario_path("two_femtocells.scn")).unwrap()
        + "\n[[event]]\nat_ms = 1000\naction = \"link_down\"\nmag = \"mag1\"\n"
        + "\n[knobs]\nflow_mobility = false\n";
    let out = netsim::run(&parse_scenario(&text).unwrap(), 1).unwrap();
    let video = &out.metrics.flows[0];
    assert!(video.deliveries.iter().all(|d| d.at <= SimTime::from_ms(1000)));
    assert!(video.dropped() > 0);
    assert!(video.drops.keys().all(|r| *r != DropReason::WirelessLoss));
    assert!(out.metrics.conserved());
}

#[test]
fn metric_csv_is_byte_identical_on_rerun() {
    let sc = scenario("two_femtocells.scn");
    let a = netsim::run(&sc, 3).unwrap();
    let b = netsim::run(&sc, 3).unwrap();
    let bytes = |m| {
        metric_tables(m)
            .iter()
            .map(|t| t.to_bytes().unwrap())
            .collect::<Vec<_>>()
    };
    assert_eq!(bytes(&a.metrics), bytes(&b.metrics));

    let dir = tempfile::tempdir().unwrap();
    let first = flowmob::harness::output::write_metrics(&a.metrics, &dir.path().join("a")).unwrap();
    let second = flowmob::harness::output::write_metrics(&b.metrics, &dir.path().join("b")).unwrap();
    for (x, y) in first.iter().zip(&second) {
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap(), "{}", x.display());
    }
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_flowmob"))
}

#[test]
fn cli_validate_exit_codes() {
    let ok = cli()
        .arg("validate")
        .arg(support::scenario_path("two_femtocells.scn"))
        .output()
        .unwrap();
    assert_eq!(ok.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("4 MAGs"));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.scn");
    std::fs::write(
        &bad,
        "horizon_ms = 10\n[[event]]\nat_ms = 20\naction = \"link_up\"\nmag = \"x\"\n",
    )
    .unwrap();
    let invalid = cli().arg("validate").arg(&bad).output().unwrap();
    assert_eq!(invalid.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&invalid.stderr).contains("line 3"));

    let missing = cli().arg("validate").arg(dir.path().join("nope.scn")).output().unwrap();
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn cli_run_writes_trace_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli()
        .arg("run")
        .arg(support::scenario_path("single_attach.scn"))
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let trace = std::fs::read_to_string(dir.path().join("trace.txt")).unwrap();
    assert_eq!(trace, golden("single_attach.trace"));
    for name in [
        "flows",
        "drops",
        "costs",
        "installs",
        "handovers",
        "signaling",
        "rule_table",
    ] {
        assert!(dir.path().join(format!("{name}.csv")).exists(), "{name}.csv missing");
    }
}
