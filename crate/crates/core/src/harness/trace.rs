//! Line-oriented simulation trace.
//!
//! Each record renders as `<time ms> <entity> <kind> key=value ...` with a
//! fixed field order per kind.

use std::fmt::{self, Write as _};
use std::fs;
use std::io;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::cost::Cost;
use crate::lma::{MmmAction, RuleKey};
use crate::mag::EntryStatus;
use crate::netsim::DropReason;
use crate::proto::{
    InterfaceId, LinkAddr, LinkId, MessageKind, MnId, NodeId, PbaStatus, Prefix, SimTime, TrafficSelector,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Record {
    Attach {
        iface: String,
        link: LinkId,
    },
    Detach {
        iface: String,
        link: LinkId,
    },
    LinkState {
        link: LinkId,
        up: bool,
    },
    SapReport {
        link: LinkId,
        addr: LinkAddr,
        up: bool,
    },
    Send {
        kind: MessageKind,
        dst: NodeId,
        bytes: Vec<u8>,
    },
    MessageLost {
        kind: MessageKind,
        dst: NodeId,
        reason: DropReason,
    },
    Mmm {
        action: MmmAction,
        mn: MnId,
        mag: NodeId,
        status: PbaStatus,
    },
    Expired {
        mn: MnId,
        mag: NodeId,
    },
    MagFsm {
        iface: InterfaceId,
        event: &'static str,
        before: Option<EntryStatus>,
        after: Option<EntryStatus>,
    },
    Anomaly {
        text: String,
    },
    Prefix {
        iface: String,
        prefix: Prefix,
    },
    InstallScheduled {
        key: RuleKey,
        installed: usize,
        latency: Cost,
        completes_at: SimTime,
        mag: NodeId,
    },
    RuleInstalled {
        key: RuleKey,
        index: usize,
        table_size: usize,
    },
    RuleRemoved {
        key: RuleKey,
        table_size: usize,
    },
    Rerouted {
        key: RuleKey,
        from: NodeId,
        to: NodeId,
    },
    FlowDropped {
        key: RuleKey,
    },
    Emit {
        flow: usize,
        seq: u64,
    },
    FastPath {
        flow: usize,
        seq: u64,
        rule_index: usize,
        cost: Cost,
    },
    Divert {
        flow: usize,
        seq: u64,
        cost: Cost,
        classified: bool,
    },
    Bridge {
        flow: usize,
        seq: u64,
        cost: Cost,
    },
    Deliver {
        flow: usize,
        seq: u64,
        iface: usize,
        link: LinkId,
    },
    Drop {
        flow: usize,
        seq: u64,
        reason: DropReason,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub time: SimTime,
    pub entity: NodeId,
    pub record: Record,
}

/// Name tables plus the ordered record list of one run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    pub nodes: Vec<String>,
    pub links: Vec<String>,
    pub flows: Vec<(String, TrafficSelector)>,
    pub records: Vec<TraceRecord>,
}

fn status(s: Option<EntryStatus>) -> String {
    s.map_or_else(|| "none".to_string(), |s| s.to_string())
}

impl Trace {
    pub fn push(&mut self, time: SimTime, entity: NodeId, record: Record) {
        debug_assert!(self.records.last().is_none_or(|r| r.time <= time));
        self.records.push(TraceRecord { time, entity, record });
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn node(&self, id: NodeId) -> &str {
        self.nodes.get(usize::from(id.0)).map_or("?", String::as_str)
    }

    pub fn link(&self, id: LinkId) -> &str {
        self.links.get(usize::from(id.0)).map_or("?", String::as_str)
    }

    pub fn flow_index(&self, selector: &TrafficSelector) -> Option<usize> {
        self.flows.iter().position(|(_, s)| s == selector)
    }

    fn key(&self, key: &RuleKey) -> String {
        match key {
            RuleKey::Flow(s) => match self.flow_index(s) {
                Some(i) => format!("flow:{}", self.flows[i].0),
                None => format!("flow:{s}"),
            },
            RuleKey::Node(m) => format!("node:{m}"),
            RuleKey::Static(i) => format!("static:{i}"),
        }
    }

    fn flow(&self, i: usize) -> &str {
        self.flows.get(i).map_or("?", |(n, _)| n.as_str())
    }

    /// Renders one record without a trailing newline.
    pub fn render_record(&self, r: &TraceRecord, out: &mut String) -> fmt::Result {
        write!(out, "{} {} ", r.time, self.node(r.entity))?;
        match &r.record {
            Record::Attach { iface, link } => write!(out, "attach iface={iface} link={}", self.link(*link)),
            Record::Detach { iface, link } => write!(out, "detach iface={iface} link={}", self.link(*link)),
            Record::LinkState { link, up } => {
                write!(
                    out,
                    "link-{} link={}",
                    if *up { "up" } else { "down" },
                    self.link(*link)
                )
            }
            Record::SapReport { link, addr, up } => write!(
                out,
                "sap-report link={} addr={addr} event={}",
                self.link(*link),
                if *up { "up" } else { "down" }
            ),
            Record::Send { kind, dst, bytes } => {
                write!(
                    out,
                    "send kind={kind} dst={} bytes={}",
                    self.node(*dst),
                    hex::encode(bytes)
                )
            }
            Record::MessageLost { kind, dst, reason } => {
                write!(out, "lost kind={kind} dst={} reason={reason}", self.node(*dst))
            }
            Record::Mmm {
                action,
                mn,
                mag,
                status,
            } => {
                write!(
                    out,
                    "mmm action={action} mn={mn} mag={} status={status:?}",
                    self.node(*mag)
                )
            }
            Record::Expired { mn, mag } => write!(out, "bce-expired mn={mn} mag={}", self.node(*mag)),
            Record::MagFsm {
                iface,
                event,
                before,
                after,
            } => write!(
                out,
                "fsm iface={iface} event={event} from={} to={}",
                status(*before),
                status(*after)
            ),
            Record::Anomaly { text } => write!(out, "anomaly text=\"{text}\""),
            Record::Prefix { iface, prefix } => write!(out, "prefix iface={iface} hnp={prefix}"),
            Record::InstallScheduled {
                key,
                installed,
                latency,
                completes_at,
                mag,
            } => write!(
                out,
                "install-start key={} installed={installed} latency={latency} done={completes_at} via={}",
                self.key(key),
                self.node(*mag)
            ),
            Record::RuleInstalled { key, index, table_size } => {
                write!(out, "rule-add key={} index={index} rules={table_size}", self.key(key))
            }
            Record::RuleRemoved { key, table_size } => {
                write!(out, "rule-del key={} rules={table_size}", self.key(key))
            }
            Record::Rerouted { key, from, to } => write!(
                out,
                "reroute key={} from={} to={}",
                self.key(key),
                self.node(*from),
                self.node(*to)
            ),
            Record::FlowDropped { key } => write!(out, "flow-dropped key={}", self.key(key)),
            Record::Emit { flow, seq } => write!(out, "emit flow={} seq={seq}", self.flow(*flow)),
            Record::FastPath {
                flow,
                seq,
                rule_index,
                cost,
            } => write!(
                out,
                "fast flow={} seq={seq} rule={rule_index} cost={cost}",
                self.flow(*flow)
            ),
            Record::Divert {
                flow,
                seq,
                cost,
                classified,
            } => write!(
                out,
                "divert flow={} seq={seq} cost={cost} classify={}",
                self.flow(*flow),
                u8::from(*classified)
            ),
            Record::Bridge { flow, seq, cost } => write!(out, "bridge flow={} seq={seq} cost={cost}", self.flow(*flow)),
            Record::Deliver { flow, seq, iface, link } => write!(
                out,
                "deliver flow={} seq={seq} iface={iface} link={}",
                self.flow(*flow),
                self.link(*link)
            ),
            Record::Drop { flow, seq, reason } => {
                write!(out, "drop flow={} seq={seq} reason={reason}", self.flow(*flow))
            }
        }
    }

    /// Visits each rendered line in order.
    pub fn for_each_line<F: FnMut(&str)>(&self, mut f: F) {
        let mut line = String::with_capacity(128);
        for r in &self.records {
            line.clear();
            self.render_record(r, &mut line)
                .expect("writing to a String cannot fail");
            line.push('\n');
            f(&line);
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        self.for_each_line(|l| out.push_str(l));
        out
    }

    /// SHA-256 of the rendered trace, hex encoded.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        self.for_each_line(|l| h.update(l.as_bytes()));
        hex::encode(h.finalize())
    }

    pub fn write_to(&self, path: &Path) -> io::Result<()> {
        fs::write(path, self.render())
    }
}
