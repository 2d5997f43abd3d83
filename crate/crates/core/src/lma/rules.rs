use std::collections::VecDeque;
use std::fmt;

use crate::proto::{MnId, Packet, SimTime, TrafficSelector};

/// Forwarding label attached to packets matching a rule; one per tunnel route.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Mark(pub u32);

impl fmt::Display for Mark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{:x}", self.0)
    }
}

/// What a rule matches on.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RuleKey {
    /// One flow, matched on the full 6-tuple.
    Flow(TrafficSelector),
    /// Every packet destined to one mobile node (flow mobility disabled).
    Node(MnId),
    /// Pre-installed filler rule that never matches traffic.
    Static(u32),
}

impl RuleKey {
    pub fn selector(&self) -> Option<&TrafficSelector> {
        match self {
            RuleKey::Flow(s) => Some(s),
            _ => None,
        }
    }
}

impl fmt::Display for RuleKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RuleKey::Flow(s) => write!(f, "flow {s}"),
            RuleKey::Node(m) => write!(f, "node {m}"),
            RuleKey::Static(i) => write!(f, "static #{i}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rule {
    pub key: RuleKey,
    pub mark: Mark,
}

/// Ordered policy-routing rules, scanned linearly in insertion order.
#[derive(Debug, Default, Clone)]
pub struct RuleTable {
    rules: Vec<Rule>,
}

impl RuleTable {
    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Rule> {
        self.rules.iter()
    }

    /// Appends a rule and returns its 1-based position, or `None` when a
    /// rule for the same key already exists.
    pub fn push(&mut self, rule: Rule) -> Option<usize> {
        if self.position(&rule.key).is_some() {
            return None;
        }
        self.rules.push(rule);
        Some(self.rules.len())
    }

    pub fn remove(&mut self, key: &RuleKey) -> Option<Rule> {
        let at = self.rules.iter().position(|r| r.key == *key)?;
        Some(self.rules.remove(at))
    }

    /// 1-based position of the rule for `key`.
    pub fn position(&self, key: &RuleKey) -> Option<usize> {
        self.rules.iter().position(|r| r.key == *key).map(|i| i + 1)
    }

    /// First rule accepted by `matches`, with its 1-based position (the
    /// number of rules visited).
    pub fn scan<F>(&self, mut matches: F) -> Option<(usize, &Rule)>
    where
        F: FnMut(&RuleKey) -> bool,
    {
        self.rules
            .iter()
            .enumerate()
            .find(|(_, r)| matches(&r.key))
            .map(|(i, r)| (i + 1, r))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueuedPacket {
    pub key: RuleKey,
    pub packet: Packet,
    pub arrived_at: SimTime,
}

/// Packets held in user space until their rule is installed.
#[derive(Debug, Default, Clone)]
pub struct UserSpaceQueue {
    entries: VecDeque<QueuedPacket>,
}

impl UserSpaceQueue {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, key: RuleKey, packet: Packet, arrived_at: SimTime) {
        self.entries.push_back(QueuedPacket {
            key,
            packet,
            arrived_at,
        });
    }

    /// Removes every packet held for `key`, in arrival order.
    pub fn take(&mut self, key: &RuleKey) -> Vec<QueuedPacket> {
        let (taken, kept): (VecDeque<_>, VecDeque<_>) = self.entries.drain(..).partition(|q| q.key == *key);
        self.entries = kept;
        taken.into()
    }

    pub fn drain_all(&mut self) -> Vec<QueuedPacket> {
        self.entries.drain(..).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &QueuedPacket> {
        self.entries.iter()
    }
}
