use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::net::Ipv6Addr;

use crate::proto::types::mask;
use crate::proto::{InterfaceId, MnId, NodeId, Prefix, SimTime};

use super::rules::Mark;

/// A binding is identified by the mobile node and the MAG serving it.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BceKey {
    pub mn_id: MnId,
    pub serving_mag: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TunnelId(pub u16);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BindingCacheEntry {
    pub mn_id: MnId,
    pub interface_id: InterfaceId,
    pub serving_mag: NodeId,
    pub hnp: Vec<Prefix>,
    pub lifetime_expires_at: SimTime,
    pub tunnel_id: TunnelId,
    /// Forwarding mark of the route through this entry's tunnel.
    pub mark: Mark,
}

impl BindingCacheEntry {
    pub fn key(&self) -> BceKey {
        BceKey {
            mn_id: self.mn_id.clone(),
            serving_mag: self.serving_mag,
        }
    }
}

/// The LMA binding cache plus a longest-prefix index over all HNPs.
#[derive(Debug, Default, Clone)]
pub struct BindingCache {
    entries: BTreeMap<BceKey, BindingCacheEntry>,
    // prefix length -> masked network bits -> owners
    by_prefix: BTreeMap<u8, HashMap<u128, BTreeSet<BceKey>>>,
}

impl BindingCache {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &BceKey) -> Option<&BindingCacheEntry> {
        self.entries.get(key)
    }

    pub fn contains(&self, key: &BceKey) -> bool {
        self.entries.contains_key(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = &BindingCacheEntry> {
        self.entries.values()
    }

    /// Entries of one mobile node, ordered by serving MAG.
    pub fn for_mn<'a>(&'a self, mn_id: &MnId) -> impl Iterator<Item = &'a BindingCacheEntry> {
        let lo = BceKey {
            mn_id: mn_id.clone(),
            serving_mag: NodeId(0),
        };
        let hi = BceKey {
            mn_id: mn_id.clone(),
            serving_mag: NodeId(u16::MAX),
        };
        self.entries.range(lo..=hi).map(|(_, e)| e)
    }

    pub fn find_interface(&self, mn_id: &MnId, iface: &InterfaceId) -> Option<&BindingCacheEntry> {
        self.for_mn(mn_id).find(|e| e.interface_id == *iface)
    }

    /// Inserts or replaces the entry stored under its own key.
    pub fn insert(&mut self, entry: BindingCacheEntry) -> Option<BindingCacheEntry> {
        let key = entry.key();
        let old = self.remove(&key);
        for p in &entry.hnp {
            self.by_prefix
                .entry(p.len())
                .or_default()
                .entry(u128::from(p.addr()))
                .or_default()
                .insert(key.clone());
        }
        self.entries.insert(key, entry);
        old
    }

    pub fn remove(&mut self, key: &BceKey) -> Option<BindingCacheEntry> {
        let entry = self.entries.remove(key)?;
        for p in &entry.hnp {
            if let Some(level) = self.by_prefix.get_mut(&p.len()) {
                let net = u128::from(p.addr());
                if let Some(owners) = level.get_mut(&net) {
                    owners.remove(key);
                    if owners.is_empty() {
                        level.remove(&net);
                    }
                }
                if level.is_empty() {
                    self.by_prefix.remove(&p.len());
                }
            }
        }
        Some(entry)
    }

    /// Applies `f` to an entry, keeping the prefix index consistent.
    pub fn update<F>(&mut self, key: &BceKey, f: F) -> bool
    where
        F: FnOnce(&mut BindingCacheEntry),
    {
        let Some(mut entry) = self.remove(key) else {
            return false;
        };
        f(&mut entry);
        self.insert(entry);
        true
    }

    /// Longest-prefix containment lookup of a destination address.
    pub fn lookup(&self, dst: &Ipv6Addr) -> Option<&BindingCacheEntry> {
        let bits = u128::from(*dst);
        self.by_prefix.iter().rev().find_map(|(&len, level)| {
            level
                .get(&(bits & mask(len)))
                .and_then(|owners| owners.iter().next())
                .and_then(|k| self.entries.get(k))
        })
    }
}
