//! Mobile nodes (weak host and logical interface) and the AAA server.

use std::collections::BTreeMap;
use std::net::Ipv6Addr;

use crate::harness::scenario::HostModel;
use crate::proto::{AaaRequestBody, AaaResponseBody, InterfaceId, LinkAddr, LinkId, MnId, NodeId, Prefix};

use super::DropReason;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MnInterface {
    pub name: String,
    pub addr: LinkAddr,
    pub id: InterfaceId,
    /// Access link the interface is associated with.
    pub link: Option<LinkId>,
    /// Prefix learnt from a router advertisement; kept after detachment.
    pub prefix: Option<Prefix>,
}

#[derive(Debug, Clone)]
pub struct MobileNode {
    pub node: NodeId,
    pub name: String,
    pub mn_id: MnId,
    pub host: HostModel,
    /// Answers neighbour solicitations.
    pub responsive: bool,
    pub interfaces: Vec<MnInterface>,
    // last sequence handed to the application, per flow (logical interface)
    merged: BTreeMap<usize, u64>,
}

impl MobileNode {
    pub fn new(node: NodeId, name: String, mn_id: MnId, host: HostModel, responsive: bool) -> Self {
        MobileNode {
            node,
            name,
            mn_id,
            host,
            responsive,
            interfaces: Vec::new(),
            merged: BTreeMap::new(),
        }
    }

    pub fn owns(&self, dst: &Ipv6Addr) -> bool {
        self.interfaces.iter().filter_map(|i| i.prefix).any(|p| p.contains(dst))
    }

    pub fn interface_by_id(&self, id: &InterfaceId) -> Option<usize> {
        self.interfaces.iter().position(|i| i.id == *id)
    }

    /// Applies a router advertisement received on `iface`.
    pub fn assign(&mut self, iface: usize, hnp: &[Prefix]) -> Option<Prefix> {
        let p = *hnp.first()?;
        self.interfaces[iface].prefix = Some(p);
        Some(p)
    }

    /// Host-model acceptance of a downlink packet on an up interface.
    pub fn accept(&mut self, flow: usize, seq: u64, dst: &Ipv6Addr) -> Result<(), DropReason> {
        if !self.owns(dst) {
            return Err(DropReason::HostRejected);
        }
        if self.host == HostModel::Lif {
            if let Some(&last) = self.merged.get(&flow) {
                if seq <= last {
                    return Err(DropReason::StaleSequence);
                }
            }
            self.merged.insert(flow, seq);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AaaProfile {
    pub mn_id: MnId,
    pub prefix: Prefix,
    pub authorized: bool,
}

/// Answers interface authorization queries from a static profile table.
#[derive(Debug, Clone, Default)]
pub struct AaaServer {
    profiles: BTreeMap<InterfaceId, AaaProfile>,
}

impl AaaServer {
    pub fn insert(&mut self, id: InterfaceId, profile: AaaProfile) {
        self.profiles.insert(id, profile);
    }

    pub fn handle(&self, req: &AaaRequestBody) -> AaaResponseBody {
        match self.profiles.get(&req.interface_id) {
            Some(p) if p.authorized => AaaResponseBody {
                interface_id: req.interface_id,
                authorized: true,
                mn_id: Some(p.mn_id.clone()),
                hnp: vec![p.prefix],
            },
            _ => AaaResponseBody {
                interface_id: req.interface_id,
                authorized: false,
                mn_id: None,
                hnp: Vec::new(),
            },
        }
    }
}
