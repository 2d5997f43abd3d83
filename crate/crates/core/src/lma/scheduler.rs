//! Route selection for new and rerouted flows.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::proto::{MnId, NodeId};

use super::cache::BindingCacheEntry;
use super::rules::RuleKey;

/// Hook for an external decision entity. Candidates are the mobile node's
/// live bindings ordered by serving MAG; the return value indexes them.
pub trait FlowDecider: fmt::Debug + Send + Sync {
    fn choose(&self, mn_id: &MnId, flow: &RuleKey, candidates: &[&BindingCacheEntry]) -> Option<usize>;
}

/// Routes a flow through the binding that owns its destination prefix, as
/// plain PMIPv6 would, falling back to the first binding.
#[derive(Debug, Default, Clone, Copy)]
pub struct PrefixAffinity;

impl FlowDecider for PrefixAffinity {
    fn choose(&self, _mn_id: &MnId, flow: &RuleKey, candidates: &[&BindingCacheEntry]) -> Option<usize> {
        let dst = flow.selector()?.dst_addr;
        candidates.iter().position(|c| c.hnp.iter().any(|p| p.contains(&dst)))
    }
}

#[derive(Clone)]
pub enum SchedulerPolicy {
    /// Serving MAGs in order of preference.
    Pinned(Vec<NodeId>),
    Random {
        seed: u64,
    },
    External(Arc<dyn FlowDecider>),
}

impl fmt::Debug for SchedulerPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchedulerPolicy::Pinned(order) => f.debug_tuple("Pinned").field(order).finish(),
            SchedulerPolicy::Random { seed } => f.debug_struct("Random").field("seed", seed).finish(),
            SchedulerPolicy::External(d) => f.debug_tuple("External").field(d).finish(),
        }
    }
}

impl Default for SchedulerPolicy {
    fn default() -> Self {
        SchedulerPolicy::External(Arc::new(PrefixAffinity))
    }
}

#[derive(Debug)]
pub struct FlowScheduler {
    policy: SchedulerPolicy,
    rng: Option<ChaCha8Rng>,
}

impl FlowScheduler {
    pub fn new(policy: SchedulerPolicy) -> Self {
        let rng = match &policy {
            SchedulerPolicy::Random { seed } => Some(ChaCha8Rng::seed_from_u64(*seed)),
            _ => None,
        };
        FlowScheduler { policy, rng }
    }

    pub fn policy(&self) -> &SchedulerPolicy {
        &self.policy
    }

    /// Picks one of `candidates`, which must be non-empty. A single
    /// candidate is returned without consulting the policy.
    pub fn choose(&mut self, mn_id: &MnId, flow: &RuleKey, candidates: &[&BindingCacheEntry]) -> usize {
        assert!(!candidates.is_empty(), "scheduler called without candidates");
        if candidates.len() == 1 {
            return 0;
        }
        match &self.policy {
            SchedulerPolicy::Pinned(order) => order
                .iter()
                .find_map(|mag| candidates.iter().position(|c| c.serving_mag == *mag))
                .unwrap_or(0),
            SchedulerPolicy::Random { .. } => {
                let rng = self.rng.as_mut().expect("random policy owns an rng");
                rng.gen_range(0..candidates.len())
            }
            SchedulerPolicy::External(decider) => decider
                .choose(mn_id, flow, candidates)
                .filter(|&i| i < candidates.len())
                .unwrap_or(0),
        }
    }
}
