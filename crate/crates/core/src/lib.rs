//! PMIPv6 flow mobility with 802.21 link-event integration, driven by a
//! deterministic discrete-event simulator.

pub mod cost;
pub mod harness;
pub mod lma;
pub mod mag;
pub mod mih;
pub mod netsim;
pub mod proto;
