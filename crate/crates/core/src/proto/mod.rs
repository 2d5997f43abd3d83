//! Domain types, identifiers and the canonical wire encoding.

pub mod message;
pub mod time;
pub mod types;
pub mod wire;

pub use message::*;
pub use time::SimTime;
pub use types::*;
pub use wire::{decode, encode, MalformedMessage};
