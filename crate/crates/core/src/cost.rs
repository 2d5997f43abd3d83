//! Abstract processing-cost model.
//!
//! Costs are dimensionless units stored as fixed-point integers (one
//! millionth of a unit), so sums and differences are exact. A scenario maps
//! units to simulated latency with `cost_unit_us` (per-packet work) and
//! `install_unit_us` (rule installation).

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

const SCALE: f64 = 1_000_000.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Cost(u64);

impl Cost {
    pub const ZERO: Cost = Cost(0);

    /// Rounds to the nearest micro-unit; negative input clamps to zero.
    pub fn from_units(units: f64) -> Cost {
        if units.is_nan() || units <= 0.0 {
            Cost(0)
        } else {
            Cost((units * SCALE).round() as u64)
        }
    }

    pub const fn from_micro_units(micro: u64) -> Cost {
        Cost(micro)
    }

    pub fn as_units(self) -> f64 {
        self.0 as f64 / SCALE
    }

    pub const fn micro_units(self) -> u64 {
        self.0
    }
}

impl Add for Cost {
    type Output = Cost;
    fn add(self, rhs: Cost) -> Cost {
        Cost(self.0 + rhs.0)
    }
}

impl Sub for Cost {
    type Output = Cost;
    fn sub(self, rhs: Cost) -> Cost {
        Cost(self.0 - rhs.0)
    }
}

impl Mul<u64> for Cost {
    type Output = Cost;
    fn mul(self, rhs: u64) -> Cost {
        Cost(self.0 * rhs)
    }
}

impl Sum for Cost {
    fn sum<I: Iterator<Item = Cost>>(iter: I) -> Cost {
        iter.fold(Cost::ZERO, Add::add)
    }
}

impl fmt::Display for Cost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let whole = self.0 / 1_000_000;
        let frac = self.0 % 1_000_000;
        if frac == 0 {
            write!(f, "{whole}")
        } else {
            let digits = format!("{frac:06}");
            write!(f, "{whole}.{}", digits.trim_end_matches('0'))
        }
    }
}

impl Serialize for Cost {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.as_units())
    }
}

impl<'de> Deserialize<'de> for Cost {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let units = f64::deserialize(d)?;
        if !units.is_finite() || units < 0.0 {
            return Err(serde::de::Error::custom(format!(
                "cost must be a non-negative number, got {units}"
            )));
        }
        Ok(Cost::from_units(units))
    }
}

/// Per-operation costs for the LMA and MAG data paths.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostModel {
    /// Fixed kernel forwarding work for every fast-path packet.
    pub base_kernel: Cost,
    /// Work per rule visited by the linear rule scan.
    pub scan_per_rule: Cost,
    /// Extra work to match and mark a full 6-tuple rule.
    pub selector_match: Cost,
    /// Flat cost of diverting a packet to the user-space queue.
    pub divert: Cost,
    pub install_base: Cost,
    pub install_per_rule: Cost,
    /// Flat MAG bridge cost per packet.
    pub mag_forward: Cost,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            base_kernel: Cost::from_units(12.0),
            scan_per_rule: Cost::from_units(0.063),
            selector_match: Cost::from_units(5.0),
            divert: Cost::from_units(500.0),
            install_base: Cost::from_units(25.0),
            install_per_rule: Cost::from_units(0.05),
            mag_forward: Cost::from_units(8.0),
        }
    }
}

impl CostModel {
    /// Cost of a packet matching the rule at 1-based `rule_index`.
    pub fn fast_path(&self, rule_index: usize, per_flow_rule: bool) -> Cost {
        let matched = if per_flow_rule { self.selector_match } else { Cost::ZERO };
        self.base_kernel + self.scan_per_rule * rule_index as u64 + matched
    }

    /// Latency of installing one more rule when `installed` rules exist.
    pub fn install_latency(&self, installed: usize) -> Cost {
        self.install_base + self.install_per_rule * installed as u64
    }
}
