//! CSV emission. One file per metric family, header first, fixed column
//! order, numbers rounded to 6 significant digits.

use std::fs;
use std::path::{Path, PathBuf};

use crate::harness::metrics::{CostEntity, MetricSet};
use crate::proto::SimTime;

use super::HarnessError;

/// Formats `v` with 6 significant digits, trimming trailing zeros.
pub fn num(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v.is_finite() { "0".into() } else { v.to_string() };
    }
    let magnitude = v.abs().log10().floor() as i32;
    let decimals = (5 - magnitude).max(0) as usize;
    let s = format!("{v:.decimals$}");
    let s = if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    };
    if s == "-0" {
        "0".into()
    } else {
        s
    }
}

pub fn time(t: SimTime) -> String {
    num(t.as_ms_f64())
}

/// An in-memory CSV file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Table {
            name: name.into(),
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, HarnessError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.into_inner().map_err(|e| HarnessError::Experiment(e.to_string()))
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf, HarnessError> {
        let path = dir.join(format!("{}.csv", self.name));
        let bytes = self.to_bytes()?;
        fs::write(&path, bytes).map_err(|source| HarnessError::Io {
            path: path.clone(),
            source,
        })?;
        Ok(path)
    }
}

pub fn create_dir(dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

/// The metric families of a single run.
pub fn metric_tables(m: &MetricSet) -> Vec<Table> {
    let mut flows = Table::new(
        "flows",
        &[
            "flow",
            "rate_kbps",
            "period_ms",
            "emitted",
            "delivered",
            "dropped",
            "diverted",
            "fast_path",
            "ended_dropped",
        ],
    );
    for f in &m.flows {
        flows.push(vec![
            f.name.clone(),
            num(f.rate_kbps),
            time(f.period),
            f.emitted.to_string(),
            f.delivered.to_string(),
            f.dropped().to_string(),
            f.diverted.to_string(),
            f.fast_path.to_string(),
            f.ended_dropped.to_string(),
        ]);
    }

    let mut drops = Table::new("drops", &["flow", "reason", "count"]);
    for f in &m.flows {
        for (reason, n) in &f.drops {
            drops.push(vec![f.name.clone(), reason.to_string(), n.to_string()]);
        }
    }

    let mut costs = Table::new(
        "costs",
        &["flow", "seq", "at_ms", "entity", "cost", "rule_index", "diverted"],
    );
    for c in &m.costs {
        costs.push(vec![
            m.flows.get(c.flow).map_or_else(String::new, |f| f.name.clone()),
            c.seq.to_string(),
            time(c.at),
            match c.entity {
                CostEntity::Lma => "lma".into(),
                CostEntity::Mag => "mag".into(),
            },
            num(c.cost.as_units()),
            c.rule_index.map_or_else(String::new, |i| i.to_string()),
            c.diverted.to_string(),
        ]);
    }

    let mut installs = Table::new(
        "installs",
        &["key", "scheduled_ms", "completes_ms", "installed", "latency"],
    );
    for i in &m.installs {
        installs.push(vec![
            i.flow
                .and_then(|f| m.flows.get(f))
                .map_or_else(|| i.key.to_string(), |f| f.name.clone()),
            time(i.scheduled_at),
            time(i.completes_at),
            i.installed.to_string(),
            num(i.latency.as_units()),
        ]);
    }

    let mut handovers = Table::new("handovers", &["flow", "estimate_ms", "ground_truth_ms", "period_ms"]);
    for h in &m.handovers {
        handovers.push(vec![
            m.flows.get(h.flow).map_or_else(String::new, |f| f.name.clone()),
            num(h.estimate_ms),
            h.ground_truth_ms.map_or_else(String::new, num),
            num(h.period_ms),
        ]);
    }

    let mut signaling = Table::new("signaling", &["kind", "count"]);
    for (k, n) in &m.signaling {
        signaling.push(vec![k.to_string(), n.to_string()]);
    }

    let mut rules = Table::new("rule_table", &["at_ms", "rules"]);
    for (t, n) in &m.rule_table {
        rules.push(vec![time(*t), n.to_string()]);
    }

    vec![flows, drops, costs, installs, handovers, signaling, rules]
}

pub fn write_metrics(m: &MetricSet, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    create_dir(dir)?;
    metric_tables(m).iter().map(|t| t.write(dir)).collect()
}
