//! Handover latency from delivery timestamps at the receiver.

use crate::harness::metrics::{Delivery, HandoverSample, MetricSet};
use crate::harness::trace::{Record, Trace};
use crate::proto::{LinkId, SimTime, TrafficSelector};

use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HandoverEstimate {
    /// Delivery gap minus one packet period.
    pub estimate_ms: f64,
    /// Time from the old link going away to the first packet on the new
    /// one, when the trace records such an event.
    pub ground_truth_ms: Option<f64>,
    pub last_old: SimTime,
    pub first_new: SimTime,
    pub from: (usize, LinkId),
    pub to: (usize, LinkId),
}

/// Finds the first change of receiving interface or link.
fn first_change(deliveries: &[Delivery]) -> Option<(Delivery, Delivery)> {
    deliveries
        .windows(2)
        .find(|w| (w[0].iface, w[0].link) != (w[1].iface, w[1].link))
        .map(|w| (w[0], w[1]))
}

fn ground_truth(trace: &Trace, old: LinkId, first_new: SimTime) -> Option<SimTime> {
    trace
        .records
        .iter()
        .take_while(|r| r.time <= first_new)
        .filter(|r| match &r.record {
            Record::Detach { link, .. } => *link == old,
            Record::LinkState { link, up } => *link == old && !up,
            _ => false,
        })
        .map(|r| r.time)
        .last()
}

fn estimate(trace: &Trace, deliveries: &[Delivery], period: SimTime) -> Option<HandoverEstimate> {
    let (old, new) = first_change(deliveries)?;
    let gap = new.at.saturating_sub(old.at).as_ms_f64();
    Some(HandoverEstimate {
        estimate_ms: gap - period.as_ms_f64(),
        ground_truth_ms: ground_truth(trace, old.link, new.at).map(|t| (new.at - t).as_ms_f64()),
        last_old: old.at,
        first_new: new.at,
        from: (old.iface, old.link),
        to: (new.iface, new.link),
    })
}

/// Estimates the handover of one flow from the deliveries in `trace`.
pub fn measure_handover(
    trace: &Trace,
    selector: &TrafficSelector,
    period: SimTime,
) -> Result<HandoverEstimate, HarnessError> {
    let flow = trace
        .flow_index(selector)
        .ok_or_else(|| HarnessError::UnknownFlow(selector.to_string()))?;
    let deliveries: Vec<Delivery> = trace
        .records
        .iter()
        .filter_map(|r| match r.record {
            Record::Deliver {
                flow: f,
                seq,
                iface,
                link,
            } if f == flow => Some(Delivery {
                seq,
                at: r.time,
                iface,
                link,
            }),
            _ => None,
        })
        .collect();
    estimate(trace, &deliveries, period).ok_or_else(|| HarnessError::NoHandoverObserved(trace.flows[flow].0.clone()))
}

/// One sample per flow that changed receiving interface or link.
pub fn measure_all(trace: &Trace, metrics: &MetricSet) -> Vec<HandoverSample> {
    metrics
        .flows
        .iter()
        .enumerate()
        .filter_map(|(i, f)| {
            let e = estimate(trace, &f.deliveries, f.period)?;
            Some(HandoverSample {
                flow: i,
                estimate_ms: e.estimate_ms,
                ground_truth_ms: e.ground_truth_ms,
                period_ms: f.period.as_ms_f64(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(seq: u64, ms: u64, iface: usize) -> Delivery {
        Delivery {
            seq,
            at: SimTime::from_ms(ms),
            iface,
            link: LinkId(iface as u16),
        }
    }

    #[test]
    fn gap_minus_period() {
        let trace = Trace::default();
        let dl = [d(0, 0, 0), d(1, 20, 0), d(2, 40, 0), d(5, 130, 1), d(6, 150, 1)];
        let e = estimate(&trace, &dl, SimTime::from_ms(20)).unwrap();
        assert_eq!(e.estimate_ms, 70.0);
        assert_eq!(e.ground_truth_ms, None);
    }

    #[test]
    fn no_change_means_no_estimate() {
        let dl = [d(0, 0, 0), d(1, 20, 0)];
        assert!(estimate(&Trace::default(), &dl, SimTime::from_ms(20)).is_none());
    }

    #[test]
    fn ground_truth_uses_latest_loss_of_old_link() {
        let mut trace = Trace::default();
        trace.push(
            SimTime::from_ms(10),
            crate::proto::NodeId(0),
            Record::LinkState {
                link: LinkId(0),
                up: false,
            },
        );
        trace.push(
            SimTime::from_ms(45),
            crate::proto::NodeId(0),
            Record::LinkState {
                link: LinkId(0),
                up: false,
            },
        );
        trace.push(
            SimTime::from_ms(200),
            crate::proto::NodeId(0),
            Record::LinkState {
                link: LinkId(0),
                up: false,
            },
        );
        let dl = [d(0, 40, 0), d(5, 130, 1)];
        let e = estimate(&trace, &dl, SimTime::from_ms(20)).unwrap();
        assert_eq!(e.ground_truth_ms, Some(85.0));
    }
}
