//! In-process delivery of gradient messages with payload-only cost metering.
//!
//! A gradient is `K` reals accounted at 4 bytes each, so every delivered
//! message costs exactly `4K` bytes; headers are not counted.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dmf::{apply_neighbor_update, GradientMessage, NodeState, Result};
use crate::geograph::WalkScale;
use crate::scalar::Scalar;

pub const BYTES_PER_COMPONENT: u64 = 4;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserCost {
    pub messages: u64,
    pub bytes: u64,
}

/// Running communication totals. Per-user entries are keyed by sender.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostMeter {
    pub k: usize,
    pub messages: u64,
    pub bytes: u64,
    /// Share of the totals caused by observed (positive) samples.
    pub positive_messages: u64,
    pub positive_bytes: u64,
    pub per_user: BTreeMap<usize, UserCost>,
}

impl CostMeter {
    pub fn new(k: usize) -> Self {
        CostMeter { k, messages: 0, bytes: 0, positive_messages: 0, positive_bytes: 0, per_user: BTreeMap::new() }
    }

    pub fn bytes_per_message(&self) -> u64 {
        BYTES_PER_COMPONENT * self.k as u64
    }

    /// Accounts `count` messages sent by `origin`.
    pub fn record(&mut self, origin: usize, count: usize, positive: bool) {
        if count == 0 {
            return;
        }
        let count = count as u64;
        let bytes = count * self.bytes_per_message();
        self.messages += count;
        self.bytes += bytes;
        if positive {
            self.positive_messages += count;
            self.positive_bytes += bytes;
        }
        let entry = self.per_user.entry(origin).or_default();
        entry.messages += count;
        entry.bytes += bytes;
    }
}

/// One delivery as kept by the optional log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub origin: usize,
    pub item: usize,
    pub order: usize,
    pub recipients: Vec<usize>,
    pub positive: bool,
}

#[derive(Debug, Clone)]
pub struct SimBus {
    meter: CostMeter,
    log: Option<Vec<Delivery>>,
}

impl SimBus {
    pub fn new(k: usize) -> Self {
        SimBus { meter: CostMeter::new(k), log: None }
    }

    /// A bus that also records every delivery.
    pub fn with_log(k: usize) -> Self {
        SimBus { meter: CostMeter::new(k), log: Some(Vec::new()) }
    }

    pub fn meter(&self) -> &CostMeter {
        &self.meter
    }

    pub fn log(&self) -> Option<&[Delivery]> {
        self.log.as_deref()
    }

    /// Hands `msg` to every recipient in ascending user order and meters
    /// `|recipients| * 4K` bytes. An empty recipient list is a no-op.
    pub fn deliver<T: Scalar>(
        &mut self,
        msg: &GradientMessage<T>,
        recipients: &[usize],
        states: &mut [NodeState<T>],
        theta: T,
        scale: WalkScale,
        positive: bool,
    ) -> Result<()> {
        if recipients.is_empty() {
            return Ok(());
        }
        let mut ordered = recipients.to_vec();
        ordered.sort_unstable();
        for &k in &ordered {
            apply_neighbor_update(&mut states[k], msg, theta, scale)?;
        }
        self.meter.record(msg.origin, ordered.len(), positive);
        if let Some(log) = &mut self.log {
            log.push(Delivery { origin: msg.origin, item: msg.item, order: msg.order, recipients: ordered, positive });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserCostRow {
    pub user: usize,
    pub messages: u64,
    pub bytes: u64,
}

/// Serializable communication summary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub k: usize,
    pub bytes_per_message: u64,
    pub messages: u64,
    pub bytes_total: u64,
    pub messages_positive_only: u64,
    pub bytes_positive_only: u64,
    pub per_user: Vec<UserCostRow>,
}

pub fn cost_report(meter: &CostMeter) -> CostReport {
    CostReport {
        k: meter.k,
        bytes_per_message: meter.bytes_per_message(),
        messages: meter.messages,
        bytes_total: meter.bytes,
        messages_positive_only: meter.positive_messages,
        bytes_positive_only: meter.positive_bytes,
        per_user: meter
            .per_user
            .iter()
            .map(|(&user, c)| UserCostRow { user, messages: c.messages, bytes: c.bytes })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn msg(k: usize) -> GradientMessage<f64> {
        GradientMessage { origin: 0, item: 1, grad_p: vec![1.0; k], order: 1, weight: 1.0, layer_size: 3 }
    }

    #[test]
    fn three_recipients_cost_sixty_bytes() {
        let mut states: Vec<NodeState<f64>> = (0..4).map(|i| NodeState::zeros(i, 2, 5)).collect();
        let mut bus = SimBus::new(5);
        bus.deliver(&msg(5), &[3, 1, 2], &mut states, 0.1, WalkScale::Normalized, true).unwrap();
        assert_eq!((bus.meter().messages, bus.meter().bytes), (3, 60));
        assert_eq!(bus.meter().per_user[&0], UserCost { messages: 3, bytes: 60 });
        assert!(states[0].p.iter().all(|&x| x == 0.0));
        assert!(states[1..].iter().all(|s| s.p_row(1).iter().all(|&x| (x + 0.1).abs() < 1e-15)));
    }

    #[test]
    fn empty_delivery_is_noop() {
        let mut states = vec![NodeState::<f64>::zeros(0, 2, 5)];
        let mut bus = SimBus::with_log(5);
        bus.deliver(&msg(5), &[], &mut states, 0.1, WalkScale::Layered, true).unwrap();
        assert_eq!(*bus.meter(), CostMeter::new(5));
        assert!(bus.log().unwrap().is_empty());
    }

    #[test]
    fn fresh_report_is_zero_and_mirrors_meter() {
        let report = cost_report(&CostMeter::new(4));
        assert_eq!((report.messages, report.bytes_total, report.bytes_positive_only), (0, 0, 0));
        assert!(report.per_user.is_empty());

        let mut meter = CostMeter::new(4);
        meter.record(2, 3, true);
        meter.record(2, 1, false);
        meter.record(0, 2, false);
        let report = cost_report(&meter);
        assert_eq!(report.bytes_total, meter.bytes);
        assert_eq!(report.bytes_total, 4 * 4 * report.messages);
        assert_eq!(report.bytes_positive_only, 48);
        assert_eq!(report.per_user.len(), 2);
    }
}
