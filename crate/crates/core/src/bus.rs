//! Shared broadcast bus with per-receiver Bernoulli loss for measurements.
//!
//! Inputs and estimate resets are never dropped, and a sender always hears
//! its own broadcast.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::Vector;
use crate::rng::{stream_rng, StreamId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MessageKind {
    Measurement,
    Input,
    EstimateReset,
}

impl MessageKind {
    pub fn label(self) -> &'static str {
        match self {
            MessageKind::Measurement => "measurement",
            MessageKind::Input => "input",
            MessageKind::EstimateReset => "reset",
        }
    }
}

/// Identity of a message: enough to address its random loss stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MessageId {
    pub kind: MessageKind,
    pub sender: usize,
    pub k: usize,
    pub group: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BusMessage {
    pub id: MessageId,
    pub payload: Vector,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropMode {
    /// Each receiver draws independently.
    #[default]
    PerReceiver,
    /// One draw per message; either every remote receiver gets it or none does.
    Global,
}

/// A deterministic loss injected at a specific (message, receiver).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForcedDrop {
    pub k: usize,
    pub sender: usize,
    pub group: usize,
    pub receiver: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DropModel {
    pub p_measurement: f64,
    pub mode: DropMode,
    pub forced: Vec<ForcedDrop>,
}

impl DropModel {
    pub fn lossless() -> Self {
        Self::default()
    }

    pub fn probability(&self, kind: MessageKind) -> f64 {
        match kind {
            MessageKind::Measurement => self.p_measurement,
            MessageKind::Input | MessageKind::EstimateReset => 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DeliveryReport {
    pub message: MessageId,
    /// Sorted; always contains the sender.
    pub delivered_to: Vec<usize>,
    /// Sorted remote receivers that lost the message.
    pub dropped_at: Vec<usize>,
}

impl DeliveryReport {
    pub fn delivered(&self, agent: usize) -> bool {
        self.delivered_to.binary_search(&agent).is_ok()
    }
}

/// Pure loss decision for `(seed, message, receiver)`; `true` means dropped.
pub fn drop_sample(seed: u64, id: &MessageId, receiver: usize, p: f64) -> bool {
    if p <= 0.0 {
        return false;
    }
    let stream = StreamId::Drop {
        sender: id.sender as u16,
        group: id.group as u16,
        receiver: receiver as u16,
    };
    let u: f64 = stream_rng(seed, stream, id.k as u64).random();
    u < p
}

fn global_drop_sample(seed: u64, id: &MessageId, p: f64) -> bool {
    if p <= 0.0 {
        return false;
    }
    let stream = StreamId::GlobalDrop {
        sender: id.sender as u16,
        group: id.group as u16,
    };
    let u: f64 = stream_rng(seed, stream, id.k as u64).random();
    u < p
}

/// Delivers `msg` to `agents` receivers under `model`.
pub fn broadcast(msg: &BusMessage, model: &DropModel, agents: usize, seed: u64) -> DeliveryReport {
    let id = msg.id;
    let p = model.probability(id.kind);
    let global = model.mode == DropMode::Global && global_drop_sample(seed, &id, p);
    let mut delivered_to = Vec::with_capacity(agents);
    let mut dropped_at = Vec::new();
    for receiver in 0..agents {
        let lost = receiver != id.sender
            && id.kind == MessageKind::Measurement
            && (model.forced.iter().any(|f| {
                f.k == id.k && f.sender == id.sender && f.group == id.group && f.receiver == receiver
            }) || match model.mode {
                DropMode::PerReceiver => drop_sample(seed, &id, receiver, p),
                DropMode::Global => global,
            });
        if lost {
            dropped_at.push(receiver);
        } else {
            delivered_to.push(receiver);
        }
    }
    DeliveryReport {
        message: id,
        delivered_to,
        dropped_at,
    }
}
