use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::MissionMessage;
use crate::rng::{stream, SimRng};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LatencyModel {
    Constant { delay: f64 },
    Uniform { min: f64, max: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelConfig {
    pub drop_probability: f64,
    pub latency: LatencyModel,
    /// Silence after which a pending request is sent again (s).
    pub retransmit_period: f64,
    /// Silence after which a pending request fails; `None` waits forever.
    pub deadline: Option<f64>,
    pub seed: u64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            drop_probability: 0.0,
            latency: LatencyModel::Uniform { min: 0.02, max: 0.1 },
            retransmit_period: 1.0,
            deadline: Some(30.0),
            seed: 0,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.drop_probability) {
            return Err(Error::Parameter("drop probability must be in [0, 1]".into()));
        }
        if !(self.retransmit_period > 0.0) {
            return Err(Error::Parameter("retransmit period must be positive".into()));
        }
        if let Some(d) = self.deadline {
            if !(d > 0.0) {
                return Err(Error::Parameter("deadline must be positive".into()));
            }
        }
        let ok = match self.latency {
            LatencyModel::Constant { delay } => delay >= 0.0,
            LatencyModel::Uniform { min, max } => min >= 0.0 && max >= min,
        };
        if !ok {
            return Err(Error::Parameter("latency must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Delivery {
    pub time: f64,
    pub from: String,
    pub msg: MissionMessage,
}

#[derive(Debug, Clone)]
struct InFlight {
    at: f64,
    seq: u64,
    from: String,
    to: String,
    msg: MissionMessage,
}

/// Point-to-point links that drop each message independently and preserve
/// order per `(sender, receiver)` pair.
#[derive(Debug, Clone)]
pub struct LossyChannel {
    cfg: ChannelConfig,
    rng: SimRng,
    seq: u64,
    in_flight: Vec<InFlight>,
    last_arrival: BTreeMap<(String, String), f64>,
    pub sent: u64,
    pub dropped: u64,
}

impl LossyChannel {
    pub fn new(cfg: ChannelConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(LossyChannel {
            rng: stream(cfg.seed, "channel"),
            cfg,
            seq: 0,
            in_flight: Vec::new(),
            last_arrival: BTreeMap::new(),
            sent: 0,
            dropped: 0,
        })
    }

    pub fn config(&self) -> &ChannelConfig {
        &self.cfg
    }

    /// Queues `msg`; returns false if the channel lost it.
    pub fn send(&mut self, now: f64, from: &str, to: &str, msg: MissionMessage) -> bool {
        self.sent += 1;
        // Both draws are always taken so the stream does not depend on outcomes.
        let lost = self.rng.random::<f64>() < self.cfg.drop_probability;
        let delay = match self.cfg.latency {
            LatencyModel::Constant { delay } => delay,
            LatencyModel::Uniform { min, max } => min + (max - min) * self.rng.random::<f64>(),
        };
        if lost {
            self.dropped += 1;
            return false;
        }
        let key = (from.to_string(), to.to_string());
        let at = (now + delay).max(self.last_arrival.get(&key).copied().unwrap_or(f64::NEG_INFINITY));
        self.last_arrival.insert(key, at);
        self.in_flight.push(InFlight { at, seq: self.seq, from: from.into(), to: to.into(), msg });
        self.seq += 1;
        true
    }

    /// Messages for `to` that have arrived by `now`, in arrival order.
    pub fn poll(&mut self, now: f64, to: &str) -> Vec<Delivery> {
        let mut out: Vec<InFlight> = Vec::new();
        let mut keep = Vec::with_capacity(self.in_flight.len());
        for m in self.in_flight.drain(..) {
            if m.to == to && m.at <= now {
                out.push(m);
            } else {
                keep.push(m);
            }
        }
        self.in_flight = keep;
        out.sort_by(|a, b| a.at.total_cmp(&b.at).then(a.seq.cmp(&b.seq)));
        out.into_iter().map(|m| Delivery { time: m.at, from: m.from, msg: m.msg }).collect()
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight.len()
    }
}
