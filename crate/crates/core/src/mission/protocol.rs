use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ChannelConfig, LossyChannel, MissionMessage, StatusState};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RequestEvent {
    Status { id: u64, state: StatusState },
    TimedOut { id: u64 },
}

#[derive(Debug, Clone)]
struct Pending {
    msg: MissionMessage,
    last_tx: f64,
    last_heard: f64,
    state: Option<StatusState>,
}

/// Sending side of the request protocol.
///
/// A request stays pending until a terminal status arrives. Any status for it
/// counts as a sign of life; after `retransmit` seconds of silence the
/// request is sent again, and after `deadline` seconds it times out.
#[derive(Debug, Clone)]
pub struct Requester {
    next_id: u64,
    retransmit: f64,
    deadline: Option<f64>,
    pending: BTreeMap<u64, Pending>,
    finished: BTreeMap<u64, Option<StatusState>>,
    pub retransmissions: u64,
}

impl Requester {
    pub fn new(retransmit: f64, deadline: Option<f64>) -> Self {
        Requester {
            next_id: 1,
            retransmit,
            deadline,
            pending: BTreeMap::new(),
            finished: BTreeMap::new(),
            retransmissions: 0,
        }
    }

    pub fn from_channel(cfg: &ChannelConfig) -> Self {
        Requester::new(cfg.retransmit_period, cfg.deadline)
    }

    /// New request with the next id; the caller transmits it.
    pub fn request(&mut self, now: f64, kind: &str, payload: String) -> MissionMessage {
        let id = self.next_id;
        self.next_id += 1;
        let msg = MissionMessage::Request { id, kind: kind.into(), payload };
        self.pending.insert(id, Pending { msg: msg.clone(), last_tx: now, last_heard: now, state: None });
        msg
    }

    /// Records a status; returns an event when it tells something new.
    pub fn on_status(&mut self, now: f64, id: u64, state: StatusState) -> Option<RequestEvent> {
        let p = self.pending.get_mut(&id)?;
        p.last_heard = now;
        if p.state == Some(state) {
            return None;
        }
        p.state = Some(state);
        if state.is_terminal() {
            self.pending.remove(&id);
            self.finished.insert(id, Some(state));
        }
        Some(RequestEvent::Status { id, state })
    }

    /// Retransmissions due at `now`, and requests that timed out.
    pub fn poll(&mut self, now: f64) -> (Vec<MissionMessage>, Vec<RequestEvent>) {
        let (mut resend, mut events) = (Vec::new(), Vec::new());
        let mut expired = Vec::new();
        for (&id, p) in &mut self.pending {
            if self.deadline.is_some_and(|d| now - p.last_heard >= d) {
                expired.push(id);
                events.push(RequestEvent::TimedOut { id });
            } else if now - p.last_tx.max(p.last_heard) >= self.retransmit - 1e-9 {
                p.last_tx = now;
                resend.push(p.msg.clone());
                self.retransmissions += 1;
            }
        }
        for id in expired {
            self.pending.remove(&id);
            self.finished.insert(id, None);
        }
        (resend, events)
    }

    pub fn outstanding(&self) -> usize {
        self.pending.len()
    }

    /// Last state heard for `id`; `Some(None)` marks a timeout.
    pub fn outcome(&self, id: u64) -> Option<Option<StatusState>> {
        self.finished.get(&id).copied().or_else(|| self.pending.get(&id).map(|p| p.state))
    }
}

/// Receiving side: remembers every request id so an effect runs once, and
/// answers duplicates with the current status.
#[derive(Debug, Clone)]
pub struct Responder {
    states: BTreeMap<u64, StatusState>,
    heartbeat: f64,
    last_beat: f64,
    pub duplicates: u64,
}

impl Responder {
    pub fn new(heartbeat: f64) -> Self {
        Responder { states: BTreeMap::new(), heartbeat, last_beat: f64::NEG_INFINITY, duplicates: 0 }
    }

    /// True when the request is new and its effect should be applied, plus
    /// the status to send back.
    pub fn on_request(&mut self, id: u64) -> (bool, MissionMessage) {
        match self.states.get(&id) {
            Some(&state) => {
                self.duplicates += 1;
                (false, MissionMessage::Status { request: id, state })
            }
            None => {
                self.states.insert(id, StatusState::Received);
                (true, MissionMessage::Status { request: id, state: StatusState::Received })
            }
        }
    }

    pub fn set(&mut self, id: u64, state: StatusState) -> MissionMessage {
        self.states.insert(id, state);
        MissionMessage::Status { request: id, state }
    }

    pub fn state(&self, id: u64) -> Option<StatusState> {
        self.states.get(&id).copied()
    }

    /// Current status of every unfinished request, once per heartbeat period.
    pub fn heartbeat(&mut self, now: f64) -> Vec<MissionMessage> {
        if now - self.last_beat < self.heartbeat - 1e-9 {
            return Vec::new();
        }
        self.last_beat = now;
        self.states
            .iter()
            .filter(|(_, s)| !s.is_terminal())
            .map(|(&request, &state)| MissionMessage::Status { request, state })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExchangeStats {
    pub requests: usize,
    /// Effect applications per request id.
    pub effects: BTreeMap<u64, u32>,
    pub succeeded: usize,
    pub timed_out: usize,
    pub retransmissions: u64,
    pub duplicates: u64,
    pub end_time: f64,
}

impl ExchangeStats {
    pub fn effect_once(&self) -> bool {
        self.effects.len() == self.requests && self.effects.values().all(|&n| n == 1)
    }
}

/// Issues `n` requests, ten per second, from `a` to `b` and runs until all of
/// them finish. The receiver applies each effect and reports success at once.
pub fn request_exchange(n: usize, cfg: &ChannelConfig) -> Result<ExchangeStats> {
    let mut ch = LossyChannel::new(cfg.clone())?;
    let mut req = Requester::from_channel(cfg);
    let mut resp = Responder::new(0.5 * cfg.retransmit_period);
    let mut effects = BTreeMap::new();
    let (mut succeeded, mut timed_out) = (0, 0);
    let dt = 0.05;
    let mut step = 0u64;
    let mut issued = 0;
    loop {
        let now = step as f64 * dt;
        if issued < n && step % 2 == 0 {
            let m = req.request(now, "effect", format!("{issued}"));
            ch.send(now, "a", "b", m);
            issued += 1;
        }
        for d in ch.poll(now, "b") {
            if let MissionMessage::Request { id, .. } = d.msg {
                let (new, reply) = resp.on_request(id);
                ch.send(now, "b", "a", reply);
                if new {
                    *effects.entry(id).or_insert(0) += 1;
                    let done = resp.set(id, StatusState::Succeeded);
                    ch.send(now, "b", "a", done);
                }
            }
        }
        for d in ch.poll(now, "a") {
            if let MissionMessage::Status { request, state } = d.msg {
                if let Some(RequestEvent::Status { state: StatusState::Succeeded, .. }) = req.on_status(now, request, state) {
                    succeeded += 1;
                }
            }
        }
        let (resend, events) = req.poll(now);
        for m in resend {
            ch.send(now, "a", "b", m);
        }
        timed_out += events.len();
        for m in resp.heartbeat(now) {
            ch.send(now, "b", "a", m);
        }
        step += 1;
        if issued == n && req.outstanding() == 0 {
            return Ok(ExchangeStats {
                requests: n,
                effects,
                succeeded,
                timed_out,
                retransmissions: req.retransmissions,
                duplicates: resp.duplicates,
                end_time: now,
            });
        }
    }
}
