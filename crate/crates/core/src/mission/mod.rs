//! UAV-UGV coordination: a task scheduler, the message protocol and a lossy
//! simulated channel, all driven by simulated time.

mod channel;
mod coord;
mod protocol;
mod task;

pub use channel::{ChannelConfig, Delivery, LatencyModel, LossyChannel};
pub use coord::{
    coordinated_mission, default_tree, pressure_map, threshold_areas, AreaTreatment, CoordinationScenario, LogEvent,
    MissionLog, SurveyConfig, UgvConfig,
};
pub use protocol::{request_exchange, ExchangeStats, RequestEvent, Requester, Responder};
pub use task::{build_tree, Behavior, LeafStatus, Scheduler, Task, TaskSpec, TaskState, Transition};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StatusState {
    Received,
    Running,
    Succeeded,
    Failed,
}

impl StatusState {
    pub fn is_terminal(self) -> bool {
        matches!(self, StatusState::Succeeded | StatusState::Failed)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StatusState::Received => "received",
            StatusState::Running => "running",
            StatusState::Succeeded => "succeeded",
            StatusState::Failed => "failed",
        }
    }
}

/// A set of belief cells flagged for ground intervention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaOfInterest {
    pub id: u64,
    /// Grid origin and cell size (m).
    pub origin: [f64; 2],
    pub resolution: f64,
    /// `[i, j]` cell indices.
    pub cells: Vec<[u32; 2]>,
    /// Mean estimated weed pressure over the cells.
    pub pressure: f64,
}

impl AreaOfInterest {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        let i = ((p[0] - self.origin[0]) / self.resolution).floor();
        let j = ((p[1] - self.origin[1]) / self.resolution).floor();
        i >= 0.0 && j >= 0.0 && self.cells.contains(&[i as u32, j as u32])
    }

    pub fn cell_center(&self, c: [u32; 2]) -> [f64; 2] {
        [
            self.origin[0] + (f64::from(c[0]) + 0.5) * self.resolution,
            self.origin[1] + (f64::from(c[1]) + 0.5) * self.resolution,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MissionMessage {
    UavPose { pose: [f64; 3], stamp: f64 },
    UgvPose { pose: [f64; 3], stamp: f64 },
    AreaOfInterest(AreaOfInterest),
    Request { id: u64, kind: String, payload: String },
    Status { request: u64, state: StatusState },
}

impl MissionMessage {
    /// Short label used in the event log.
    pub fn label(&self) -> String {
        match self {
            MissionMessage::UavPose { .. } => "uav_pose".into(),
            MissionMessage::UgvPose { .. } => "ugv_pose".into(),
            MissionMessage::AreaOfInterest(_) => "aoi".into(),
            MissionMessage::Request { .. } => "request".into(),
            MissionMessage::Status { state, .. } => format!("status:{}", state.as_str()),
        }
    }

    /// Requests and statuses are delivered at least once; the rest may be lost.
    pub fn is_reliable(&self) -> bool {
        matches!(self, MissionMessage::Request { .. } | MissionMessage::Status { .. })
    }

    /// First 16 hex digits of the SHA-256 of the JSON encoding.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("messages serialize");
        hex::encode(&Sha256::digest(&json)[..8])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn message_json_round_trip_and_digest() {
        let msgs = vec![
            MissionMessage::UavPose { pose: [1.0, 2.0, 4.0], stamp: 3.5 },
            MissionMessage::AreaOfInterest(AreaOfInterest {
                id: 1,
                origin: [0.0, 0.0],
                resolution: 1.0,
                cells: vec![[2, 3], [3, 3]],
                pressure: 0.8,
            }),
            MissionMessage::Request { id: 4, kind: "treat".into(), payload: "{}".into() },
            MissionMessage::Status { request: 4, state: StatusState::Received },
        ];
        for m in &msgs {
            let back: MissionMessage = serde_json::from_str(&serde_json::to_string(m).unwrap()).unwrap();
            assert_eq!(&back, m);
            assert_eq!(m.digest().len(), 16);
        }
        assert_ne!(msgs[2].digest(), msgs[3].digest());
        assert_eq!(msgs[3].label(), "status:received");
        assert!(msgs[2].is_reliable() && !msgs[0].is_reliable());
    }

    #[test]
    fn aoi_cell_lookup() {
        let a = AreaOfInterest { id: 1, origin: [0.0, 0.0], resolution: 2.0, cells: vec![[1, 0]], pressure: 1.0 };
        assert!(a.contains([2.5, 1.0]));
        assert!(!a.contains([1.5, 1.0]));
        assert!(!a.contains([-0.5, 1.0]));
        assert_eq!(a.cell_center([1, 0]), [3.0, 1.0]);
    }
}
