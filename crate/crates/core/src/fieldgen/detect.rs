use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use super::{FieldTruth, Species};
use crate::rng::stream;

/// Straight constant-speed pass of the detection camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraPass {
    pub start: [f64; 2],
    /// Travel direction (rad).
    pub heading: f64,
    pub speed: f64,
    pub duration: f64,
    pub frame_period: f64,
    /// Footprint size `[along, across]` (m), centered on the camera.
    pub footprint: [f64; 2],
}

impl CameraPass {
    pub fn position(&self, t: f64) -> [f64; 2] {
        [
            self.start[0] + self.speed * t * self.heading.cos(),
            self.start[1] + self.speed * t * self.heading.sin(),
        ]
    }

    /// `(along, lateral)` coordinates of `p` relative to the pass start.
    pub fn to_track(&self, p: [f64; 2]) -> [f64; 2] {
        let (c, s) = (self.heading.cos(), self.heading.sin());
        let (dx, dy) = (p[0] - self.start[0], p[1] - self.start[1]);
        [dx * c + dy * s, -dx * s + dy * c]
    }

    pub fn frame_count(&self) -> usize {
        (self.duration / self.frame_period).floor() as usize + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DelayModel {
    Constant { delay: f64 },
    Uniform { min: f64, max: f64 },
    /// `offset + Exp(mean)`.
    Exponential { offset: f64, mean: f64 },
}

impl DelayModel {
    fn sample(&self, rng: &mut crate::rng::SimRng) -> f64 {
        match *self {
            DelayModel::Constant { delay } => delay.max(0.0),
            DelayModel::Uniform { min, max } => {
                if max > min {
                    rng.random_range(min..max).max(0.0)
                } else {
                    min.max(0.0)
                }
            }
            DelayModel::Exponential { offset, mean } => {
                let e = if mean > 0.0 {
                    Exp::new(1.0 / mean).expect("positive rate").sample(rng)
                } else {
                    0.0
                };
                (offset + e).max(0.0)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorParams {
    pub position_sigma: f64,
    pub radius_sigma: f64,
    /// Probability that a single detection carries the wrong crop/weed label.
    pub confusion: f64,
    pub delay: DelayModel,
    pub seed: u64,
}

impl Default for DetectorParams {
    fn default() -> Self {
        DetectorParams {
            position_sigma: 0.002,
            radius_sigma: 0.001,
            confusion: 0.05,
            delay: DelayModel::Uniform { min: 0.1, max: 0.4 },
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub plant_id: u32,
    pub measured_position: [f64; 2],
    pub position_sigma: f64,
    pub measured_radius: f64,
    pub raw_label: Species,
    pub label_confidence: f64,
    /// Acquisition time of the frame (s).
    pub timestamp: f64,
    /// Time until the classification is available (s).
    pub delivery_delay: f64,
}

impl DetectionEvent {
    pub fn delivery_time(&self) -> f64 {
        self.timestamp + self.delivery_delay
    }
}

/// Emits one event per frame in which a plant stem lies inside the camera
/// footprint, ordered by `(timestamp, plant_id)`.
pub fn simulate_detections(
    truth: &FieldTruth,
    pass: &CameraPass,
    params: &DetectorParams,
) -> Vec<DetectionEvent> {
    let mut rng = stream(params.seed, "detections");
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let confidence = (1.0 - params.confusion).clamp(0.01, 0.99);
    let [half_along, half_across] = pass.footprint.map(|v| 0.5 * v);
    let travel = pass.speed * pass.frame_period;

    // Plants are visited in id order so the stream does not depend on frames.
    let mut events = Vec::new();
    for plant in &truth.plants {
        let [a, l] = pass.to_track(plant.xy());
        if l.abs() > half_across {
            continue;
        }
        let k0 = if travel > 0.0 {
            ((a - half_along) / travel).ceil().max(0.0) as usize
        } else if a.abs() <= half_along {
            0
        } else {
            continue;
        };
        for k in k0..pass.frame_count() {
            let t = k as f64 * pass.frame_period;
            let rel = a - pass.speed * t;
            if rel > half_along {
                continue;
            }
            if rel < -half_along {
                break;
            }
            let flipped = rng.random::<f64>() < params.confusion;
            let raw_label = if !flipped {
                plant.species
            } else if plant.species == Species::Crop {
                Species::Weed
            } else {
                Species::Crop
            };
            let nx: f64 = unit.sample(&mut rng);
            let ny: f64 = unit.sample(&mut rng);
            let nr: f64 = unit.sample(&mut rng);
            events.push(DetectionEvent {
                plant_id: plant.id,
                measured_position: [
                    plant.stem[0] + params.position_sigma * nx,
                    plant.stem[1] + params.position_sigma * ny,
                ],
                position_sigma: params.position_sigma,
                measured_radius: (plant.radius + params.radius_sigma * nr).max(1e-4),
                raw_label,
                label_confidence: confidence,
                timestamp: t,
                delivery_delay: params.delay.sample(&mut rng),
            });
        }
    }
    events.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp).then(a.plant_id.cmp(&b.plant_id)));
    events
}
