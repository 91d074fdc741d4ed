//! Gaussian-process map belief and informative path planning for a UAV with
//! an altitude-dependent camera.

mod belief;
mod cmaes;
mod plan;
mod run;

pub use belief::{fuse, init_belief, observe, Kernel, Measurement, SensorModel, TerrainBelief, TruthMap};
pub use cmaes::{cmaes_minimize, CmaesResult};
pub use plan::{
    lawnmower_altitude, plan_lawnmower, replan, utility, MotionModel, PlanState, PlannerConfig, Replanned, Workspace,
};
pub use run::{run_mission, MissionConfig, MissionResult, PlannerKind, TraceSample};
