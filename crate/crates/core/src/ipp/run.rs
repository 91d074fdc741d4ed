use serde::{Deserialize, Serialize};

use super::{
    init_belief, lawnmower_altitude, observe, plan_lawnmower, Kernel, MotionModel, PlanState, PlannerConfig,
    SensorModel, TerrainBelief, TruthMap,
};
use super::plan::{replan_cached, InfoCache};
use crate::rng::stream;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlannerKind {
    Cmaes,
    Lawnmower,
}

impl PlannerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PlannerKind::Cmaes => "cmaes",
            PlannerKind::Lawnmower => "lawnmower",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MissionConfig {
    pub extent: [f64; 2],
    pub resolution: f64,
    pub prior_mean: f64,
    pub kernel: Kernel,
    pub sensor: SensorModel,
    pub motion: MotionModel,
    pub start: [f64; 3],
    pub planner: PlannerConfig,
    /// Fixed sweep altitude; `None` picks the lowest one that covers the
    /// field within the budget.
    pub lawnmower_altitude: Option<f64>,
    /// Number of weed-pressure hotspots in the simulated truth.
    pub hotspots: usize,
}

impl Default for MissionConfig {
    fn default() -> Self {
        MissionConfig {
            extent: [30.0, 30.0],
            resolution: 1.0,
            prior_mean: 0.5,
            kernel: Kernel::default(),
            sensor: SensorModel::default(),
            motion: MotionModel::default(),
            start: [0.0, 0.0, 4.0],
            planner: PlannerConfig::default(),
            lawnmower_altitude: None,
            hotspots: 4,
        }
    }
}

impl MissionConfig {
    pub fn prior(&self) -> Result<TerrainBelief> {
        self.sensor.validate()?;
        if !(self.motion.speed > 0.0 && self.motion.dwell >= 0.0) {
            return Err(Error::Parameter("speed must be positive and dwell non-negative".into()));
        }
        init_belief(self.extent, self.resolution, self.prior_mean, self.kernel)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    pub t: f64,
    pub trace: f64,
    pub pose: [f64; 3],
}

#[derive(Debug, Clone)]
pub struct MissionResult {
    pub planner: PlannerKind,
    pub belief: TerrainBelief,
    /// Measurement sites in visiting order.
    pub trajectory: Vec<[f64; 3]>,
    /// Starts with the prior at `t = 0`, then one sample per measurement.
    pub history: Vec<TraceSample>,
}

impl MissionResult {
    pub fn final_trace(&self) -> f64 {
        self.belief.trace()
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("time_s,trace,x,y,z\n");
        for s in &self.history {
            out.push_str(&format!("{:.3},{:.9},{:.4},{:.4},{:.4}\n", s.t, s.trace, s.pose[0], s.pose[1], s.pose[2]));
        }
        out
    }
}

struct Executor<'a> {
    belief: TerrainBelief,
    truth: &'a TruthMap,
    sensor: SensorModel,
    motion: MotionModel,
    budget: f64,
    t: f64,
    pose: [f64; 3],
    rng: crate::rng::SimRng,
    trajectory: Vec<[f64; 3]>,
    history: Vec<TraceSample>,
}

impl Executor<'_> {
    /// Flies to `w` and measures there; false when the budget does not allow
    /// it. A planner cache is kept in step with the belief.
    fn visit(&mut self, w: [f64; 3], cache: Option<&mut InfoCache>) -> Result<bool> {
        let dt = self.motion.segment_time(self.pose, w);
        if self.t + dt > self.budget + 1e-9 {
            return Ok(false);
        }
        self.t += dt;
        self.pose = w;
        let m = observe(&self.belief, w, &self.sensor, self.truth, &mut self.rng)?;
        if let Some(step) = self.belief.fuse_factors(&m)? {
            if let Some(cache) = cache {
                cache.absorb(&self.belief.cov, &m.cells, &step);
            }
        }
        self.trajectory.push(w);
        self.history.push(TraceSample { t: self.t, trace: self.belief.trace(), pose: w });
        Ok(true)
    }
}

/// Flies one mission and records the map uncertainty after each measurement.
pub fn run_mission(
    truth: &TruthMap,
    cfg: &MissionConfig,
    planner: PlannerKind,
    budget: f64,
    seed: u64,
) -> Result<MissionResult> {
    let prior = cfg.prior()?;
    if truth.values.len() != prior.len() {
        return Err(Error::ContractViolation("truth map does not match the belief grid".into()));
    }
    let mut ex = Executor {
        history: vec![TraceSample { t: 0.0, trace: prior.trace(), pose: cfg.start }],
        belief: prior,
        truth,
        sensor: cfg.sensor,
        motion: cfg.motion,
        budget: budget.max(0.0),
        t: 0.0,
        pose: cfg.start,
        rng: stream(seed, "ipp-measurement"),
        trajectory: Vec::new(),
    };
    match planner {
        PlannerKind::Lawnmower => {
            let h = cfg
                .lawnmower_altitude
                .unwrap_or_else(|| lawnmower_altitude(cfg.extent, &cfg.sensor, cfg.start, cfg.motion, ex.budget));
            let side = cfg.sensor.footprint_side(h);
            let plan = plan_lawnmower(cfg.extent, h, side, ex.budget, cfg.start, cfg.motion)?;
            for w in plan.waypoints {
                if !ex.visit(w, None)? {
                    break;
                }
            }
        }
        PlannerKind::Cmaes => {
            let mut cache = InfoCache::new(&ex.belief.cov, None);
            let mut round = 0u64;
            'mission: while ex.budget - ex.t > cfg.motion.dwell {
                let state = PlanState {
                    pose: ex.pose,
                    remaining_budget: ex.budget - ex.t,
                    motion: cfg.motion,
                    waypoints: Vec::new(),
                };
                let pc = PlannerConfig { seed: crate::rng::mix(seed ^ cfg.planner.seed, &format!("replan-{round}")), ..cfg.planner.clone() };
                let plan = match replan_cached(&cache, &ex.belief, &state, &cfg.sensor, &pc) {
                    Ok(r) => r.plan,
                    Err(Error::ExhaustedWorkspace(_)) => break,
                    Err(e) => return Err(e),
                };
                for w in plan.waypoints {
                    if !ex.visit(w, Some(&mut cache))? {
                        break 'mission;
                    }
                }
                round += 1;
            }
        }
    }
    Ok(MissionResult { planner, belief: ex.belief, trajectory: ex.trajectory, history: ex.history })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> MissionConfig {
        MissionConfig {
            extent: [12.0, 12.0],
            planner: PlannerConfig { max_evals: 30, grid_step: 4.0, ..Default::default() },
            ..Default::default()
        }
    }

    #[test]
    fn zero_budget_leaves_belief_unchanged() {
        let cfg = small();
        let prior = cfg.prior().unwrap();
        let truth = TruthMap::hotspots(&prior, 2, 1);
        for p in [PlannerKind::Cmaes, PlannerKind::Lawnmower] {
            let r = run_mission(&truth, &cfg, p, 0.0, 1).unwrap();
            assert_eq!(r.belief, prior);
            assert_eq!(r.history.len(), 1);
        }
    }

    #[test]
    fn missions_respect_budget_and_shrink_trace() {
        let cfg = small();
        let prior = cfg.prior().unwrap();
        let truth = TruthMap::hotspots(&prior, 2, 2);
        for p in [PlannerKind::Cmaes, PlannerKind::Lawnmower] {
            let r = run_mission(&truth, &cfg, p, 40.0, 3).unwrap();
            assert!(r.history.len() > 1);
            assert!(r.history.windows(2).all(|w| w[1].trace <= w[0].trace + 1e-9 && w[1].t >= w[0].t));
            assert!(r.history.last().unwrap().t <= 40.0 + 1e-9);
            assert!(r.belief.max_asymmetry() < 1e-9);
            let again = run_mission(&truth, &cfg, p, 40.0, 3).unwrap();
            assert_eq!(r.csv(), again.csv());
        }
    }
}
