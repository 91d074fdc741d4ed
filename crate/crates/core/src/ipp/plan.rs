use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::belief::{condition, Conditioned};
use super::{cmaes_minimize, SensorModel, TerrainBelief};
use crate::{Error, Result};

/// Straight segments at constant speed, plus a fixed time spent at each
/// measurement site.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotionModel {
    /// m/s.
    pub speed: f64,
    /// s per measurement.
    pub dwell: f64,
}

impl Default for MotionModel {
    fn default() -> Self {
        MotionModel { speed: 2.0, dwell: 1.0 }
    }
}

impl MotionModel {
    pub fn segment_time(&self, a: [f64; 3], b: [f64; 3]) -> f64 {
        let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
        d / self.speed + self.dwell
    }

    pub fn travel_time(&self, start: [f64; 3], waypoints: &[[f64; 3]]) -> f64 {
        let mut t = 0.0;
        let mut at = start;
        for &w in waypoints {
            t += self.segment_time(at, w);
            at = w;
        }
        t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanState {
    pub pose: [f64; 3],
    /// Seconds left in the mission.
    pub remaining_budget: f64,
    pub motion: MotionModel,
    /// Measurement sites, visited in order.
    pub waypoints: Vec<[f64; 3]>,
}

impl PlanState {
    pub fn travel_time(&self) -> f64 {
        self.motion.travel_time(self.pose, &self.waypoints)
    }
}

/// Axis-aligned box of admissible waypoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Workspace {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Workspace {
    pub fn new(belief: &TerrainBelief, sensor: &SensorModel) -> Self {
        Workspace {
            min: [0.0, 0.0, sensor.min_altitude],
            max: [belief.extent[0], belief.extent[1], sensor.max_altitude],
        }
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] - 1e-9 && p[k] <= self.max[k] + 1e-9)
    }
}

/// Reduction of `tr(W P)` from conditioning on `rows`, computed from the
/// columns of `P` only.
pub(crate) fn trace_reduction(cov: &DMatrix<f64>, rows: &[(usize, f64)], weights: Option<&[f64]>) -> f64 {
    let m = rows.len();
    if m == 0 {
        return 0.0;
    }
    let n = cov.nrows();
    let b = DMatrix::from_fn(n, m, |r, c| cov[(r, rows[c].0)]);
    let wb = match weights {
        Some(w) => DMatrix::from_fn(n, m, |r, c| w[r] * b[(r, c)]),
        None => b.clone(),
    };
    let mut s = DMatrix::from_fn(m, m, |r, c| b[(rows[r].0, c)]);
    for (k, &(_, v)) in rows.iter().enumerate() {
        s[(k, k)] += v;
    }
    let g = b.transpose() * wb;
    match s.cholesky() {
        Some(ch) => ch.solve(&g).trace().max(0.0),
        None => 0.0,
    }
}

/// Covariance together with `G = P W P`, so the reduction of any row set
/// costs only an `m × m` solve. Conditioning updates `G` at rank `m`.
#[derive(Debug, Clone)]
pub(crate) struct InfoCache {
    cov: DMatrix<f64>,
    g: DMatrix<f64>,
    weights: Option<Vec<f64>>,
}

impl InfoCache {
    pub(crate) fn new(cov: &DMatrix<f64>, weights: Option<&[f64]>) -> Self {
        let g = match weights {
            Some(w) => {
                let wp = DMatrix::from_fn(cov.nrows(), cov.ncols(), |r, c| w[r] * cov[(r, c)]);
                cov * wp
            }
            None => cov * cov,
        };
        InfoCache { cov: cov.clone(), g, weights: weights.map(<[f64]>::to_vec) }
    }

    #[cfg(test)]
    pub(crate) fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub(crate) fn reduction(&self, rows: &[(usize, f64)]) -> f64 {
        let m = rows.len();
        if m == 0 {
            return 0.0;
        }
        let mut s = DMatrix::from_fn(m, m, |r, c| self.cov[(rows[r].0, rows[c].0)]);
        for (k, &(_, v)) in rows.iter().enumerate() {
            s[(k, k)] += v;
        }
        let g = DMatrix::from_fn(m, m, |r, c| self.g[(rows[r].0, rows[c].0)]);
        match s.cholesky() {
            Some(ch) => ch.solve(&g).trace().max(0.0),
            None => 0.0,
        }
    }

    pub(crate) fn condition(&mut self, rows: &[(usize, f64)]) -> Result<()> {
        if rows.is_empty() {
            return Ok(());
        }
        let step = condition(&mut self.cov, rows)?;
        self.update_g(rows, &step);
        Ok(())
    }

    /// Takes over a covariance that was conditioned elsewhere with `step`.
    pub(crate) fn absorb(&mut self, cov: &DMatrix<f64>, cells: &[usize], step: &Conditioned) {
        self.cov.copy_from(cov);
        let rows: Vec<(usize, f64)> = cells.iter().map(|&c| (c, 0.0)).collect();
        self.update_g(&rows, step);
    }

    /// `P' = P − B X` gives `G' = G − C X − (C X)ᵀ + B (X W B) X` with
    /// `C = P W B`, which is the `rows` columns of `G`.
    fn update_g(&mut self, rows: &[(usize, f64)], step: &Conditioned) {
        let Conditioned { b, x } = step;
        let n = self.g.nrows();
        let c = DMatrix::from_fn(n, rows.len(), |r, k| self.g[(r, rows[k].0)]);
        let wb = match &self.weights {
            Some(w) => DMatrix::from_fn(n, rows.len(), |r, k| w[r] * b[(r, k)]),
            None => b.clone(),
        };
        let cx = &c * x;
        let bd = b * (x * wb);
        self.g -= &cx + cx.transpose();
        self.g.gemm(1.0, &bd, x, 1.0);
        let sym = (&self.g + self.g.transpose()) * 0.5;
        self.g = sym;
    }
}

fn plan_rows(belief: &TerrainBelief, sensor: &SensorModel, waypoints: &[[f64; 3]]) -> Vec<(usize, f64)> {
    waypoints.iter().flat_map(|&w| sensor.rows(belief, w)).collect()
}

fn check_weights(belief: &TerrainBelief, weights: Option<&[f64]>) -> Result<()> {
    if let Some(w) = weights {
        if w.len() != belief.len() || w.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Parameter("utility weights must be one non-negative value per cell".into()));
        }
    }
    Ok(())
}

/// Trace reduction per second of a plan under simulated fusion at every
/// waypoint. `weights` scales each cell's variance in the trace.
pub fn utility(belief: &TerrainBelief, plan: &PlanState, sensor: &SensorModel, weights: Option<&[f64]>) -> Result<f64> {
    if plan.waypoints.is_empty() {
        return Ok(0.0);
    }
    check_weights(belief, weights)?;
    for w in &plan.waypoints {
        if !(w[2] >= sensor.min_altitude - 1e-12 && w[2] <= sensor.max_altitude + 1e-12) {
            return Err(Error::InvalidObservation(format!("waypoint altitude {} outside sensor limits", w[2])));
        }
    }
    let rows = plan_rows(belief, sensor, &plan.waypoints);
    Ok(trace_reduction(&belief.cov, &rows, weights) / plan.travel_time())
}

fn sweep(extent: f64, spacing: f64) -> Vec<f64> {
    let n = (extent / spacing - 1e-9).ceil().max(1.0) as usize;
    (0..n).map(|k| (k as f64 + 0.5) * extent / n as f64).collect()
}

/// Boustrophedon sweep at a fixed altitude with sites no farther apart than
/// `spacing`, truncated when the next site would exceed `budget`.
pub fn plan_lawnmower(
    extent: [f64; 2],
    altitude: f64,
    spacing: f64,
    budget: f64,
    start: [f64; 3],
    motion: MotionModel,
) -> Result<PlanState> {
    if !(spacing > 0.0) {
        return Err(Error::Parameter("lawnmower spacing must be positive".into()));
    }
    let xs = sweep(extent[0], spacing);
    let ys = sweep(extent[1], spacing);
    let mut waypoints = Vec::new();
    let mut t = 0.0;
    let mut at = start;
    'outer: for (j, &y) in ys.iter().enumerate() {
        let row: Vec<f64> = if j % 2 == 0 { xs.clone() } else { xs.iter().rev().copied().collect() };
        for x in row {
            let w = [x, y, altitude];
            let dt = motion.segment_time(at, w);
            if t + dt > budget + 1e-9 {
                break 'outer;
            }
            t += dt;
            at = w;
            waypoints.push(w);
        }
    }
    Ok(PlanState { pose: start, remaining_budget: budget, motion, waypoints })
}

/// Lowest altitude (0.05 m steps) whose gap-free sweep, with spacing equal
/// to the footprint side, fits the budget; the ceiling if none does.
pub fn lawnmower_altitude(extent: [f64; 2], sensor: &SensorModel, start: [f64; 3], motion: MotionModel, budget: f64) -> f64 {
    let mut h = sensor.min_altitude;
    while h < sensor.max_altitude {
        let side = sensor.footprint_side(h);
        let full = sweep(extent[0], side).len() * sweep(extent[1], side).len();
        if let Ok(p) = plan_lawnmower(extent, h, side, budget, start, motion) {
            if p.waypoints.len() == full {
                return h;
            }
        }
        h += 0.05;
    }
    sensor.max_altitude
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    /// Horizontal spacing of the coarse search lattice (m).
    pub grid_step: f64,
    /// Altitude levels of the lattice, evenly spread over the sensor range.
    pub grid_levels: usize,
    /// Waypoints per plan.
    pub horizon: usize,
    /// Initial step in normalised workspace coordinates.
    pub sigma0: f64,
    pub population: Option<usize>,
    pub max_evals: usize,
    pub seed: u64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            grid_step: 3.0,
            grid_levels: 8,
            horizon: 2,
            sigma0: 0.15,
            population: None,
            max_evals: 40,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Replanned {
    pub plan: PlanState,
    /// Utility of the greedy lattice plan that seeded CMA-ES.
    pub grid_utility: f64,
    pub utility: f64,
    pub evaluations: usize,
}

fn lattice(ws: &Workspace, cfg: &PlannerConfig) -> Vec<[f64; 3]> {
    let xs = sweep(ws.max[0] - ws.min[0], cfg.grid_step);
    let ys = sweep(ws.max[1] - ws.min[1], cfg.grid_step);
    let zs: Vec<f64> = if cfg.grid_levels <= 1 {
        vec![ws.min[2]]
    } else {
        (0..cfg.grid_levels)
            .map(|k| ws.min[2] + (ws.max[2] - ws.min[2]) * k as f64 / (cfg.grid_levels - 1) as f64)
            .collect()
    };
    let mut out = Vec::new();
    for &z in &zs {
        for &y in &ys {
            for &x in &xs {
                out.push([ws.min[0] + x, ws.min[1] + y, z]);
            }
        }
    }
    out
}

/// Greedy lattice search for the horizon, then CMA-ES over the stacked
/// waypoints; the CMA-ES result is kept only if it beats the lattice plan.
pub fn replan(
    belief: &TerrainBelief,
    state: &PlanState,
    sensor: &SensorModel,
    cfg: &PlannerConfig,
    weights: Option<&[f64]>,
) -> Result<Replanned> {
    check_weights(belief, weights)?;
    replan_cached(&InfoCache::new(&belief.cov, weights), belief, state, sensor, cfg)
}

/// [`replan`] with the covariance taken from `cache`; `belief` supplies the
/// grid geometry only.
pub(crate) fn replan_cached(
    cache: &InfoCache,
    belief: &TerrainBelief,
    state: &PlanState,
    sensor: &SensorModel,
    cfg: &PlannerConfig,
) -> Result<Replanned> {
    if !(state.remaining_budget > 0.0) {
        return Err(Error::ExhaustedWorkspace("no budget left".into()));
    }
    if cfg.horizon == 0 || !(cfg.grid_step > 0.0) {
        return Err(Error::Parameter("planner needs a positive horizon and grid step".into()));
    }
    let ws = Workspace::new(belief, sensor);
    let candidates = lattice(&ws, cfg);
    let cand_rows: Vec<Vec<(usize, f64)>> = candidates.iter().map(|&c| sensor.rows(belief, c)).collect();
    let motion = state.motion;

    let mut sim: Option<InfoCache> = None;
    let mut chosen: Vec<[f64; 3]> = Vec::new();
    let (mut reduced, mut elapsed, mut at) = (0.0, 0.0, state.pose);
    for step in 0..cfg.horizon {
        let cur = sim.as_ref().unwrap_or(cache);
        let mut best: Option<(f64, usize, f64, f64)> = None;
        for (k, &c) in candidates.iter().enumerate() {
            let t = elapsed + motion.segment_time(at, c);
            if t > state.remaining_budget + 1e-9 {
                continue;
            }
            let r = reduced + cur.reduction(&cand_rows[k]);
            let u = r / t;
            if best.is_none_or(|b| u > b.0) {
                best = Some((u, k, r, t));
            }
        }
        let Some((_, k, r, t)) = best else { break };
        if step + 1 < cfg.horizon {
            let mut next = cur.clone();
            next.condition(&cand_rows[k])?;
            sim = Some(next);
        }
        chosen.push(candidates[k]);
        reduced = r;
        elapsed = t;
        at = candidates[k];
    }
    if chosen.is_empty() {
        return Err(Error::ExhaustedWorkspace("no lattice waypoint is reachable within the budget".into()));
    }

    let span: [f64; 3] = [0, 1, 2].map(|k| ws.max[k] - ws.min[k]);
    let decode = |u: &[f64]| -> Vec<[f64; 3]> {
        u.chunks(3).map(|c| [0, 1, 2].map(|k| ws.min[k] + c[k] * span[k])).collect()
    };
    let objective = |u: &[f64]| -> f64 {
        let outside: f64 = u.iter().map(|v| (v - v.clamp(0.0, 1.0)).abs()).sum();
        if outside > 0.0 {
            return 1e3 + outside;
        }
        let wps = decode(u);
        let t = motion.travel_time(state.pose, &wps);
        if t > state.remaining_budget {
            return 1e3 + (t - state.remaining_budget);
        }
        -cache.reduction(&plan_rows(belief, sensor, &wps)) / t
    };
    let u0: Vec<f64> = chosen
        .iter()
        .flat_map(|w| (0..3).map(move |k| if span[k] > 0.0 { (w[k] - ws.min[k]) / span[k] } else { 0.0 }))
        .collect();
    let grid_value = objective(&u0);
    let grid_utility = -grid_value;
    let es = cmaes_minimize(objective, &u0, cfg.sigma0, cfg.population, cfg.max_evals, cfg.seed)?;
    let (waypoints, utility) = if es.f < grid_value { (decode(&es.x), -es.f) } else { (chosen, grid_utility) };
    Ok(Replanned {
        plan: PlanState { pose: state.pose, remaining_budget: state.remaining_budget, motion, waypoints },
        grid_utility,
        utility,
        evaluations: es.evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::super::{fuse, init_belief, Kernel, Measurement};
    use super::*;

    fn belief(n: f64) -> TerrainBelief {
        init_belief([n, n], 1.0, 0.0, Kernel::default()).unwrap()
    }

    /// Trace reduction by actually fusing dummy measurements.
    fn fused_reduction(b: &TerrainBelief, sensor: &SensorModel, wps: &[[f64; 3]]) -> f64 {
        let mut post = b.clone();
        for &w in wps {
            let cells = sensor.footprint(b, w);
            let m = Measurement {
                pose: w,
                values: vec![0.0; cells.len()],
                cells,
                variance: sensor.variance(w[2]) + b.kernel.noise_floor,
            };
            post = fuse(&post, &m).unwrap();
        }
        b.trace() - post.trace()
    }

    fn state(wps: Vec<[f64; 3]>) -> PlanState {
        PlanState { pose: [0.0, 0.0, 4.0], remaining_budget: 100.0, motion: MotionModel::default(), waypoints: wps }
    }

    #[test]
    fn utility_matches_fusion_oracle() {
        let b = belief(12.0);
        let s = SensorModel::default();
        let wps = vec![[3.0, 3.0, 3.0], [8.0, 6.0, 5.5], [3.5, 3.0, 2.0]];
        let u = utility(&b, &state(wps.clone()), &s, None).unwrap();
        let t = MotionModel::default().travel_time([0.0, 0.0, 4.0], &wps);
        assert!((u - fused_reduction(&b, &s, &wps) / t).abs() < 1e-9);
        let cache = InfoCache::new(&b.cov, None);
        let rows = plan_rows(&b, &s, &wps);
        assert!((cache.reduction(&rows) - trace_reduction(&b.cov, &rows, None)).abs() < 1e-9);
        assert_eq!(utility(&b, &state(vec![]), &s, None).unwrap(), 0.0);
    }

    #[test]
    fn repeated_site_has_diminishing_returns() {
        let b = belief(10.0);
        let s = SensorModel::default();
        let w = [5.0, 5.0, 3.0];
        let once = fused_reduction(&b, &s, &[w]);
        let twice = fused_reduction(&b, &s, &[w, w]);
        assert!(twice - once < once);
        let rows = plan_rows(&b, &s, &[w, w]);
        assert!((trace_reduction(&b.cov, &rows, None) - twice).abs() < 1e-9);
    }

    #[test]
    fn disjoint_footprints_are_additive_without_correlation() {
        let b = init_belief([12.0, 12.0], 1.0, 0.0, Kernel { length_scale: 0.05, ..Default::default() }).unwrap();
        let s = SensorModel::default();
        let (a, c) = ([2.5, 2.5, 3.0], [9.5, 9.5, 3.0]);
        let ra = trace_reduction(&b.cov, &s.rows(&b, a), None);
        let rc = trace_reduction(&b.cov, &s.rows(&b, c), None);
        let both = trace_reduction(&b.cov, &plan_rows(&b, &s, &[a, c]), None);
        assert!((both - ra - rc).abs() < 1e-9);
    }

    #[test]
    fn weights_select_cells() {
        let b = belief(8.0);
        let s = SensorModel::default();
        let w = [4.0, 4.0, 2.0];
        let ones = vec![1.0; b.len()];
        let rows = s.rows(&b, w);
        assert!((trace_reduction(&b.cov, &rows, Some(&ones)) - trace_reduction(&b.cov, &rows, None)).abs() < 1e-9);
        let zeros = vec![0.0; b.len()];
        assert_eq!(trace_reduction(&b.cov, &rows, Some(&zeros)), 0.0);
        let cache = InfoCache::new(&b.cov, Some(&ones));
        assert!((cache.reduction(&rows) - trace_reduction(&b.cov, &rows, None)).abs() < 1e-9);
    }

    #[test]
    fn rank_update_matches_fresh_cache() {
        let b = belief(10.0);
        let s = SensorModel::default();
        let w: Vec<f64> = (0..b.len()).map(|k| 0.5 + (k % 3) as f64).collect();
        for weights in [None, Some(w.as_slice())] {
            let mut cache = InfoCache::new(&b.cov, weights);
            let mut cov = b.cov.clone();
            for p in [[3.0, 3.0, 4.0], [6.5, 2.0, 2.0], [5.0, 7.0, 6.0]] {
                let rows = s.rows(&b, p);
                cache.condition(&rows).unwrap();
                condition(&mut cov, &rows).unwrap();
            }
            let fresh = InfoCache::new(&cov, weights);
            assert_eq!(cache.cov(), &cov);
            assert!((&cache.g - &fresh.g).abs().max() < 1e-9);

            let mut post = b.clone();
            let mut shadow = InfoCache::new(&b.cov, weights);
            for p in [[3.0, 3.0, 4.0], [6.5, 2.0, 2.0]] {
                let cells = s.footprint(&b, p);
                let m = Measurement { pose: p, values: vec![0.3; cells.len()], cells, variance: s.variance(p[2]) };
                let step = post.fuse_factors(&m).unwrap().unwrap();
                shadow.absorb(&post.cov, &m.cells, &step);
            }
            let fresh = InfoCache::new(&post.cov, weights);
            assert!((&shadow.g - &fresh.g).abs().max() < 1e-9);
        }
    }

    #[test]
    fn lawnmower_geometry() {
        let motion = MotionModel::default();
        let start = [0.0, 0.0, 4.0];
        assert!(plan_lawnmower([20.0, 20.0], 4.0, 4.0, 0.0, start, motion).unwrap().waypoints.is_empty());
        assert!(plan_lawnmower([20.0, 20.0], 4.0, 0.0, 10.0, start, motion).is_err());
        let s = SensorModel::default();
        let b = belief(20.0);
        let side = s.footprint_side(4.0);
        let p = plan_lawnmower([20.0, 20.0], 4.0, side, 1e6, start, motion).unwrap();
        let mut seen = vec![false; b.len()];
        for &w in &p.waypoints {
            for c in s.footprint(&b, w) {
                seen[c] = true;
            }
        }
        assert!(seen.iter().all(|&v| v));
        assert!(p.travel_time() <= 1e6);
        let q = plan_lawnmower([20.0, 20.0], 4.0, side, 40.0, start, motion).unwrap();
        assert!(q.travel_time() <= 40.0 && q.waypoints.len() < p.waypoints.len());
        assert_eq!(q, plan_lawnmower([20.0, 20.0], 4.0, side, 40.0, start, motion).unwrap());
    }

    #[test]
    fn lawnmower_altitude_fits_budget() {
        let s = SensorModel::default();
        let motion = MotionModel::default();
        let start = [0.0, 0.0, 4.0];
        let h = lawnmower_altitude([30.0, 30.0], &s, start, motion, 200.0);
        let side = s.footprint_side(h);
        let p = plan_lawnmower([30.0, 30.0], h, side, 200.0, start, motion).unwrap();
        assert_eq!(p.waypoints.len(), sweep(30.0, side).len().pow(2));
        let lower = h - 0.05;
        if lower >= s.min_altitude {
            let side = s.footprint_side(lower);
            let p = plan_lawnmower([30.0, 30.0], lower, side, 200.0, start, motion).unwrap();
            assert!(p.waypoints.len() < sweep(30.0, side).len().pow(2));
        }
    }

    #[test]
    fn horizon_one_matches_exhaustive_lattice() {
        let b = belief(15.0);
        let s = SensorModel::default();
        let cfg = PlannerConfig { horizon: 1, grid_step: 3.0, max_evals: 0, ..Default::default() };
        let st = state(vec![]);
        let r = replan(&b, &st, &s, &cfg, None).unwrap();
        let ws = Workspace::new(&b, &s);
        let brute = lattice(&ws, &cfg)
            .into_iter()
            .map(|c| (fused_reduction(&b, &s, &[c]) / st.motion.travel_time(st.pose, &[c]), c))
            .fold((f64::NEG_INFINITY, [0.0; 3]), |a, x| if x.0 > a.0 { x } else { a });
        assert_eq!(r.plan.waypoints, vec![brute.1]);
        assert!((r.utility - brute.0).abs() < 1e-9);
    }

    #[test]
    fn cmaes_stage_never_worsens_the_lattice_plan() {
        let b = belief(20.0);
        let s = SensorModel::default();
        for seed in 0..3 {
            let cfg = PlannerConfig { seed, max_evals: 60, ..Default::default() };
            let r = replan(&b, &state(vec![]), &s, &cfg, None).unwrap();
            assert!(r.utility >= r.grid_utility);
            assert!(r.plan.travel_time() <= r.plan.remaining_budget + 1e-9);
            let ws = Workspace::new(&b, &s);
            assert!(r.plan.waypoints.iter().all(|&w| ws.contains(w)));
            let direct = utility(&b, &r.plan, &s, None).unwrap();
            assert!((direct - r.utility).abs() < 1e-9);
        }
    }

    #[test]
    fn no_budget_is_exhausted() {
        let b = belief(10.0);
        let s = SensorModel::default();
        let mut st = state(vec![]);
        st.remaining_budget = 0.5;
        assert!(matches!(replan(&b, &st, &s, &PlannerConfig::default(), None), Err(Error::ExhaustedWorkspace(_))));
    }
}
