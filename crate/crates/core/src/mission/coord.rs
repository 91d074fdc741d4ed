use std::collections::{BTreeMap, VecDeque};
use std::f64::consts::PI;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{
    build_tree, AreaOfInterest, Behavior, ChannelConfig, LeafStatus, LossyChannel, MissionMessage, RequestEvent,
    Requester, Responder, Scheduler, StatusState, TaskSpec, TaskState, Transition,
};
use crate::fieldgen::{generate, simulate_detections, CameraPass, DetectorParams, FieldSpec, FieldTruth, WeedPatch};
use crate::ipp::{run_mission, MissionConfig, PlannerKind, TerrainBelief, TruthMap};
use crate::rng::{mix, stream, SimRng};
use crate::rownav::{ekf_correct_gps, ekf_correct_pattern, ekf_predict, EkfNoise, OdomTwist, Pattern, RowRelativePose};
use crate::weedops::{simulate_treatment, RobotRun, ToolBank, TreatmentConfig};
use crate::{Error, Result};

const UAV: &str = "uav";
const UGV: &str = "ugv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurveyConfig {
    pub ipp: MissionConfig,
    pub planner: PlannerKind,
    /// Flight time (s).
    pub budget: f64,
    /// Weed density (1/m²) that maps to pressure 1.
    pub saturation_density: f64,
    /// Cells whose estimated pressure exceeds this become areas of interest.
    pub threshold: f64,
    /// Smaller connected groups of cells are ignored.
    pub min_cells: usize,
    pub pose_period: f64,
}

impl Default for SurveyConfig {
    fn default() -> Self {
        SurveyConfig {
            ipp: MissionConfig {
                extent: [20.0, 20.0],
                prior_mean: 0.1,
                start: [0.0, 0.0, 3.0],
                ..Default::default()
            },
            planner: PlannerKind::Cmaes,
            budget: 120.0,
            saturation_density: 8.0,
            threshold: 0.45,
            min_cells: 6,
            pose_period: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UgvConfig {
    pub enabled: bool,
    /// Field-frame `(x, y, yaw)`.
    pub start: [f64; 3],
    pub speed: f64,
    pub treat_speed: f64,
    pub turn_rate: f64,
    /// Turning lane beyond the row ends (m).
    pub headland: f64,
    pub noise: EkfNoise,
    pub gps_sigma: f64,
    pub gps_period: f64,
    pub pattern_period: f64,
    pub pose_period: f64,
    pub heartbeat: f64,
    pub bank: ToolBank,
    pub treatment: TreatmentConfig,
    pub detector: DetectorParams,
    pub camera_footprint: [f64; 2],
    pub frame_period: f64,
}

impl Default for UgvConfig {
    fn default() -> Self {
        UgvConfig {
            enabled: true,
            start: [-1.0, 0.375, 0.0],
            speed: 0.6,
            treat_speed: 0.3,
            turn_rate: 0.8,
            headland: 1.0,
            noise: EkfNoise::default(),
            gps_sigma: 0.02,
            gps_period: 1.0,
            pattern_period: 0.5,
            pose_period: 1.0,
            heartbeat: 0.5,
            bank: ToolBank::default(),
            treatment: TreatmentConfig::default(),
            detector: DetectorParams::default(),
            camera_footprint: [0.3, 0.3],
            frame_period: 0.1,
        }
    }
}

/// Mission script: field, agents, channel and the UAV task tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoordinationScenario {
    pub field: FieldSpec,
    pub survey: SurveyConfig,
    pub ugv: UgvConfig,
    pub channel: ChannelConfig,
    pub dt: f64,
    /// Mission time limit (s).
    pub deadline: f64,
    pub tree: TaskSpec,
}

impl Default for CoordinationScenario {
    fn default() -> Self {
        let patch = |x: f64, y: f64| WeedPatch { center: [x, y], radius: 2.0, density: 20.0 };
        CoordinationScenario {
            field: FieldSpec {
                extent: [20.0, 20.0],
                row_spacing: 0.75,
                row_offset: 0.375,
                crop_lattice: 0.3,
                crop_dropout: 0.05,
                weed_density: 0.2,
                weed_radius_range: [0.002, 0.01],
                weed_patches: vec![patch(5.0, 5.0), patch(15.0, 8.0), patch(8.0, 15.0)],
                ..Default::default()
            },
            survey: SurveyConfig::default(),
            ugv: UgvConfig::default(),
            channel: ChannelConfig::default(),
            dt: 0.1,
            deadline: 1800.0,
            tree: default_tree(),
        }
    }
}

impl CoordinationScenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let sc: CoordinationScenario = serde_json::from_str(text).map_err(|e| Error::parse("mission script", e.to_string()))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.field.validate()?;
        self.channel.validate()?;
        let u = &self.ugv;
        if !(self.dt > 0.0 && self.deadline > 0.0) {
            return Err(Error::Config("dt and deadline must be positive".into()));
        }
        if !(u.speed > 0.0 && u.treat_speed > 0.0 && u.turn_rate > 0.0 && u.gps_sigma > 0.0) {
            return Err(Error::Config("ugv speeds, turn rate and gps sigma must be positive".into()));
        }
        if !(self.survey.saturation_density > 0.0 && self.survey.budget >= 0.0) {
            return Err(Error::Config("survey saturation density must be positive".into()));
        }
        build_tree::<World>(&self.tree, &mut behavior).map(|_| ())
    }
}

/// `parallel(deadline, sequence(survey, notify, await_treatment))`; the
/// deadline monitor has the higher priority.
pub fn default_tree() -> TaskSpec {
    TaskSpec::group(
        "parallel",
        "mission",
        0,
        vec![
            TaskSpec::leaf("deadline", "deadline", 1),
            TaskSpec::group(
                "sequence",
                "uav",
                0,
                vec![
                    TaskSpec::leaf("survey", "survey", 0),
                    TaskSpec::leaf("notify", "notify", 0),
                    TaskSpec::leaf("await_treatment", "await_treatment", 0),
                ],
            ),
        ],
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEvent {
    pub time: f64,
    pub agent: String,
    pub event: String,
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaTreatment {
    pub area: u64,
    pub attempted: usize,
    pub treated: usize,
    pub crop_casualties: usize,
    pub passes: usize,
}

#[derive(Debug, Clone)]
pub struct MissionLog {
    pub state: TaskState,
    pub end_time: f64,
    pub events: Vec<LogEvent>,
    pub transitions: Vec<Transition>,
    pub areas: Vec<AreaOfInterest>,
    /// Areas whose treatment the UAV saw succeed.
    pub treated: Vec<u64>,
    pub treatments: Vec<AreaTreatment>,
    /// Largest UGV localisation error (m) over the mission.
    pub max_localization_error: f64,
    pub survey_trace: Option<f64>,
}

impl MissionLog {
    pub fn succeeded(&self) -> bool {
        self.state == TaskState::Succeeded
    }

    pub fn all_treated(&self) -> bool {
        !self.areas.is_empty() && self.areas.iter().all(|a| self.treated.contains(&a.id))
    }

    pub fn count(&self, agent: &str, event: &str) -> usize {
        self.events.iter().filter(|e| e.agent == agent && e.event == event).count()
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("time,agent,event,payload_digest\n");
        for e in &self.events {
            out.push_str(&format!("{:.3},{},{},{}\n", e.time, e.agent, e.event, e.digest));
        }
        out
    }
}

/// Weed pressure per belief cell: weed count per m² over `saturation`,
/// clipped to `[0, 1]`.
pub fn pressure_map(truth: &FieldTruth, belief: &TerrainBelief, saturation: f64) -> TruthMap {
    let r = belief.resolution;
    let mut counts = vec![0.0; belief.len()];
    for w in truth.weeds() {
        let (i, j) = ((w.stem[0] / r).floor(), (w.stem[1] / r).floor());
        if i >= 0.0 && j >= 0.0 && (i as usize) < belief.nx && (j as usize) < belief.ny {
            counts[j as usize * belief.nx + i as usize] += 1.0;
        }
    }
    TruthMap { values: counts.into_iter().map(|c| (c / (r * r) / saturation).min(1.0)).collect() }
}

/// 4-connected groups of cells whose mean exceeds `threshold`, scanned in
/// cell order; groups smaller than `min_cells` are dropped.
pub fn threshold_areas(belief: &TerrainBelief, threshold: f64, min_cells: usize) -> Vec<AreaOfInterest> {
    let (nx, ny) = (belief.nx, belief.ny);
    let hot: Vec<bool> = belief.mean.iter().map(|&m| m > threshold).collect();
    let mut seen = vec![false; hot.len()];
    let mut out = Vec::new();
    for k0 in 0..hot.len() {
        if !hot[k0] || seen[k0] {
            continue;
        }
        let mut stack = vec![k0];
        seen[k0] = true;
        let mut cells = Vec::new();
        while let Some(k) = stack.pop() {
            cells.push(k);
            let (i, j) = (k % nx, k / nx);
            let mut nb = Vec::with_capacity(4);
            if i > 0 {
                nb.push(k - 1);
            }
            if i + 1 < nx {
                nb.push(k + 1);
            }
            if j > 0 {
                nb.push(k - nx);
            }
            if j + 1 < ny {
                nb.push(k + nx);
            }
            for n in nb {
                if hot[n] && !seen[n] {
                    seen[n] = true;
                    stack.push(n);
                }
            }
        }
        if cells.len() < min_cells.max(1) {
            continue;
        }
        cells.sort_unstable();
        let pressure = cells.iter().map(|&k| belief.mean[k]).sum::<f64>() / cells.len() as f64;
        out.push(AreaOfInterest {
            id: out.len() as u64 + 1,
            origin: [0.0, 0.0],
            resolution: belief.resolution,
            cells: cells.iter().map(|&k| [(k % nx) as u32, (k / nx) as u32]).collect(),
            pressure,
        });
    }
    out
}

struct Waypoint {
    /// Row-frame `(along, lateral)`.
    at: [f64; 2],
    speed: f64,
}

struct Job {
    request: u64,
    route: VecDeque<Waypoint>,
    result: AreaTreatment,
}

struct Ugv {
    cfg: UgvConfig,
    truth: [f64; 3],
    est: RowRelativePose,
    row_map: Pattern,
    responder: Responder,
    queue: VecDeque<(u64, AreaOfInterest)>,
    job: Option<Job>,
    rng: SimRng,
    next_gps: f64,
    next_pattern: f64,
    next_pose: f64,
    max_error: f64,
}

struct Uav {
    requester: Requester,
    survey_end: Option<f64>,
    trajectory: Vec<(f64, [f64; 3])>,
    next_pose: f64,
    areas: Vec<AreaOfInterest>,
    requests: BTreeMap<u64, u64>,
    outcomes: BTreeMap<u64, Option<StatusState>>,
    finished: bool,
    survey_trace: Option<f64>,
}

/// Shared state of one simulated mission.
pub(crate) struct World {
    sc: CoordinationScenario,
    seed: u64,
    truth: FieldTruth,
    channel: LossyChannel,
    events: Vec<LogEvent>,
    uav: Uav,
    ugv: Ugv,
    treatments: Vec<AreaTreatment>,
    error: Option<Error>,
}

impl World {
    fn log(&mut self, now: f64, agent: &str, event: impl Into<String>, digest: impl Into<String>) {
        self.events.push(LogEvent { time: now, agent: agent.into(), event: event.into(), digest: digest.into() });
    }

    fn send(&mut self, now: f64, from: &str, to: &str, msg: MissionMessage, how: &str) {
        let (label, digest) = (msg.label(), msg.digest());
        self.log(now, from, format!("{how}:{label}"), digest.clone());
        if !self.channel.send(now, from, to, msg) {
            self.log(now, from, format!("drop:{label}"), digest);
        }
    }

    fn fail(&mut self, e: Error) {
        if self.error.is_none() {
            self.error = Some(e);
        }
    }
}

fn wrap(a: f64) -> f64 {
    (a + PI).rem_euclid(2.0 * PI) - PI
}

fn behavior(name: &str) -> Option<Box<dyn Behavior<World>>> {
    Some(match name {
        "survey" => Box::new(Survey),
        "notify" => Box::new(notify),
        "await_treatment" => Box::new(await_treatment),
        "deadline" => Box::new(deadline),
        _ => return None,
    })
}

struct Survey;

impl Behavior<World> for Survey {
    fn tick(&mut self, w: &mut World, now: f64, _dt: f64) -> LeafStatus {
        if w.uav.survey_end.is_none() {
            match run_survey(w) {
                Ok(duration) => w.uav.survey_end = Some(now + duration),
                Err(e) => {
                    w.log(now, UAV, "survey:error", "-");
                    w.fail(e);
                    return LeafStatus::Failed;
                }
            }
            w.uav.next_pose = now;
        }
        let start = w.uav.survey_end.expect("set above") - w.uav.trajectory.last().map_or(0.0, |p| p.0);
        if now >= w.uav.next_pose {
            let elapsed = now - start;
            let pose = w.uav.trajectory.iter().take_while(|p| p.0 <= elapsed).last().map(|p| p.1);
            if let Some(pose) = pose {
                w.send(now, UAV, UGV, MissionMessage::UavPose { pose, stamp: now }, "tx");
            }
            w.uav.next_pose += w.sc.survey.pose_period;
        }
        if now + 1e-9 >= w.uav.survey_end.expect("set above") {
            for a in w.uav.areas.clone() {
                let digest = MissionMessage::AreaOfInterest(a).digest();
                w.log(now, UAV, "aoi:detected", digest);
            }
            LeafStatus::Succeeded
        } else {
            LeafStatus::Running
        }
    }
}

/// Flies the IPP mission and thresholds the belief; returns its duration.
fn run_survey(w: &mut World) -> Result<f64> {
    let s = &w.sc.survey;
    let prior = s.ipp.prior()?;
    let pressure = pressure_map(&w.truth, &prior, s.saturation_density);
    let res = run_mission(&pressure, &s.ipp, s.planner, s.budget, mix(w.seed, "survey"))?;
    w.uav.areas = threshold_areas(&res.belief, s.threshold, s.min_cells);
    w.uav.trajectory = res.history.iter().map(|h| (h.t, h.pose)).collect();
    w.uav.survey_trace = Some(res.final_trace());
    Ok(res.history.last().map_or(0.0, |h| h.t))
}

fn notify(w: &mut World, now: f64, _dt: f64) -> LeafStatus {
    for a in w.uav.areas.clone() {
        w.send(now, UAV, UGV, MissionMessage::AreaOfInterest(a.clone()), "tx");
        let payload = serde_json::to_string(&a).expect("area serializes");
        let m = w.uav.requester.request(now, "treat", payload);
        if let MissionMessage::Request { id, .. } = &m {
            w.uav.requests.insert(*id, a.id);
        }
        w.send(now, UAV, UGV, m, "tx");
    }
    LeafStatus::Succeeded
}

fn await_treatment(w: &mut World, _now: f64, _dt: f64) -> LeafStatus {
    let u = &mut w.uav;
    let out = if u.requests.keys().any(|id| matches!(u.outcomes.get(id), Some(None | Some(StatusState::Failed)))) {
        LeafStatus::Failed
    } else if u.requests.keys().all(|id| u.outcomes.get(id) == Some(&Some(StatusState::Succeeded))) {
        LeafStatus::Succeeded
    } else {
        LeafStatus::Running
    };
    if out != LeafStatus::Running {
        u.finished = true;
    }
    out
}

fn deadline(w: &mut World, now: f64, _dt: f64) -> LeafStatus {
    if w.uav.finished {
        LeafStatus::Succeeded
    } else if now >= w.sc.deadline {
        LeafStatus::Failed
    } else {
        LeafStatus::Running
    }
}

impl Ugv {
    fn new(cfg: &UgvConfig, field: &FieldSpec, seed: u64) -> Self {
        let p0 = 1e-4;
        let theta = field.row_orientation;
        Ugv {
            truth: cfg.start,
            est: RowRelativePose::from_field(cfg.start, [[p0, 0.0, 0.0], [0.0, p0, 0.0], [0.0, 0.0, p0]], theta),
            row_map: Pattern { theta: 0.0, spacing: field.row_spacing, offset: field.row_offset, score: 0.0 },
            responder: Responder::new(cfg.heartbeat),
            queue: VecDeque::new(),
            job: None,
            rng: stream(seed, "ugv"),
            next_gps: 0.0,
            next_pattern: 0.0,
            next_pose: 0.0,
            max_error: 0.0,
            cfg: cfg.clone(),
        }
    }

    fn noise(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Row-frame coordinates of a field point.
    fn to_row(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.est.row_theta.sin_cos();
        [c * p[0] + s * p[1], -s * p[0] + c * p[1]]
    }

    fn to_field(&self, r: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.est.row_theta.sin_cos();
        [c * r[0] - s * r[1], s * r[0] + c * r[1]]
    }
}

/// Treatment passes over every row crossing `area`, boustrophedon, with the
/// approach through the nearer headland.
fn plan_job(w: &World, request: u64, area: &AreaOfInterest) -> Result<Job> {
    let ugv = &w.ugv;
    let corners = [[0.0, 0.0], [w.sc.field.extent[0], 0.0], [0.0, w.sc.field.extent[1]], w.sc.field.extent];
    let along: Vec<f64> = corners.iter().map(|&c| ugv.to_row(c)[0]).collect();
    let (lo, hi) = (along.iter().cloned().fold(f64::INFINITY, f64::min), along.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    let mut segments = Vec::new();
    for row in &w.truth.rows {
        let mut span: Option<[f64; 2]> = None;
        let mut a = lo;
        while a <= hi {
            let p = ugv.to_field([a, row.offset]);
            if w.sc.field.contains(p) && area.contains(p) {
                span = Some(span.map_or([a, a], |s| [s[0], a]));
            }
            a += 0.05;
        }
        if let Some(s) = span.filter(|s| s[1] - s[0] >= 0.1) {
            segments.push((row.offset, s));
        }
    }
    if segments.is_empty() {
        return Err(Error::NotReachable(format!("area {} crosses no crop row", area.id)));
    }
    let est = ugv.est.mean;
    let mean_lat = segments.iter().map(|s| s.0).sum::<f64>() / segments.len() as f64;
    if est[1] > mean_lat {
        segments.reverse();
    }
    let mid = 0.5 * (segments[0].1[0] + segments[0].1[1]);
    let mut forward = est[0] <= mid;

    let cfg = &ugv.cfg;
    let mut route = VecDeque::new();
    let (l0, s0) = segments[0];
    let first = if forward { s0[0] } else { s0[1] };
    if (est[1] - l0).abs() > 0.05 {
        let (h1, h2) = (lo - cfg.headland, hi + cfg.headland);
        let h = if (est[0] - h1).abs() + (h1 - first).abs() <= (est[0] - h2).abs() + (h2 - first).abs() { h1 } else { h2 };
        route.push_back(Waypoint { at: [h, est[1]], speed: cfg.speed });
        route.push_back(Waypoint { at: [h, l0], speed: cfg.speed });
    }
    route.push_back(Waypoint { at: [first, l0], speed: cfg.speed });

    let mut result = AreaTreatment { area: area.id, attempted: 0, treated: 0, crop_casualties: 0, passes: 0 };
    let mut prev_end: Option<f64> = None;
    for (k, &(lat, [a0, a1])) in segments.iter().enumerate() {
        let (start, end) = if forward { (a0, a1) } else { (a1, a0) };
        if let Some(pe) = prev_end {
            route.push_back(Waypoint { at: [pe, lat], speed: cfg.speed });
            route.push_back(Waypoint { at: [start, lat], speed: cfg.speed });
        }
        route.push_back(Waypoint { at: [end, lat], speed: cfg.treat_speed });
        prev_end = Some(end);

        let heading = ugv.est.row_theta + if forward { 0.0 } else { PI };
        let dir = if forward { 1.0 } else { -1.0 };
        let pass = CameraPass {
            start: ugv.to_field([start - 0.2 * dir, lat]),
            heading,
            speed: cfg.treat_speed,
            duration: ((end - start).abs() + 0.4) / cfg.treat_speed,
            frame_period: cfg.frame_period,
            footprint: cfg.camera_footprint,
        };
        let det_params = DetectorParams { seed: mix(w.seed, &format!("detections-{request}-{k}")), ..cfg.detector.clone() };
        let det = simulate_detections(&w.truth, &pass, &det_params);
        let tcfg = TreatmentConfig { seed: mix(w.seed, &format!("treatment-{request}-{k}")), ..cfg.treatment.clone() };
        let rep = simulate_treatment(&w.truth, &det, &RobotRun { pass, roughness: 0.0 }, &cfg.bank, &tcfg)?;
        for m in &rep.metrics {
            result.attempted += m.attempted;
            result.treated += m.treated;
            result.crop_casualties += m.crop_casualties;
        }
        result.passes += 1;
        forward = !forward;
    }
    Ok(Job { request, route, result })
}

fn ugv_receive(w: &mut World, now: f64) {
    for d in w.channel.poll(now, UGV) {
        let digest = d.msg.digest();
        w.log(now, UGV, format!("rx:{}", d.msg.label()), digest);
        if let MissionMessage::Request { id, kind, payload } = d.msg {
            let (new, reply) = w.ugv.responder.on_request(id);
            w.send(now, UGV, UAV, reply, if new { "tx" } else { "retx" });
            if !new {
                continue;
            }
            match (kind.as_str(), serde_json::from_str::<AreaOfInterest>(&payload)) {
                ("treat", Ok(area)) => w.ugv.queue.push_back((id, area)),
                _ => {
                    let m = w.ugv.responder.set(id, StatusState::Failed);
                    w.send(now, UGV, UAV, m, "tx");
                }
            }
        }
    }
}

fn ugv_step(w: &mut World, now: f64, dt: f64) -> Result<()> {
    if w.ugv.job.is_none() {
        if let Some((id, area)) = w.ugv.queue.pop_front() {
            match plan_job(w, id, &area) {
                Ok(job) => {
                    w.log(now, UGV, "job:start", MissionMessage::AreaOfInterest(area).digest());
                    w.ugv.job = Some(job);
                    let m = w.ugv.responder.set(id, StatusState::Running);
                    w.send(now, UGV, UAV, m, "tx");
                }
                Err(Error::NotReachable(_)) => {
                    let m = w.ugv.responder.set(id, StatusState::Failed);
                    w.send(now, UGV, UAV, m, "tx");
                }
                Err(e) => return Err(e),
            }
        }
    }

    // Steer on the estimate towards the next waypoint.
    let (mut v, mut omega) = (0.0, 0.0);
    let mut finished = None;
    {
        let u = &mut w.ugv;
        if let Some(job) = &mut u.job {
            let est = u.est.to_field();
            loop {
                let Some(wp) = job.route.front() else { break };
                let target = {
                    let (s, c) = u.est.row_theta.sin_cos();
                    [c * wp.at[0] - s * wp.at[1], s * wp.at[0] + c * wp.at[1]]
                };
                let (dx, dy) = (target[0] - est[0], target[1] - est[1]);
                let dist = dx.hypot(dy);
                if dist < 0.03 {
                    job.route.pop_front();
                    continue;
                }
                let err = wrap(dy.atan2(dx) - est[2]);
                omega = (2.0 * err).clamp(-u.cfg.turn_rate, u.cfg.turn_rate);
                if err.abs() < 0.2 {
                    v = wp.speed.min(dist / dt);
                }
                break;
            }
            if job.route.is_empty() {
                finished = Some((job.request, job.result.clone()));
            }
        }
    }
    if let Some((id, result)) = finished {
        w.ugv.job = None;
        let digest = hex::encode(&<sha2::Sha256 as sha2::Digest>::digest(serde_json::to_vec(&result).expect("serializes"))[..8]);
        w.log(now, UGV, "treat:done", digest);
        w.treatments.push(result);
        let m = w.ugv.responder.set(id, StatusState::Succeeded);
        w.send(now, UGV, UAV, m, "tx");
    }

    let u = &mut w.ugv;
    let [x, y, yaw] = u.truth;
    u.truth = [x + v * yaw.cos() * dt, y + v * yaw.sin() * dt, wrap(yaw + omega * dt)];
    let moving = if v != 0.0 || omega != 0.0 { 1.0 } else { 0.0 };
    let odom = OdomTwist {
        v: v + moving * u.cfg.noise.sigma_v * u.noise(),
        omega: omega + moving * u.cfg.noise.sigma_omega_odom * u.noise(),
    };
    let imu = omega + u.cfg.noise.sigma_omega_imu * u.noise();
    u.est = ekf_predict(&u.est, odom, imu, dt, &u.cfg.noise)?;
    if now >= u.next_gps {
        let g = [u.truth[0] + u.cfg.gps_sigma * u.noise(), u.truth[1] + u.cfg.gps_sigma * u.noise()];
        let s2 = u.cfg.gps_sigma.powi(2);
        u.est = ekf_correct_gps(&u.est, g, [[s2, 0.0], [0.0, s2]])?;
        u.next_gps += u.cfg.gps_period;
    }
    let psi = wrap(u.truth[2] - u.est.row_theta);
    if now >= u.next_pattern && psi.sin().abs() < 0.2 && w.sc.field.contains([u.truth[0], u.truth[1]]) {
        let lat = u.to_row([u.truth[0], u.truth[1]])[1];
        let detected = Pattern {
            theta: -psi + u.cfg.noise.pattern_heading * u.noise(),
            spacing: u.row_map.spacing,
            offset: u.row_map.offset - lat + u.cfg.noise.pattern_lateral * u.noise(),
            score: 0.0,
        };
        u.est = ekf_correct_pattern(&u.est, &detected, &u.row_map, &u.cfg.noise)?;
        u.next_pattern = now + u.cfg.pattern_period;
    }
    let e = u.est.to_field();
    u.max_error = u.max_error.max((e[0] - u.truth[0]).hypot(e[1] - u.truth[1]));

    if now >= w.ugv.next_pose {
        w.ugv.next_pose += w.ugv.cfg.pose_period;
        let pose = MissionMessage::UgvPose { pose: e, stamp: now };
        w.send(now, UGV, UAV, pose, "tx");
    }
    for m in w.ugv.responder.heartbeat(now) {
        w.send(now, UGV, UAV, m, "hb");
    }
    Ok(())
}

fn uav_receive(w: &mut World, now: f64) {
    for d in w.channel.poll(now, UAV) {
        w.log(now, UAV, format!("rx:{}", d.msg.label()), d.msg.digest());
        if let MissionMessage::Status { request, state } = d.msg {
            if let Some(RequestEvent::Status { id, state }) = w.uav.requester.on_status(now, request, state) {
                w.uav.outcomes.insert(id, Some(state));
            }
        }
    }
    let (resend, events) = w.uav.requester.poll(now);
    for m in resend {
        w.send(now, UAV, UGV, m, "retx");
    }
    for e in events {
        if let RequestEvent::TimedOut { id } = e {
            w.log(now, UAV, "timeout:request", format!("{id}"));
            w.uav.outcomes.insert(id, None);
        }
    }
}

/// Runs the UAV survey, hand-over and UGV treatment under simulated time.
/// Every random stream derives from `seed`, combined with the seeds named
/// in the scenario.
pub fn coordinated_mission(sc: &CoordinationScenario, seed: u64) -> Result<MissionLog> {
    sc.validate()?;
    let field = FieldSpec { seed: sc.field.seed ^ mix(seed, "field"), ..sc.field.clone() };
    let truth = generate(&field)?;
    let channel = LossyChannel::new(ChannelConfig { seed: sc.channel.seed ^ mix(seed, "channel"), ..sc.channel.clone() })?;
    let root = build_tree(&sc.tree, &mut behavior)?;
    let mut sch = Scheduler::new(root);
    let mut w = World {
        ugv: Ugv::new(&sc.ugv, &field, mix(seed, "ugv")),
        uav: Uav {
            requester: Requester::from_channel(&sc.channel),
            survey_end: None,
            trajectory: Vec::new(),
            next_pose: 0.0,
            areas: Vec::new(),
            requests: BTreeMap::new(),
            outcomes: BTreeMap::new(),
            finished: false,
            survey_trace: None,
        },
        sc: sc.clone(),
        seed,
        truth,
        channel,
        events: Vec::new(),
        treatments: Vec::new(),
        error: None,
    };
    let mut logged = 0;
    let mut step: u64 = 0;
    let state = loop {
        let now = step as f64 * sc.dt;
        uav_receive(&mut w, now);
        if sc.ugv.enabled {
            ugv_receive(&mut w, now);
        }
        let s = sch.tick(&mut w, sc.dt);
        for t in &sch.log[logged..] {
            w.events.push(LogEvent { time: t.time, agent: UAV.into(), event: format!("task:{}:{}", t.task, t.to.as_str()), digest: "-".into() });
        }
        logged = sch.log.len();
        if let Some(e) = w.error.take() {
            return Err(e);
        }
        if s.is_terminal() {
            break s;
        }
        if sc.ugv.enabled {
            ugv_step(&mut w, now, sc.dt)?;
        }
        step += 1;
        if now > sc.deadline + 60.0 {
            return Err(Error::ContractViolation("mission tree did not terminate after its deadline".into()));
        }
    };
    let treated = w
        .uav
        .requests
        .iter()
        .filter(|(id, _)| w.uav.outcomes.get(id) == Some(&Some(StatusState::Succeeded)))
        .map(|(_, &a)| a)
        .collect();
    Ok(MissionLog {
        state,
        end_time: step as f64 * sc.dt,
        events: w.events,
        transitions: sch.log,
        areas: w.uav.areas,
        treated,
        treatments: w.treatments,
        max_localization_error: w.ugv.max_error,
        survey_trace: w.uav.survey_trace,
    })
}
