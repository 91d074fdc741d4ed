use std::sync::Arc;

use nalgebra::{Isometry3, Matrix2, Matrix3, Matrix6, Translation3, UnitQuaternion, Vector3, Vector6};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{
    optimize, AltitudeSource, Constraint, OptimizeReport, PoseGraph, PoseNode, SlidingWindow, WindowConfig,
};
use crate::fieldgen::{DemRaster, TerrainSpec};
use crate::rng::stream;
use crate::Result;

/// Simulated ground-robot drive over DEM terrain with GPS, IMU and odometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriveSpec {
    pub nodes: usize,
    pub dt: f64,
    pub speed: f64,
    /// Lateral sway of the path (m) and its wavelength (m).
    pub sway: f64,
    pub sway_wavelength: f64,
    pub terrain: TerrainSpec,
    pub gps_sigma: [f64; 3],
    pub odom_sigma_translation: f64,
    pub odom_sigma_rotation: f64,
    pub imu_sigma: f64,
    pub use_dem: bool,
    pub dem_sigma: f64,
    pub use_smoothness: bool,
    pub smoothness_sigma: f64,
    /// Multiplies the injected noise only; information uses the nominal sigmas.
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for DriveSpec {
    fn default() -> Self {
        DriveSpec {
            nodes: 200,
            dt: 1.0,
            speed: 0.5,
            sway: 1.0,
            sway_wavelength: 20.0,
            terrain: TerrainSpec {
                base_altitude: 0.0,
                roughness: 0.3,
                correlation_length: 8.0,
                cell_size: 0.5,
            },
            gps_sigma: [0.05, 0.05, 0.5],
            odom_sigma_translation: 0.01,
            odom_sigma_rotation: 0.002,
            imu_sigma: 0.01,
            use_dem: true,
            dem_sigma: 0.3,
            use_smoothness: true,
            smoothness_sigma: 0.05,
            noise_scale: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DriveRun {
    pub truth: Vec<PoseNode>,
    pub gps: Vec<Vector3<f64>>,
    /// `odometry[k]` is the measured motion from node `k - 1` to `k` (identity for `k = 0`).
    pub odometry: Vec<Isometry3<f64>>,
    /// Constraints introduced with node `k`.
    pub constraints: Vec<Vec<Constraint>>,
    pub dem: Arc<DemRaster>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeError {
    pub id: u64,
    pub timestamp: f64,
    pub gps: f64,
    pub optimized: f64,
    pub gps_dz: f64,
    pub optimized_dz: f64,
}

fn truth_rotation(dem: &DemRaster, p: [f64; 2], yaw: f64) -> UnitQuaternion<f64> {
    let g = dem.gradient(p[0], p[1]);
    let (s, c) = yaw.sin_cos();
    let along = g[0] * c + g[1] * s;
    let lateral = -g[0] * s + g[1] * c;
    UnitQuaternion::from_euler_angles(lateral.atan(), -along.atan(), yaw)
}

pub fn simulate_drive(spec: &DriveSpec) -> DriveRun {
    let mut rng = stream(spec.seed, "drive");
    let length = spec.nodes as f64 * spec.dt * spec.speed;
    let mut dem_rng = stream(spec.seed, "drive-dem");
    // Shift the path away from the raster border.
    let margin = 2.0 + spec.sway;
    let dem = Arc::new(DemRaster::generate(&spec.terrain, [length + 2.0 * margin, 2.0 * margin], &mut dem_rng));
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut n = || unit.sample(&mut rng) * spec.noise_scale;

    let w = std::f64::consts::TAU / spec.sway_wavelength;
    let mut truth = Vec::with_capacity(spec.nodes);
    for k in 0..spec.nodes {
        let x = margin + k as f64 * spec.dt * spec.speed;
        let y = margin + spec.sway * (w * (x - margin)).sin();
        let yaw = (spec.sway * w * (w * (x - margin)).cos()).atan();
        let z = dem.altitude(x, y);
        truth.push(PoseNode::new(
            k as u64,
            k as f64 * spec.dt,
            Vector3::new(x, y, z),
            truth_rotation(&dem, [x, y], yaw),
        ));
    }

    let var = |s: f64| 1.0 / (s * s);
    let gps_info = Matrix3::from_diagonal(&Vector3::new(var(spec.gps_sigma[0]), var(spec.gps_sigma[1]), var(spec.gps_sigma[2])));
    let odom_info = Matrix6::from_diagonal(&Vector6::new(
        var(spec.odom_sigma_translation),
        var(spec.odom_sigma_translation),
        var(spec.odom_sigma_translation),
        var(spec.odom_sigma_rotation),
        var(spec.odom_sigma_rotation),
        var(spec.odom_sigma_rotation),
    ));
    let imu_info = Matrix2::identity() * var(spec.imu_sigma);

    let mut gps = Vec::new();
    let mut odometry = Vec::new();
    let mut constraints = Vec::new();
    for k in 0..spec.nodes {
        let t = &truth[k];
        let id = t.id;
        let fix = t.translation
            + Vector3::new(n() * spec.gps_sigma[0], n() * spec.gps_sigma[1], n() * spec.gps_sigma[2]);
        let (roll, pitch, _) = t.rotation.euler_angles();
        let mut cs = vec![
            Constraint::GpsPrior { i: id, position: fix, info: gps_info },
            Constraint::ImuPrior {
                i: id,
                roll_pitch: [roll + n() * spec.imu_sigma, pitch + n() * spec.imu_sigma],
                info: imu_info,
            },
        ];
        if spec.use_dem {
            cs.push(Constraint::DemPrior { i: id, altitude: AltitudeSource::Dem, info: var(spec.dem_sigma) });
        }
        let odo = if k == 0 {
            Isometry3::identity()
        } else {
            let rel = truth[k - 1].isometry().inverse() * t.isometry();
            let st = spec.odom_sigma_translation;
            let sr = spec.odom_sigma_rotation;
            let dt = Translation3::new(n() * st, n() * st, n() * st);
            let dr = UnitQuaternion::from_scaled_axis(Vector3::new(n() * sr, n() * sr, n() * sr));
            let noisy = rel * Isometry3::from_parts(dt, dr);
            cs.push(Constraint::MotionEdge { i: id - 1, j: id, relative: noisy, info: odom_info });
            if spec.use_smoothness {
                cs.push(Constraint::AltitudeSmoothness { i: id - 1, j: id, info: var(spec.smoothness_sigma) });
            }
            noisy
        };
        gps.push(fix);
        odometry.push(odo);
        constraints.push(cs);
    }
    DriveRun { truth, gps, odometry, constraints, dem }
}

fn initial_node(run: &DriveRun) -> PoseNode {
    // The start heading is taken as known; position comes from the first fix.
    let t = &run.truth[0];
    PoseNode::new(t.id, t.timestamp, run.gps[0], t.rotation)
}

fn compose(prev: &PoseNode, odo: &Isometry3<f64>, template: &PoseNode) -> PoseNode {
    let iso = prev.isometry() * odo;
    PoseNode::new(template.id, template.timestamp, iso.translation.vector, iso.rotation)
}

/// Integrated odometry from the first GPS fix.
pub fn dead_reckon(run: &DriveRun) -> Vec<PoseNode> {
    let mut out = vec![initial_node(run)];
    for k in 1..run.truth.len() {
        let next = compose(&out[k - 1], &run.odometry[k], &run.truth[k]);
        out.push(next);
    }
    out
}

/// Online estimate: each node enters the window initialized from the
/// latest estimate composed with its odometry.
pub fn run_sliding(run: &DriveRun, cfg: &WindowConfig) -> Result<(Vec<PoseNode>, Vec<OptimizeReport>)> {
    let mut window = SlidingWindow::new(cfg.clone(), Some(run.dem.clone()))?;
    let mut reports = Vec::new();
    for k in 0..run.truth.len() {
        let node = if k == 0 {
            initial_node(run)
        } else {
            let prev = window.graph().nodes.values().next_back().expect("previous node").clone();
            compose(&prev, &run.odometry[k], &run.truth[k])
        };
        reports.push(window.slide(node, run.constraints[k].clone())?);
    }
    Ok((window.trajectory(), reports))
}

/// Single optimization over all nodes and constraints.
pub fn run_batch(run: &DriveRun, cfg: &WindowConfig) -> Result<(Vec<PoseNode>, OptimizeReport)> {
    let mut graph = PoseGraph::with_dem(run.dem.clone());
    for n in dead_reckon(run) {
        graph.add_node(n);
    }
    for cs in &run.constraints {
        for c in cs {
            graph.add(c.clone());
        }
    }
    let report = optimize(&mut graph, &cfg.solver)?;
    Ok((graph.nodes.into_values().collect(), report))
}

impl DriveRun {
    pub fn errors(&self, estimate: &[PoseNode]) -> Vec<NodeError> {
        self.truth
            .iter()
            .zip(&self.gps)
            .zip(estimate)
            .map(|((t, g), e)| NodeError {
                id: t.id,
                timestamp: t.timestamp,
                gps: (g - t.translation).norm(),
                optimized: (e.translation - t.translation).norm(),
                gps_dz: g[2] - t.translation[2],
                optimized_dz: e.translation[2] - t.translation[2],
            })
            .collect()
    }

    pub fn gps_rmse(&self) -> f64 {
        rmse(self.truth.iter().zip(&self.gps).map(|(t, g)| (g - t.translation).norm_squared()))
    }

    pub fn rmse(&self, estimate: &[PoseNode]) -> f64 {
        rmse(self.truth.iter().zip(estimate).map(|(t, e)| (e.translation - t.translation).norm_squared()))
    }

    pub fn altitude_rmse(&self, estimate: &[PoseNode]) -> f64 {
        rmse(self.truth.iter().zip(estimate).map(|(t, e)| (e.translation[2] - t.translation[2]).powi(2)))
    }

    pub fn gps_altitude_rmse(&self) -> f64 {
        rmse(self.truth.iter().zip(&self.gps).map(|(t, g)| (g[2] - t.translation[2]).powi(2)))
    }
}

fn rmse(sq: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for v in sq {
        s += v;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        (s / n as f64).sqrt()
    }
}

/// Positional root-mean-square difference between two trajectories.
pub fn trajectory_rmse(a: &[PoseNode], b: &[PoseNode]) -> f64 {
    rmse(a.iter().zip(b).map(|(x, y)| (x.translation - y.translation).norm_squared()))
}

/// Per-node error table: raw GPS against the optimized trajectory.
pub fn error_csv(errors: &[NodeError]) -> String {
    let mut out = String::from("id,t_s,gps_err_m,opt_err_m,gps_dz_m,opt_dz_m\n");
    for e in errors {
        out.push_str(&format!(
            "{},{:.3},{:.6},{:.6},{:.6},{:.6}\n",
            e.id, e.timestamp, e.gps, e.optimized, e.gps_dz, e.optimized_dz
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_free_drive_is_consistent() {
        let spec = DriveSpec { nodes: 20, noise_scale: 0.0, use_smoothness: false, ..Default::default() };
        let run = simulate_drive(&spec);
        assert_eq!(run.gps_rmse(), 0.0);
        let dr = dead_reckon(&run);
        assert!(run.rmse(&dr) < 1e-9);
        let g = {
            let mut g = PoseGraph::with_dem(run.dem.clone());
            for n in &run.truth {
                g.add_node(n.clone());
            }
            for cs in &run.constraints {
                g.constraints.extend(cs.iter().cloned());
            }
            g
        };
        assert!(g.cost().unwrap() < 1e-12);
    }

    #[test]
    fn dem_and_smoothness_beat_gps_altitude() {
        let spec = DriveSpec { nodes: 60, seed: 3, ..Default::default() };
        let run = simulate_drive(&spec);
        let cfg = WindowConfig { window_size: 20, ..Default::default() };
        let (traj, reports) = run_sliding(&run, &cfg).unwrap();
        assert!(reports.iter().all(|r| r.final_cost <= r.initial_cost));
        assert!(run.altitude_rmse(&traj) < run.gps_altitude_rmse());
        assert!(run.rmse(&traj) < run.gps_rmse());
        let csv = error_csv(&run.errors(&traj));
        assert_eq!(csv.lines().count(), 61);
    }
}
