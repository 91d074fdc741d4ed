//! Sliding-window 6-DoF pose graph with GPS, IMU, DEM and altitude
//! smoothness constraints.

mod g2o;
mod optimize;
mod sim;
mod window;

pub use g2o::{read_g2o, write_g2o};
pub use optimize::{optimize, OptimizeReport, SolverConfig};
pub use sim::{
    dead_reckon, error_csv, run_batch, run_sliding, simulate_drive, trajectory_rmse, DriveRun, DriveSpec,
    NodeError,
};
pub use window::{SlidingWindow, WindowConfig};

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use nalgebra::{Isometry3, Matrix2, Matrix3, Matrix6, Translation3, UnitQuaternion, Vector3};

use crate::fieldgen::DemRaster;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PoseNode {
    pub id: u64,
    pub timestamp: f64,
    pub translation: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
}

impl PoseNode {
    pub fn new(id: u64, timestamp: f64, translation: Vector3<f64>, rotation: UnitQuaternion<f64>) -> Self {
        PoseNode { id, timestamp, translation, rotation }
    }

    pub fn isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.translation), self.rotation)
    }

    /// Perturbation used by the optimizer: translation in the world frame,
    /// rotation on the right through the exponential map.
    pub fn retract(&self, d: &[f64]) -> PoseNode {
        let dt = Vector3::new(d[0], d[1], d[2]);
        let dr = UnitQuaternion::from_scaled_axis(Vector3::new(d[3], d[4], d[5]));
        let q = self.rotation * dr;
        PoseNode {
            id: self.id,
            timestamp: self.timestamp,
            translation: self.translation + dt,
            rotation: UnitQuaternion::new_normalize(q.into_inner()),
        }
    }
}

/// Reference altitude of a DEM prior: a stored value, or the graph's DEM
/// interpolated at the node's current `(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AltitudeSource {
    Fixed(f64),
    Dem,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Constraint {
    MotionEdge { i: u64, j: u64, relative: Isometry3<f64>, info: Matrix6<f64> },
    GpsPrior { i: u64, position: Vector3<f64>, info: Matrix3<f64> },
    /// Roll and pitch from the gravity direction.
    ImuPrior { i: u64, roll_pitch: [f64; 2], info: Matrix2<f64> },
    DemPrior { i: u64, altitude: AltitudeSource, info: f64 },
    AltitudeSmoothness { i: u64, j: u64, info: f64 },
}

fn wrap(a: f64) -> f64 {
    (a + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU) - std::f64::consts::PI
}

impl Constraint {
    pub fn nodes(&self) -> (u64, Option<u64>) {
        match *self {
            Constraint::MotionEdge { i, j, .. } | Constraint::AltitudeSmoothness { i, j, .. } => (i, Some(j)),
            Constraint::GpsPrior { i, .. } | Constraint::ImuPrior { i, .. } | Constraint::DemPrior { i, .. } => {
                (i, None)
            }
        }
    }

    pub fn references(&self, id: u64) -> bool {
        let (i, j) = self.nodes();
        i == id || j == Some(id)
    }

    pub fn dim(&self) -> usize {
        match self {
            Constraint::MotionEdge { .. } => 6,
            Constraint::GpsPrior { .. } => 3,
            Constraint::ImuPrior { .. } => 2,
            Constraint::DemPrior { .. } | Constraint::AltitudeSmoothness { .. } => 1,
        }
    }

    /// Information matrix as a dense row-major `dim × dim` array.
    pub fn information(&self) -> Vec<f64> {
        match self {
            Constraint::MotionEdge { info, .. } => info.transpose().iter().copied().collect(),
            Constraint::GpsPrior { info, .. } => info.transpose().iter().copied().collect(),
            Constraint::ImuPrior { info, .. } => info.transpose().iter().copied().collect(),
            Constraint::DemPrior { info, .. } | Constraint::AltitudeSmoothness { info, .. } => vec![*info],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let spd = |m: nalgebra::DMatrix<f64>| {
            let sym = (&m - m.transpose()).abs().max() <= 1e-9 * m.abs().max().max(1e-300);
            sym && m.iter().all(|v| v.is_finite()) && m.cholesky().is_some()
        };
        let d = self.dim();
        if !spd(nalgebra::DMatrix::from_row_slice(d, d, &self.information())) {
            return Err(Error::ContractViolation("information matrix is not SPD".into()));
        }
        Ok(())
    }

    /// Residual of this constraint for the given nodes (`b` for binary ones).
    pub fn eval(&self, a: &PoseNode, b: Option<&PoseNode>, dem: Option<&DemRaster>) -> Result<Vec<f64>> {
        let second = || b.ok_or(Error::DanglingConstraint(self.nodes().1.unwrap_or(0)));
        Ok(match self {
            Constraint::MotionEdge { relative, .. } => {
                let est = a.isometry().inverse() * second()?.isometry();
                let e = relative.inverse() * est;
                let t = e.translation.vector;
                let r = e.rotation.scaled_axis();
                vec![t[0], t[1], t[2], r[0], r[1], r[2]]
            }
            Constraint::GpsPrior { position, .. } => {
                let r = a.translation - position;
                vec![r[0], r[1], r[2]]
            }
            Constraint::ImuPrior { roll_pitch, .. } => {
                let (roll, pitch, _) = a.rotation.euler_angles();
                vec![wrap(roll - roll_pitch[0]), wrap(pitch - roll_pitch[1])]
            }
            Constraint::DemPrior { altitude, .. } => {
                let reference = match altitude {
                    AltitudeSource::Fixed(z) => *z,
                    AltitudeSource::Dem => dem
                        .ok_or_else(|| Error::Config("DEM prior without a DEM raster".into()))?
                        .altitude(a.translation[0], a.translation[1]),
                };
                vec![a.translation[2] - reference]
            }
            Constraint::AltitudeSmoothness { .. } => vec![a.translation[2] - second()?.translation[2]],
        })
    }

    /// `rᵀ Ω r`.
    pub fn cost(&self, r: &[f64]) -> f64 {
        let d = r.len();
        let info = self.information();
        let mut c = 0.0;
        for i in 0..d {
            for j in 0..d {
                c += r[i] * info[i * d + j] * r[j];
            }
        }
        c
    }
}

#[derive(Debug, Clone, Default)]
pub struct PoseGraph {
    pub nodes: BTreeMap<u64, PoseNode>,
    pub constraints: Vec<Constraint>,
    /// Nodes held constant by the optimizer.
    pub fixed: BTreeSet<u64>,
    pub dem: Option<Arc<DemRaster>>,
}

impl PoseGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_dem(dem: Arc<DemRaster>) -> Self {
        PoseGraph { dem: Some(dem), ..Default::default() }
    }

    pub fn add_node(&mut self, node: PoseNode) {
        self.nodes.insert(node.id, node);
    }

    pub fn add(&mut self, c: Constraint) {
        self.constraints.push(c);
    }

    /// Residuals of every constraint, in insertion order.
    pub fn residual(&self, c: &Constraint) -> Result<Vec<f64>> {
        residual(c, &self.nodes, self.dem.as_deref())
    }

    pub fn cost(&self) -> Result<f64> {
        let mut total = 0.0;
        for c in &self.constraints {
            total += c.cost(&self.residual(c)?);
        }
        Ok(total)
    }
}

/// Residual of `c` against `nodes`.
pub fn residual(c: &Constraint, nodes: &BTreeMap<u64, PoseNode>, dem: Option<&DemRaster>) -> Result<Vec<f64>> {
    let (i, j) = c.nodes();
    let a = nodes.get(&i).ok_or(Error::DanglingConstraint(i))?;
    let b = match j {
        Some(j) => Some(nodes.get(&j).ok_or(Error::DanglingConstraint(j))?),
        None => None,
    };
    c.eval(a, b, dem)
}
