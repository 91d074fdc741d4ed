use nalgebra::{Matrix2, Matrix3, Matrix2x3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::{line_angle_error, Pattern};
use crate::{Error, Result};

/// Pose relative to the crop rows. The state lives in the row-map frame:
/// `x_along` runs along the row direction, `y_lateral` along the row normal
/// (measured like a pattern offset) and `heading` is relative to the rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RowRelativePose {
    pub mean: [f64; 3],
    pub cov: [[f64; 3]; 3],
    /// Orientation of the row map in the field frame.
    pub row_theta: f64,
}

/// Forward speed and yaw rate from wheel odometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdomTwist {
    pub v: f64,
    pub omega: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EkfNoise {
    /// Speed noise (m/s).
    pub sigma_v: f64,
    pub sigma_omega_odom: f64,
    pub sigma_omega_imu: f64,
    /// Minimum isotropic process noise per second.
    pub q_floor: f64,
    /// Pattern measurement noise on lateral offset (m) and heading (rad).
    pub pattern_lateral: f64,
    pub pattern_heading: f64,
}

impl Default for EkfNoise {
    fn default() -> Self {
        EkfNoise {
            sigma_v: 0.02,
            sigma_omega_odom: 0.05,
            sigma_omega_imu: 0.01,
            q_floor: 1e-6,
            pattern_lateral: 0.02,
            pattern_heading: 0.02,
        }
    }
}

impl RowRelativePose {
    pub fn new(mean: [f64; 3], cov: [[f64; 3]; 3], row_theta: f64) -> Self {
        RowRelativePose { mean, cov, row_theta }
    }

    /// Converts a field-frame pose `(x, y, yaw)` with covariance into the row frame.
    pub fn from_field(field: [f64; 3], cov: [[f64; 3]; 3], row_theta: f64) -> Self {
        let r = rot(row_theta);
        let a = r.transpose() * Vector2::new(field[0], field[1]);
        let mut j = Matrix3::identity();
        j.fixed_view_mut::<2, 2>(0, 0).copy_from(&r.transpose());
        let c = j * mat(&cov) * j.transpose();
        RowRelativePose {
            mean: [a[0], a[1], field[2] - row_theta],
            cov: arr(&c),
            row_theta,
        }
    }

    /// Field-frame `(x, y, yaw)`.
    pub fn to_field(&self) -> [f64; 3] {
        let p = rot(self.row_theta) * Vector2::new(self.mean[0], self.mean[1]);
        [p[0], p[1], self.mean[2] + self.row_theta]
    }

    pub fn trace(&self) -> f64 {
        self.cov[0][0] + self.cov[1][1] + self.cov[2][2]
    }
}

fn rot(t: f64) -> Matrix2<f64> {
    let (s, c) = t.sin_cos();
    Matrix2::new(c, -s, s, c)
}

fn mat(a: &[[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| a[i][j])
}

fn arr(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    let s = 0.5 * (m + m.transpose());
    [[s[(0, 0)], s[(0, 1)], s[(0, 2)]], [s[(1, 0)], s[(1, 1)], s[(1, 2)]], [s[(2, 0)], s[(2, 1)], s[(2, 2)]]]
}

fn check_spd<const N: usize>(m: &nalgebra::SMatrix<f64, N, N>, what: &str) -> Result<()> {
    let scale = m.abs().max().max(1e-300);
    if m.iter().any(|v| !v.is_finite()) || (m - m.transpose()).abs().max() > 1e-9 * scale {
        return Err(Error::ContractViolation(format!("{what} is not symmetric")));
    }
    if m.cholesky().is_none() {
        return Err(Error::ContractViolation(format!("{what} is not positive definite")));
    }
    Ok(())
}

/// Unicycle prediction with the odometry and IMU yaw rates fused by inverse variance.
pub fn ekf_predict(
    pose: &RowRelativePose,
    odom: OdomTwist,
    imu_yaw_rate: f64,
    dt: f64,
    noise: &EkfNoise,
) -> Result<RowRelativePose> {
    if !(dt > 0.0) {
        return Err(Error::ContractViolation("dt must be positive".into()));
    }
    let p = mat(&pose.cov);
    check_spd(&p, "pose covariance")?;
    let wo = 1.0 / noise.sigma_omega_odom.powi(2);
    let wi = 1.0 / noise.sigma_omega_imu.powi(2);
    let omega = (wo * odom.omega + wi * imu_yaw_rate) / (wo + wi);
    let var_omega = 1.0 / (wo + wi);

    let [a, l, psi] = pose.mean;
    let (s, c) = psi.sin_cos();
    let v = odom.v;
    let mean = [a + v * c * dt, l + v * s * dt, psi + omega * dt];
    let f = Matrix3::new(1.0, 0.0, -v * s * dt, 0.0, 1.0, v * c * dt, 0.0, 0.0, 1.0);
    let g = nalgebra::Matrix3x2::new(c * dt, 0.0, s * dt, 0.0, 0.0, dt);
    let qu = Matrix2::new(noise.sigma_v.powi(2), 0.0, 0.0, var_omega);
    let mut next = f * p * f.transpose() + g * qu * g.transpose()
        + Matrix3::identity() * (noise.q_floor * dt);
    // The heading shear can rotate uncertainty out of the trace; never let
    // prediction make the filter more confident.
    let deficit = p.trace() - next.trace();
    if deficit >= 0.0 {
        next += Matrix3::identity() * (deficit / 3.0 + noise.q_floor * dt);
    }
    Ok(RowRelativePose { mean, cov: arr(&next), row_theta: pose.row_theta })
}

/// Lateral offset and heading from a pattern detected in the robot frame,
/// given the known row map (in the row frame: `theta = 0`).
///
/// The along-row coordinate is a consider state: its gain row is zero, so it
/// is never corrected, but its covariance still feeds the update.
pub fn ekf_correct_pattern(
    pose: &RowRelativePose,
    detected: &Pattern,
    row_map: &Pattern,
    noise: &EkfNoise,
) -> Result<RowRelativePose> {
    let p = mat(&pose.cov);
    check_spd(&p, "pose covariance")?;
    let r = Matrix2::new(noise.pattern_lateral.powi(2), 0.0, 0.0, noise.pattern_heading.powi(2));
    check_spd(&r, "pattern noise")?;
    let s = row_map.spacing;
    // A robot at lateral l sees the rows at offset (o_map - l) mod s; take the
    // hypothesis nearest the prediction.
    let base = row_map.offset - detected.offset;
    let l_pred = pose.mean[1];
    let z_l = base + ((l_pred - base) / s).round() * s;
    let innov = Vector2::new(z_l - l_pred, line_angle_error(-detected.theta, pose.mean[2]));
    let h = Matrix2x3::new(0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
    let sm = h * p * h.transpose() + r;
    let sinv = sm.try_inverse().ok_or_else(|| Error::ContractViolation("singular innovation".into()))?;
    let mut k = p * h.transpose() * sinv;
    k.row_mut(0).fill(0.0);
    Ok(joseph(pose, &p, &k, &h, &r, &innov))
}

/// Standard linear update with a field-frame position fix.
pub fn ekf_correct_gps(
    pose: &RowRelativePose,
    gps_xy: [f64; 2],
    gps_cov: [[f64; 2]; 2],
) -> Result<RowRelativePose> {
    let p = mat(&pose.cov);
    check_spd(&p, "pose covariance")?;
    let rf = Matrix2::new(gps_cov[0][0], gps_cov[0][1], gps_cov[1][0], gps_cov[1][1]);
    check_spd(&rf, "gps covariance")?;
    let rt = rot(pose.row_theta).transpose();
    let z = rt * Vector2::new(gps_xy[0], gps_xy[1]);
    let r = rt * rf * rt.transpose();
    let h = Matrix2x3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0);
    let innov = z - Vector2::new(pose.mean[0], pose.mean[1]);
    let sm = h * p * h.transpose() + r;
    let sinv = sm.try_inverse().ok_or_else(|| Error::ContractViolation("singular innovation".into()))?;
    let k = p * h.transpose() * sinv;
    Ok(joseph(pose, &p, &k, &h, &r, &innov))
}

fn joseph(
    pose: &RowRelativePose,
    p: &Matrix3<f64>,
    k: &nalgebra::Matrix3x2<f64>,
    h: &Matrix2x3<f64>,
    r: &Matrix2<f64>,
    innov: &Vector2<f64>,
) -> RowRelativePose {
    let dx: Vector3<f64> = k * innov;
    let ikh = Matrix3::identity() - k * h;
    let next = ikh * p * ikh.transpose() + k * r * k.transpose();
    RowRelativePose {
        mean: [pose.mean[0] + dx[0], pose.mean[1] + dx[1], pose.mean[2] + dx[2]],
        cov: arr(&next),
        row_theta: pose.row_theta,
    }
}
