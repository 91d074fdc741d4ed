//! Crop-row navigation: Pattern Hough Transform, row-relative EKF and the
//! lattice-based crop/weed classifier.

mod classify;
mod ekf;
mod features;
mod hough;

pub use classify::{classify_by_geometry, GeometricLabel, PlantObservation};
pub use ekf::{
    ekf_correct_gps, ekf_correct_pattern, ekf_predict, EkfNoise, OdomTwist, RowRelativePose,
};
pub use features::{component_centroids, FeatureGrid};
pub use hough::{detect_pattern, detect_rows, refine_pattern, support, SearchGrid, DEFAULT_TOLERANCE};

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

/// Family of parallel, equidistant lines: line `k` is
/// `{p : p · (-sin θ, cos θ) = offset + k · spacing}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pattern {
    /// Orientation in `[-π/2, π/2)`.
    pub theta: f64,
    pub spacing: f64,
    /// In `[0, spacing)`.
    pub offset: f64,
    /// Support: summed weight of features near a line.
    pub score: f64,
}

/// Projection of `p` on the unit normal of orientation `theta`.
#[inline]
pub fn project(theta: f64, p: [f64; 2]) -> f64 {
    -theta.sin() * p[0] + theta.cos() * p[1]
}

/// Distance from normal coordinate `u` to the nearest line of the family
/// `offset + k · spacing`.
#[inline]
pub fn line_residual(u: f64, offset: f64, spacing: f64) -> f64 {
    let d = (u - offset).rem_euclid(spacing);
    d.min(spacing - d)
}

impl Pattern {
    /// Canonical form: `theta` wrapped into `[-π/2, π/2)`, offset into `[0, spacing)`.
    pub fn canonical(theta: f64, spacing: f64, offset: f64, score: f64) -> Pattern {
        let mut t = (theta + FRAC_PI_2).rem_euclid(2.0 * PI) - FRAC_PI_2;
        let mut o = offset;
        if t >= FRAC_PI_2 {
            // θ and θ + π describe the same lines with the normal flipped.
            t -= PI;
            o = -o;
        }
        let mut o = o.rem_euclid(spacing);
        if o >= spacing {
            o = 0.0;
        }
        Pattern {
            theta: t,
            spacing,
            offset: o,
            score,
        }
    }

    pub fn normal(&self) -> [f64; 2] {
        [-self.theta.sin(), self.theta.cos()]
    }

    pub fn direction(&self) -> [f64; 2] {
        [self.theta.cos(), self.theta.sin()]
    }

    pub fn distance(&self, p: [f64; 2]) -> f64 {
        line_residual(project(self.theta, p), self.offset, self.spacing)
    }

    /// Index of the nearest line.
    pub fn line_index(&self, p: [f64; 2]) -> i64 {
        ((project(self.theta, p) - self.offset) / self.spacing).round() as i64
    }

    /// Pattern seen after applying `p' = R(phi) p + t` to the plane.
    pub fn transformed(&self, phi: f64, t: [f64; 2]) -> Pattern {
        let theta = self.theta + phi;
        let n = [-theta.sin(), theta.cos()];
        Pattern::canonical(
            theta,
            self.spacing,
            self.offset + t[0] * n[0] + t[1] * n[1],
            self.score,
        )
    }

    /// Circular offset difference in `[-spacing/2, spacing/2)`.
    pub fn offset_error(&self, other: &Pattern) -> f64 {
        let s = self.spacing;
        (self.offset - other.offset + 0.5 * s).rem_euclid(s) - 0.5 * s
    }
}

/// Angle difference wrapped into `[-π/2, π/2)` (lines are undirected).
pub fn line_angle_error(a: f64, b: f64) -> f64 {
    (a - b + FRAC_PI_2).rem_euclid(PI) - FRAC_PI_2
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_wraps_orientation_and_offset() {
        let p = Pattern::canonical(FRAC_PI_2 + 0.1, 0.5, 0.2, 0.0);
        assert!((p.theta - (-FRAC_PI_2 + 0.1)).abs() < 1e-12);
        assert!((p.offset - 0.3).abs() < 1e-12);
        // Same lines: a point on the original family is on the canonical one.
        let th = FRAC_PI_2 + 0.1;
        let q = [-th.sin() * 0.7, th.cos() * 0.7];
        assert!(p.distance(q) < 1e-12);
        let p = Pattern::canonical(0.0, 0.5, -0.1, 0.0);
        assert!((p.offset - 0.4).abs() < 1e-12);
    }

    #[test]
    fn transform_keeps_points_on_lines() {
        let p = Pattern { theta: 0.2, spacing: 0.6, offset: 0.1, score: 0.0 };
        let n = p.normal();
        let d = p.direction();
        let q = [n[0] * 0.7 + d[0] * 1.3, n[1] * 0.7 + d[1] * 1.3];
        assert!(p.distance(q) < 1e-12);
        let (phi, t) = (1.1f64, [0.3, -2.0]);
        let moved = [
            phi.cos() * q[0] - phi.sin() * q[1] + t[0],
            phi.sin() * q[0] + phi.cos() * q[1] + t[1],
        ];
        assert!(p.transformed(phi, t).distance(moved) < 1e-12);
    }

    #[test]
    fn residual_is_circular() {
        assert!((line_residual(0.49, 0.0, 0.5) - 0.01).abs() < 1e-12);
        assert!((line_residual(-0.01, 0.0, 0.5) - 0.01).abs() < 1e-12);
        assert!((line_angle_error(1.5, -1.5) - (3.0 - PI)).abs() < 1e-12);
    }
}
