//! AgriColMap aerial-ground registration and temporal stem registration.

mod affine;
mod coherent;
mod cpd;
mod descriptor;
mod flow;
mod grid;
mod register;
mod sim;
mod temporal;

pub use affine::{estimate_affine, fit_pairs_ridge, AffineFit};
pub use coherent::{coherent_matches, MatchSet};
pub use cpd::{cpd_affine, CpdConfig, CpdResult};
pub use descriptor::{DescriptorImage, DESCRIPTOR_LEN};
pub use flow::{match_flow, FlowCell, FlowField, FlowParams};
pub use grid::{build_grid, MultimodalGrid};
pub use register::{register, RegisterConfig, Registration};
pub use sim::{planted_misalignment, MisalignmentCase, MisalignmentSpec};
pub use temporal::{
    apply_similarity, temporal_descriptor, temporal_match, Similarity2D, TemporalConfig, TemporalMatch,
};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// `F(x) = A x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform3D {
    pub linear: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl AffineTransform3D {
    pub fn identity() -> Self {
        Self::from_parts(Matrix3::identity(), Vector3::zeros())
    }

    pub fn from_parts(a: Matrix3<f64>, t: Vector3<f64>) -> Self {
        AffineTransform3D {
            linear: [
                [a[(0, 0)], a[(0, 1)], a[(0, 2)]],
                [a[(1, 0)], a[(1, 1)], a[(1, 2)]],
                [a[(2, 0)], a[(2, 1)], a[(2, 2)]],
            ],
            translation: [t[0], t[1], t[2]],
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.linear[i][j])
    }

    pub fn vector(&self) -> Vector3<f64> {
        Vector3::from(self.translation)
    }

    pub fn det(&self) -> f64 {
        self.matrix().determinant()
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let q = self.matrix() * Vector3::from(p) + self.vector();
        [q[0], q[1], q[2]]
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &AffineTransform3D) -> AffineTransform3D {
        let (a, b) = (self.matrix(), other.matrix());
        Self::from_parts(a * b, a * other.vector() + self.vector())
    }

    pub fn inverse(&self) -> Result<AffineTransform3D> {
        let inv = self
            .matrix()
            .try_inverse()
            .ok_or_else(|| Error::RankDeficient("affine transform is singular".into()))?;
        Ok(Self::from_parts(inv, -(inv * self.vector())))
    }

    /// Row-major 3×4 `[A | t]`, one row per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for i in 0..3 {
            let l = self.linear[i];
            out.push_str(&format!("{} {} {} {}\n", l[0], l[1], l[2], self.translation[i]));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let vals: Vec<f64> = text
            .split_whitespace()
            .map(|w| w.parse::<f64>().map_err(|_| Error::parse("transform", format!("bad number {w:?}"))))
            .collect::<Result<_>>()?;
        if vals.len() != 12 {
            return Err(Error::parse("transform", format!("expected 12 numbers, found {}", vals.len())));
        }
        let mut t = AffineTransform3D::identity();
        for i in 0..3 {
            t.linear[i] = [vals[4 * i], vals[4 * i + 1], vals[4 * i + 2]];
            t.translation[i] = vals[4 * i + 3];
        }
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compose_inverse_and_text() {
        let a = Matrix3::new(1.1, 0.05, 0.0, -0.05, 1.1, 0.0, 0.0, 0.0, 0.9);
        let f = AffineTransform3D::from_parts(a, Vector3::new(1.0, -2.0, 0.5));
        let id = f.compose(&f.inverse().unwrap());
        for (x, y) in id.matrix().iter().zip(Matrix3::<f64>::identity().iter()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert_eq!(AffineTransform3D::parse(&f.to_text()).unwrap(), f);
        assert!(AffineTransform3D::parse("1 2 3").is_err());
        let p = f.apply([1.0, 2.0, 3.0]);
        assert!((p[0] - (1.1 + 0.1 + 1.0)).abs() < 1e-12);
    }
}
