use nalgebra::{DMatrix, Matrix3, Vector3};

use super::{AffineTransform3D, MatchSet};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineFit {
    pub transform: AffineTransform3D,
    pub rmse: f64,
}

/// Least-squares `A, t` minimizing `Σ ‖A p + t − q‖²`.
pub fn estimate_affine(matches: &MatchSet) -> Result<AffineFit> {
    fit_pairs(&matches.pairs)
}

pub(crate) fn fit_pairs(pairs: &[([f64; 3], [f64; 3])]) -> Result<AffineFit> {
    fit_pairs_ridge(pairs, 0.0)
}

/// Least squares with a penalty `n ρ² ‖A − I‖²`: directions in which the
/// source points spread less than about `ρ` are pulled toward the identity.
pub fn fit_pairs_ridge(pairs: &[([f64; 3], [f64; 3])], rho: f64) -> Result<AffineFit> {
    let n = pairs.len();
    if n < 4 {
        return Err(Error::RankDeficient(format!("{n} correspondences; at least 4 are needed")));
    }
    let mut mp = Vector3::zeros();
    let mut mq = Vector3::zeros();
    for (p, q) in pairs {
        mp += Vector3::from(*p);
        mq += Vector3::from(*q);
    }
    mp /= n as f64;
    mq /= n as f64;
    let pc = DMatrix::from_fn(n, 3, |r, c| pairs[r].0[c] - mp[c]);
    let qc = DMatrix::from_fn(n, 3, |r, c| pairs[r].1[c] - mq[c]);
    let at = if rho > 0.0 {
        let lambda = n as f64 * rho * rho;
        let eye = DMatrix::<f64>::identity(3, 3);
        let lhs = pc.transpose() * &pc + &eye * lambda;
        let rhs = pc.transpose() * &qc + &eye * lambda;
        lhs.cholesky().ok_or_else(|| Error::RankDeficient("ridge system is not positive definite".into()))?.solve(&rhs)
    } else {
        let svd = pc.clone().svd(true, true);
        let s = &svd.singular_values;
        let (smax, smin) = (s.max(), s.min());
        if !(smin > 1e-9 * smax) {
            return Err(Error::RankDeficient("correspondences are coplanar or collinear".into()));
        }
        let u = svd.u.as_ref().expect("u");
        let vt = svd.v_t.as_ref().expect("v_t");
        // Pc⁺ = V S⁻¹ Uᵀ, and Aᵀ = Pc⁺ Qc.
        let sinv = DMatrix::from_diagonal(&s.map(|v| 1.0 / v));
        vt.transpose() * sinv * u.transpose() * &qc
    };
    let a = Matrix3::from_fn(|i, j| at[(j, i)]);
    let t = mq - a * mp;
    let transform = AffineTransform3D::from_parts(a, t);
    let sq: f64 = pairs
        .iter()
        .map(|(p, q)| {
            let f = transform.apply(*p);
            (0..3).map(|k| (f[k] - q[k]).powi(2)).sum::<f64>()
        })
        .sum();
    Ok(AffineFit { transform, rmse: (sq / n as f64).sqrt() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn cloud(n: usize, seed: u64) -> Vec<[f64; 3]> {
        let mut rng = seeded(seed);
        (0..n).map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-0.5..0.5)]).collect()
    }

    fn planted(seed: u64) -> AffineTransform3D {
        let mut rng = seeded(seed);
        loop {
            let a = Matrix3::from_fn(|i, j| if i == j { 1.0 } else { 0.0 } + rng.random_range(-0.3..0.3));
            let det = a.determinant();
            if (0.5..=2.0).contains(&det) {
                return AffineTransform3D::from_parts(a, Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), 0.3));
            }
        }
    }

    #[test]
    fn identity_matches() {
        let pairs: Vec<_> = cloud(30, 1).into_iter().map(|p| (p, p)).collect();
        let fit = fit_pairs(&pairs).unwrap();
        let id = AffineTransform3D::identity();
        for i in 0..3 {
            for j in 0..3 {
                assert!((fit.transform.linear[i][j] - id.linear[i][j]).abs() < 1e-9);
            }
            assert!(fit.transform.translation[i].abs() < 1e-9);
        }
    }

    #[test]
    fn planted_transform_is_recovered() {
        for seed in 0..10 {
            let f = planted(seed);
            let pairs: Vec<_> = cloud(40, seed + 100).into_iter().map(|p| (p, f.apply(p))).collect();
            let fit = fit_pairs(&pairs).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    assert!((fit.transform.linear[i][j] - f.linear[i][j]).abs() < 1e-6);
                }
                assert!((fit.transform.translation[i] - f.translation[i]).abs() < 1e-6);
            }
        }
    }

    /// Noisy targets: the parameter error of every entry stays inside a
    /// bound derived from the spread of a Monte-Carlo reference run.
    #[test]
    fn noisy_fit_within_monte_carlo_bound() {
        let f = planted(3);
        let pts = cloud(200, 7);
        let noise = Normal::new(0.0, 0.01).unwrap();
        let errors: Vec<f64> = (0..60u64)
            .map(|s| {
                let mut rng = seeded(1000 + s);
                let pairs: Vec<_> = pts
                    .iter()
                    .map(|&p| {
                        let q = f.apply(p);
                        (p, [q[0] + noise.sample(&mut rng), q[1] + noise.sample(&mut rng), q[2] + noise.sample(&mut rng)])
                    })
                    .collect();
                let fit = fit_pairs(&pairs).unwrap();
                (fit.transform.matrix() - f.matrix()).abs().max()
            })
            .collect();
        // Entry standard error ≈ σ / (std of coordinate · √n); z has std ≈ 0.29.
        let bound = 5.0 * 0.01 / (0.29 * (200f64).sqrt());
        assert!(errors.iter().all(|&e| e < bound), "max {}", errors.iter().cloned().fold(0.0, f64::max));
    }

    #[test]
    fn coplanar_is_rank_deficient() {
        let pairs: Vec<_> = cloud(20, 2).into_iter().map(|p| ([p[0], p[1], 1.0], p)).collect();
        assert!(matches!(fit_pairs(&pairs), Err(Error::RankDeficient(_))));
        assert!(fit_pairs(&[([0.0; 3], [0.0; 3]); 3]).is_err());
    }

    #[test]
    fn ridge_fills_the_flat_direction_with_identity() {
        let (s, c) = 0.3f64.sin_cos();
        let a = Matrix3::new(1.1 * c, -1.1 * s, 0.0, 1.1 * s, 1.1 * c, 0.0, 0.0, 0.0, 1.0);
        let f = AffineTransform3D::from_parts(a, Vector3::new(0.5, -0.2, 0.1));
        let pairs: Vec<_> = cloud(40, 3)
            .into_iter()
            .map(|p| {
                let p = [p[0], p[1], 2.0];
                (p, f.apply(p))
            })
            .collect();
        let fit = fit_pairs_ridge(&pairs, 1e-4).unwrap();
        let m = fit.transform.matrix();
        for i in 0..3 {
            assert!((m[(i, 2)] - if i == 2 { 1.0 } else { 0.0 }).abs() < 1e-12);
            for j in 0..2 {
                assert!((m[(i, j)] - a[(i, j)]).abs() < 1e-6);
            }
        }
        assert!(fit.rmse < 1e-6);
    }
}
