use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::AffineTransform3D;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CpdConfig {
    pub max_iterations: usize,
    /// Relative change of the negative log-likelihood that ends the loop.
    pub tolerance: f64,
    /// Lower bound on the mixture variance (m²).
    pub sigma2_floor: f64,
    /// Starting mixture variance (m²). `None` uses the mean squared distance
    /// over all source/target pairs.
    pub initial_sigma2: Option<f64>,
    /// Length scale `ρ` of a prior `M ρ² ‖B − I‖² / 2σ²` on the linear part;
    /// 0 gives plain maximum likelihood. The recorded objective includes it.
    pub ridge: f64,
}

impl Default for CpdConfig {
    fn default() -> Self {
        CpdConfig {
            max_iterations: 150,
            tolerance: 1e-9,
            sigma2_floor: 1e-12,
            initial_sigma2: None,
            ridge: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpdResult {
    pub transform: AffineTransform3D,
    pub sigma2: f64,
    /// Negative log-likelihood after each EM iteration (first entry: initial guess).
    pub nll: Vec<f64>,
    pub iterations: usize,
    /// False when the iteration budget ran out before the tolerance was met.
    pub converged: bool,
}

struct EStep {
    nll: f64,
    /// Posterior weights, row-major `M × N`.
    p: Vec<f64>,
}

fn e_step(src: &[Vector3<f64>], tgt: &[Vector3<f64>], f: &AffineTransform3D, sigma2: f64, w: f64, lambda: f64) -> EStep {
    let (m, n) = (src.len(), tgt.len());
    let b = f.matrix();
    let t = f.vector();
    let moved: Vec<Vector3<f64>> = src.iter().map(|y| b * y + t).collect();
    let d = 3.0;
    let log_c = if w > 0.0 {
        (d / 2.0) * (std::f64::consts::TAU * sigma2).ln() + (w / (1.0 - w)).ln() + (m as f64 / n as f64).ln()
    } else {
        f64::NEG_INFINITY
    };
    let mut p = vec![0.0; m * n];
    let mut nll = 0.0;
    let mut col = vec![0.0; m];
    for (j, x) in tgt.iter().enumerate() {
        let mut top = log_c;
        for (i, y) in moved.iter().enumerate() {
            col[i] = -(x - y).norm_squared() / (2.0 * sigma2);
            top = top.max(col[i]);
        }
        let mut s = if log_c.is_finite() { (log_c - top).exp() } else { 0.0 };
        for v in &col {
            s += (v - top).exp();
        }
        let lse = top + s.ln();
        for i in 0..m {
            p[i * n + j] = (col[i] - lse).exp();
        }
        nll -= ((1.0 - w) / m as f64).ln() - (d / 2.0) * (std::f64::consts::TAU * sigma2).ln() + lse;
    }
    nll += lambda * (b - Matrix3::identity()).norm_squared() / (2.0 * sigma2);
    EStep { nll, p }
}

/// Affine Coherent Point Drift: moves `source` onto `target` with an EM fit
/// of a Gaussian mixture centred on the transformed source points plus a
/// uniform outlier component of weight `w`.
pub fn cpd_affine(
    source: &[[f64; 3]],
    target: &[[f64; 3]],
    w: f64,
    init: &AffineTransform3D,
    cfg: &CpdConfig,
) -> Result<CpdResult> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::Parameter("CPD needs non-empty point sets".into()));
    }
    if !(0.0..1.0).contains(&w) {
        return Err(Error::Parameter("outlier weight must be in [0, 1)".into()));
    }
    let y: Vec<Vector3<f64>> = source.iter().map(|p| Vector3::from(*p)).collect();
    let x: Vec<Vector3<f64>> = target.iter().map(|p| Vector3::from(*p)).collect();
    let (m, n) = (y.len(), x.len());
    let mut f = *init;
    let mut sigma2 = if let Some(s2) = cfg.initial_sigma2 {
        if !(s2 > 0.0) {
            return Err(Error::Parameter("initial CPD variance must be positive".into()));
        }
        s2
    } else {
        let b = f.matrix();
        let t = f.vector();
        let mut s = 0.0;
        for yi in &y {
            let moved = b * yi + t;
            for xj in &x {
                s += (xj - moved).norm_squared();
            }
        }
        (s / (3.0 * m as f64 * n as f64)).max(cfg.sigma2_floor)
    };
    if !(cfg.ridge >= 0.0) {
        return Err(Error::Parameter("CPD ridge must be non-negative".into()));
    }
    let lambda = m as f64 * cfg.ridge * cfg.ridge;
    let mut e = e_step(&y, &x, &f, sigma2, w, lambda);
    let mut nll = vec![e.nll];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iterations {
        iterations += 1;
        // M-step: closed-form affine and variance given the posteriors.
        let (mut np, mut sx, mut sy) = (0.0, Vector3::zeros(), Vector3::zeros());
        let mut p1 = vec![0.0; m];
        let mut pt1 = vec![0.0; n];
        for i in 0..m {
            for j in 0..n {
                let v = e.p[i * n + j];
                p1[i] += v;
                pt1[j] += v;
            }
        }
        for i in 0..m {
            np += p1[i];
            sy += y[i] * p1[i];
        }
        for j in 0..n {
            sx += x[j] * pt1[j];
        }
        if !(np > 1e-300) {
            break;
        }
        let (mux, muy) = (sx / np, sy / np);
        let mut xpy = Matrix3::zeros();
        let mut ydy = Matrix3::zeros();
        for i in 0..m {
            let yh = y[i] - muy;
            ydy += yh * yh.transpose() * p1[i];
            for j in 0..n {
                let v = e.p[i * n + j];
                if v != 0.0 {
                    xpy += (x[j] - mux) * yh.transpose() * v;
                }
            }
        }
        let eye = Matrix3::identity();
        let Some(inv) = (ydy + eye * lambda).try_inverse() else {
            return Err(Error::RankDeficient("source points are degenerate for CPD".into()));
        };
        let b = (xpy + eye * lambda) * inv;
        let t = mux - b * muy;
        let xdx: f64 = (0..n).map(|j| (x[j] - mux).norm_squared() * pt1[j]).sum();
        let fit = xdx - 2.0 * (xpy * b.transpose()).trace() + (b * ydy * b.transpose()).trace();
        sigma2 = ((fit + lambda * (b - eye).norm_squared()) / (np * 3.0)).max(cfg.sigma2_floor);
        f = AffineTransform3D::from_parts(b, t);
        e = e_step(&y, &x, &f, sigma2, w, lambda);
        let prev = *nll.last().expect("history");
        nll.push(e.nll);
        if (prev - e.nll).abs() <= cfg.tolerance * e.nll.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    Ok(CpdResult { transform: f, sigma2, nll, iterations, converged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    fn cloud(n: usize, seed: u64) -> Vec<[f64; 3]> {
        let mut rng = seeded(seed);
        (0..n).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-0.3..0.3)]).collect()
    }

    fn planted() -> AffineTransform3D {
        let (s, c) = 0.05f64.sin_cos();
        let a = Matrix3::new(1.1 * c, -1.1 * s, 0.01, 1.1 * s, 1.1 * c, 0.0, 0.0, 0.02, 1.05);
        AffineTransform3D::from_parts(a, Vector3::new(0.05, -0.04, 0.02))
    }

    fn max_err(a: &AffineTransform3D, b: &AffineTransform3D) -> f64 {
        let m = (a.matrix() - b.matrix()).abs().max();
        m.max((a.vector() - b.vector()).abs().max())
    }

    fn monotone(nll: &[f64]) -> bool {
        nll.windows(2).all(|w| w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0))
    }

    #[test]
    fn identical_sets_give_identity() {
        let pts = cloud(60, 1);
        let r = cpd_affine(&pts, &pts, 0.0, &AffineTransform3D::identity(), &CpdConfig::default()).unwrap();
        assert!(max_err(&r.transform, &AffineTransform3D::identity()) < 1e-6);
        assert!(r.sigma2 < 1e-6);
        assert!(monotone(&r.nll));
    }

    #[test]
    fn planted_affine_is_recovered() {
        let src = cloud(80, 2);
        let f = planted();
        let tgt: Vec<_> = src.iter().map(|&p| f.apply(p)).collect();
        let r = cpd_affine(&src, &tgt, 0.0, &AffineTransform3D::identity(), &CpdConfig::default()).unwrap();
        assert!(max_err(&r.transform, &f) < 1e-4, "{:?}", r.transform);
        assert!(monotone(&r.nll));
    }

    #[test]
    fn outliers_with_weight() {
        let src = cloud(100, 3);
        let f = planted();
        let mut tgt: Vec<_> = src.iter().map(|&p| f.apply(p)).collect();
        let mut rng = seeded(4);
        for _ in 0..20 {
            tgt.push([rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5), rng.random_range(-0.5..0.5)]);
        }
        let r = cpd_affine(&src, &tgt, 0.2, &AffineTransform3D::identity(), &CpdConfig::default()).unwrap();
        assert!(max_err(&r.transform, &f) < 1e-2, "{:?}", r.transform);
        assert!(monotone(&r.nll));
    }

    #[test]
    fn ridge_handles_planar_source() {
        let src: Vec<[f64; 3]> = cloud(60, 7).into_iter().map(|p| [p[0], p[1], 0.0]).collect();
        let (s, c) = 0.1f64.sin_cos();
        let f = AffineTransform3D::from_parts(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0), Vector3::new(0.1, 0.0, 0.0));
        let tgt: Vec<_> = src.iter().map(|&p| f.apply(p)).collect();
        let id = AffineTransform3D::identity();
        assert!(matches!(cpd_affine(&src, &tgt, 0.0, &id, &CpdConfig::default()), Err(Error::RankDeficient(_))));
        let cfg = CpdConfig { ridge: 0.01, ..Default::default() };
        let r = cpd_affine(&src, &tgt, 0.0, &id, &cfg).unwrap();
        assert!(max_err(&r.transform, &f) < 1e-2, "{:?}", r.transform);
        assert!(monotone(&r.nll));
    }

    #[test]
    fn bad_inputs() {
        let pts = cloud(5, 5);
        let id = AffineTransform3D::identity();
        assert!(cpd_affine(&[], &pts, 0.0, &id, &CpdConfig::default()).is_err());
        assert!(cpd_affine(&pts, &pts, 1.0, &id, &CpdConfig::default()).is_err());
        assert!(cpd_affine(&pts, &pts, 0.0, &id, &CpdConfig { ridge: -1.0, ..Default::default() }).is_err());
        assert!(cpd_affine(&pts, &pts, 0.0, &id, &CpdConfig { initial_sigma2: Some(0.0), ..Default::default() }).is_err());
        let short = CpdConfig { max_iterations: 1, ..Default::default() };
        let src = cloud(30, 6);
        let tgt: Vec<_> = src.iter().map(|&p| planted().apply(p)).collect();
        assert!(!cpd_affine(&src, &tgt, 0.0, &id, &short).unwrap().converged);
    }
}
