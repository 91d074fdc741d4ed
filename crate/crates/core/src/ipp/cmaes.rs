use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::rng::stream;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmaesResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evaluations: usize,
    /// Best objective value after each evaluation.
    pub best_history: Vec<f64>,
}

/// `(μ/μ_w, λ)` CMA-ES with cumulative step-size adaptation and rank-one plus
/// rank-μ covariance updates. `population` defaults to `4 + ⌊3 ln n⌋`.
pub fn cmaes_minimize<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    sigma0: f64,
    population: Option<usize>,
    max_evals: usize,
    seed: u64,
) -> Result<CmaesResult> {
    let n = x0.len();
    if n == 0 {
        return Err(Error::Parameter("CMA-ES needs at least one dimension".into()));
    }
    if !(sigma0 > 0.0) {
        return Err(Error::Parameter("CMA-ES step size must be positive".into()));
    }
    let nf = n as f64;
    let lambda = population.unwrap_or(4 + (3.0 * nf.ln()).floor() as usize);
    if lambda < 2 {
        return Err(Error::Parameter(format!("population {lambda} is too small; at least 2 is needed")));
    }
    let mu = lambda / 2;
    let raw: Vec<f64> = (0..mu).map(|i| ((lambda as f64 + 1.0) / 2.0).ln() - ((i + 1) as f64).ln()).collect();
    let wsum: f64 = raw.iter().sum();
    let w: Vec<f64> = raw.iter().map(|v| v / wsum).collect();
    let mueff = 1.0 / w.iter().map(|v| v * v).sum::<f64>();

    let cs = (mueff + 2.0) / (nf + mueff + 5.0);
    let ds = 1.0 + 2.0 * (((mueff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + cs;
    let cc = (4.0 + mueff / nf) / (nf + 4.0 + 2.0 * mueff / nf);
    let c1 = 2.0 / ((nf + 1.3).powi(2) + mueff);
    let cmu = (1.0 - c1).min(2.0 * (mueff - 2.0 + 1.0 / mueff) / ((nf + 2.0).powi(2) + mueff));
    let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));

    let mut rng = stream(seed, "cmaes");
    let mut mean = DVector::from_column_slice(x0);
    let mut sigma = sigma0;
    let mut c = DMatrix::<f64>::identity(n, n);
    let mut ps = DVector::<f64>::zeros(n);
    let mut pc = DVector::<f64>::zeros(n);

    let mut best_x = x0.to_vec();
    let mut best_f = f64::INFINITY;
    let mut history = Vec::new();
    let mut generation = 0u32;
    while history.len() < max_evals {
        let eig = SymmetricEigen::new(c.clone());
        let d = eig.eigenvalues.map(|v| v.max(1e-300).sqrt());
        let b = eig.eigenvectors;
        let bd = &b * DMatrix::from_diagonal(&d);

        let mut pop: Vec<(f64, DVector<f64>)> = Vec::with_capacity(lambda);
        for _ in 0..lambda {
            if history.len() >= max_evals {
                break;
            }
            let z = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
            let x = &mean + (&bd * z) * sigma;
            let fx = f(x.as_slice());
            let fx = if fx.is_nan() { f64::INFINITY } else { fx };
            if fx < best_f {
                best_f = fx;
                best_x = x.as_slice().to_vec();
            }
            history.push(best_f);
            pop.push((fx, x));
        }
        if pop.len() < lambda {
            break;
        }
        pop.sort_by(|a, b| a.0.total_cmp(&b.0));

        let old = mean.clone();
        mean = DVector::zeros(n);
        for (wi, (_, x)) in w.iter().zip(&pop) {
            mean += x * *wi;
        }
        let yw = (&mean - &old) / sigma;
        let c_inv_sqrt = &b * DMatrix::from_diagonal(&d.map(|v| 1.0 / v)) * b.transpose();
        ps = ps * (1.0 - cs) + (c_inv_sqrt * &yw) * (cs * (2.0 - cs) * mueff).sqrt();
        generation += 1;
        let hsig = ps.norm() / (1.0 - (1.0 - cs).powi(2 * generation as i32)).sqrt() < (1.4 + 2.0 / (nf + 1.0)) * chi_n;
        let hs = if hsig { 1.0 } else { 0.0 };
        pc = pc * (1.0 - cc) + &yw * (hs * (cc * (2.0 - cc) * mueff).sqrt());

        let mut rank_mu = DMatrix::<f64>::zeros(n, n);
        for (wi, (_, x)) in w.iter().zip(&pop) {
            let y = (x - &old) / sigma;
            rank_mu += &y * y.transpose() * *wi;
        }
        c = &c * (1.0 - c1 - cmu)
            + (&pc * pc.transpose() + &c * ((1.0 - hs) * cc * (2.0 - cc))) * c1
            + rank_mu * cmu;
        c = (&c + c.transpose()) * 0.5;
        sigma *= ((cs / ds) * (ps.norm() / chi_n - 1.0)).exp();

        let spread = sigma * c.diagonal().max().sqrt();
        if !spread.is_finite() || spread < 1e-14 * (1.0 + mean.abs().max()) {
            break;
        }
    }
    Ok(CmaesResult { x: best_x, f: best_f, evaluations: history.len(), best_history: history })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere(x: &[f64]) -> f64 {
        x.iter().enumerate().map(|(i, v)| (v - 0.1 * i as f64).powi(2)).sum()
    }

    fn rosenbrock(x: &[f64]) -> f64 {
        x.windows(2).map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (1.0 - w[0]).powi(2)).sum()
    }

    fn monotone(h: &[f64]) -> bool {
        h.windows(2).all(|w| w[1] <= w[0])
    }

    #[test]
    fn sphere_dim6() {
        let r = cmaes_minimize(sphere, &[2.0; 6], 1.0, None, 3000, 1).unwrap();
        assert!(r.f < 1e-6, "f = {}", r.f);
        assert!(r.evaluations <= 3000);
        assert!(monotone(&r.best_history));
    }

    #[test]
    fn rosenbrock_dim4() {
        let r = cmaes_minimize(rosenbrock, &[0.0; 4], 0.5, None, 20000, 2).unwrap();
        assert!(r.f < 1e-3, "f = {}", r.f);
        assert!(monotone(&r.best_history));
    }

    #[test]
    fn degenerate_requests() {
        assert!(matches!(cmaes_minimize(sphere, &[0.0; 3], 1.0, Some(1), 100, 0), Err(Error::Parameter(_))));
        assert!(cmaes_minimize(sphere, &[], 1.0, None, 100, 0).is_err());
        assert!(cmaes_minimize(sphere, &[0.0], 0.0, None, 100, 0).is_err());
    }

    #[test]
    fn deterministic_under_seed() {
        let a = cmaes_minimize(rosenbrock, &[0.0; 3], 0.5, None, 500, 9).unwrap();
        let b = cmaes_minimize(rosenbrock, &[0.0; 3], 0.5, None, 500, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn budget_is_respected() {
        let r = cmaes_minimize(rosenbrock, &[0.0; 4], 0.5, Some(10), 95, 3).unwrap();
        assert!(r.evaluations <= 95);
        assert_eq!(r.best_history.len(), r.evaluations);
    }
}
