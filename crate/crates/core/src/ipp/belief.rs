use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Squared-exponential kernel `σ_f² exp(−‖a − b‖² / 2l²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Kernel {
    pub signal_variance: f64,
    pub length_scale: f64,
    /// Added to every measurement variance.
    pub noise_floor: f64,
}

impl Default for Kernel {
    fn default() -> Self {
        Kernel { signal_variance: 1.0, length_scale: 3.0, noise_floor: 1e-6 }
    }
}

impl Kernel {
    pub fn eval(&self, a: [f64; 2], b: [f64; 2]) -> f64 {
        let d2 = (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
        self.signal_variance * (-d2 / (2.0 * self.length_scale * self.length_scale)).exp()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.signal_variance > 0.0 && self.length_scale > 0.0 && self.noise_floor >= 0.0) {
            return Err(Error::Parameter(format!("bad kernel hyperparameters {self:?}")));
        }
        Ok(())
    }
}

/// Gaussian belief over a regular grid of cells.
#[derive(Debug, Clone, PartialEq)]
pub struct TerrainBelief {
    pub extent: [f64; 2],
    pub resolution: f64,
    pub nx: usize,
    pub ny: usize,
    /// Row-major cell centres, `k = j·nx + i`.
    pub centers: Vec<[f64; 2]>,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub kernel: Kernel,
}

pub fn init_belief(extent: [f64; 2], resolution: f64, prior_mean: f64, kernel: Kernel) -> Result<TerrainBelief> {
    if !(resolution > 0.0) || !(extent[0] > 0.0 && extent[1] > 0.0) {
        return Err(Error::Parameter("belief extent and resolution must be positive".into()));
    }
    kernel.validate()?;
    let nx = (extent[0] / resolution - 1e-9).ceil() as usize;
    let ny = (extent[1] / resolution - 1e-9).ceil() as usize;
    let centers: Vec<[f64; 2]> = (0..nx * ny)
        .map(|k| [((k % nx) as f64 + 0.5) * resolution, ((k / nx) as f64 + 0.5) * resolution])
        .collect();
    let n = centers.len();
    let cov = DMatrix::from_fn(n, n, |a, b| kernel.eval(centers[a], centers[b]));
    Ok(TerrainBelief {
        extent,
        resolution,
        nx,
        ny,
        centers,
        mean: DVector::from_element(n, prior_mean),
        cov,
        kernel,
    })
}

/// Measured values of a set of cells, all with the same noise variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub pose: [f64; 3],
    pub cells: Vec<usize>,
    pub values: Vec<f64>,
    pub variance: f64,
}

/// Factors of one conditioning step: the pre-update columns `B = P Hᵀ` and
/// `X = S⁻¹ Bᵀ`, so that `P' = P − B X`.
pub(crate) struct Conditioned {
    pub b: DMatrix<f64>,
    pub x: DMatrix<f64>,
}

/// Conditions `cov` on noisy observations of `rows = (cell, variance)`.
pub(crate) fn condition(cov: &mut DMatrix<f64>, rows: &[(usize, f64)]) -> Result<Conditioned> {
    let n = cov.nrows();
    let m = rows.len();
    if rows.iter().any(|&(c, v)| c >= n || !(v > 0.0)) {
        return Err(Error::ContractViolation("observation rows must name belief cells with positive variance".into()));
    }
    let b = DMatrix::from_fn(n, m, |r, c| cov[(r, rows[c].0)]);
    let mut s = DMatrix::from_fn(m, m, |r, c| b[(rows[r].0, c)]);
    for (k, &(_, v)) in rows.iter().enumerate() {
        s[(k, k)] += v;
    }
    let chol = s.cholesky().ok_or_else(|| Error::ContractViolation("innovation covariance is not SPD".into()))?;
    let x = chol.solve(&b.transpose());
    cov.gemm(-1.0, &b, &x, 1.0);
    let sym = (&*cov + cov.transpose()) * 0.5;
    *cov = sym;
    Ok(Conditioned { b, x })
}

impl TerrainBelief {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn trace(&self) -> f64 {
        self.cov.trace()
    }

    pub fn max_asymmetry(&self) -> f64 {
        (&self.cov - self.cov.transpose()).abs().max()
    }

    /// Gaussian conditioning on a measurement of the selected cells.
    pub fn fuse(&mut self, m: &Measurement) -> Result<()> {
        self.fuse_factors(m).map(|_| ())
    }

    pub(crate) fn fuse_factors(&mut self, m: &Measurement) -> Result<Option<Conditioned>> {
        if m.cells.len() != m.values.len() {
            return Err(Error::ContractViolation(format!(
                "{} cells but {} values",
                m.cells.len(),
                m.values.len()
            )));
        }
        if m.cells.is_empty() {
            return Ok(None);
        }
        if m.cells.iter().any(|&c| c >= self.len()) {
            return Err(Error::ContractViolation("measurement names a cell outside the belief".into()));
        }
        let rows: Vec<(usize, f64)> = m.cells.iter().map(|&c| (c, m.variance)).collect();
        let innov = DVector::from_iterator(m.cells.len(), m.cells.iter().zip(&m.values).map(|(&c, &z)| z - self.mean[c]));
        let step = condition(&mut self.cov, &rows)?;
        self.mean += step.x.transpose() * innov;
        Ok(Some(step))
    }
}

pub fn fuse(belief: &TerrainBelief, m: &Measurement) -> Result<TerrainBelief> {
    let mut b = belief.clone();
    b.fuse(m)?;
    Ok(b)
}

/// Camera pointing down with a square field of view and altitude-dependent
/// noise `σ²(h) = a + b·h²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorModel {
    /// Half field-of-view angle (rad).
    pub half_fov: f64,
    pub noise_a: f64,
    pub noise_b: f64,
    pub min_altitude: f64,
    pub max_altitude: f64,
}

impl Default for SensorModel {
    fn default() -> Self {
        SensorModel {
            half_fov: 30f64.to_radians(),
            noise_a: 0.01,
            noise_b: 0.04,
            min_altitude: 1.0,
            max_altitude: 8.0,
        }
    }
}

impl SensorModel {
    pub fn validate(&self) -> Result<()> {
        let ok = self.noise_a > 0.0
            && self.noise_b >= 0.0
            && self.half_fov >= 0.0
            && self.half_fov < std::f64::consts::FRAC_PI_2
            && self.min_altitude > 0.0
            && self.min_altitude <= self.max_altitude;
        if !ok {
            return Err(Error::Parameter(format!("bad sensor model {self:?}")));
        }
        Ok(())
    }

    pub fn variance(&self, h: f64) -> f64 {
        self.noise_a + self.noise_b * h * h
    }

    pub fn footprint_side(&self, h: f64) -> f64 {
        2.0 * h * self.half_fov.tan()
    }

    fn check_altitude(&self, h: f64) -> Result<()> {
        if !(h >= self.min_altitude - 1e-12 && h <= self.max_altitude + 1e-12) {
            return Err(Error::InvalidObservation(format!(
                "altitude {h} outside [{}, {}]",
                self.min_altitude, self.max_altitude
            )));
        }
        Ok(())
    }

    /// Cells whose centres fall inside the square footprint at `pose`.
    pub fn footprint(&self, belief: &TerrainBelief, pose: [f64; 3]) -> Vec<usize> {
        let half = 0.5 * self.footprint_side(pose[2]);
        let r = belief.resolution;
        let range = |c: f64, n: usize| {
            let lo = ((c - half) / r - 0.5).ceil().max(0.0);
            let hi = ((c + half) / r - 0.5).floor().min(n as f64 - 1.0);
            (lo as i64, hi as i64)
        };
        let (i0, i1) = range(pose[0], belief.nx);
        let (j0, j1) = range(pose[1], belief.ny);
        let mut out = Vec::new();
        for j in j0..=j1 {
            for i in i0..=i1 {
                out.push(j as usize * belief.nx + i as usize);
            }
        }
        out
    }

    /// Footprint rows `(cell, variance)` at `pose`, including the kernel's
    /// noise floor.
    pub(crate) fn rows(&self, belief: &TerrainBelief, pose: [f64; 3]) -> Vec<(usize, f64)> {
        let v = self.variance(pose[2]) + belief.kernel.noise_floor;
        self.footprint(belief, pose).into_iter().map(|c| (c, v)).collect()
    }
}

/// Ground-truth value per belief cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthMap {
    pub values: Vec<f64>,
}

impl TruthMap {
    /// Weed pressure in `[0, 1]`: a low background plus Gaussian hotspots.
    pub fn hotspots(belief: &TerrainBelief, count: usize, seed: u64) -> TruthMap {
        let mut rng = crate::rng::stream(seed, "ipp-hotspots");
        let spots: Vec<([f64; 2], f64, f64)> = (0..count)
            .map(|_| {
                let c = [rng.random_range(0.0..belief.extent[0]), rng.random_range(0.0..belief.extent[1])];
                (c, rng.random_range(1.5..4.0), rng.random_range(0.5..1.0))
            })
            .collect();
        let values = belief
            .centers
            .iter()
            .map(|p| {
                let v: f64 = spots
                    .iter()
                    .map(|(c, r, a)| a * (-((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)) / (2.0 * r * r)).exp())
                    .sum();
                (0.1 + v).min(1.0)
            })
            .collect();
        TruthMap { values }
    }
}

/// Simulated image at `pose`: truth plus Gaussian noise of the footprint
/// variance.
pub fn observe<R: Rng>(
    belief: &TerrainBelief,
    pose: [f64; 3],
    sensor: &SensorModel,
    world: &TruthMap,
    rng: &mut R,
) -> Result<Measurement> {
    sensor.check_altitude(pose[2])?;
    if world.values.len() != belief.len() {
        return Err(Error::ContractViolation("truth map does not match the belief grid".into()));
    }
    let cells = sensor.footprint(belief, pose);
    let variance = sensor.variance(pose[2]) + belief.kernel.noise_floor;
    let noise = Normal::new(0.0, variance.sqrt()).expect("finite variance");
    let values = cells.iter().map(|&c| world.values[c] + noise.sample(rng)).collect();
    Ok(Measurement { pose, cells, values, variance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;

    fn small(n: f64, l: f64) -> TerrainBelief {
        init_belief([n, n], 1.0, 0.5, Kernel { length_scale: l, ..Default::default() }).unwrap()
    }

    #[test]
    fn init_trace_and_symmetry() {
        let b = small(10.0, 3.0);
        assert_eq!(b.len(), 100);
        assert!((b.trace() - 100.0).abs() < 1e-12);
        assert!(b.max_asymmetry() < 1e-12);
        assert!(init_belief([5.0, 5.0], 0.0, 0.0, Kernel::default()).is_err());
    }

    #[test]
    fn short_length_scale_is_diagonal() {
        let b = small(6.0, 0.1);
        for a in 0..b.len() {
            for c in 0..b.len() {
                if a != c {
                    assert!(b.cov[(a, c)] < 1e-6);
                }
            }
        }
    }

    #[test]
    fn scalar_bayes_oracle() {
        let k = Kernel { signal_variance: 2.0, noise_floor: 0.0, ..Default::default() };
        let mut b = init_belief([1.0, 1.0], 1.0, 0.3, k).unwrap();
        let (mu0, s0, z, sm) = (0.3, 2.0, 1.7, 0.5);
        b.fuse(&Measurement { pose: [0.5, 0.5, 1.0], cells: vec![0], values: vec![z], variance: sm }).unwrap();
        let want = (sm * mu0 + s0 * z) / (s0 + sm);
        assert!((b.mean[0] - want).abs() < 1e-12);
        assert!((b.cov[(0, 0)] - s0 * sm / (s0 + sm)).abs() < 1e-12);
    }

    #[test]
    fn uninformative_and_exact_measurements() {
        let prior = small(5.0, 2.0);
        let all: Vec<usize> = (0..prior.len()).collect();
        let truth: Vec<f64> = (0..prior.len()).map(|k| k as f64 * 0.1).collect();
        let vague = fuse(&prior, &Measurement { pose: [0.0; 3], cells: all.clone(), values: truth.clone(), variance: 1e12 }).unwrap();
        assert!((&vague.mean - &prior.mean).abs().max() < 1e-9);
        assert!((&vague.cov - &prior.cov).abs().max() < 1e-9);
        let exact = fuse(&prior, &Measurement { pose: [0.0; 3], cells: all, values: truth.clone(), variance: 1e-9 }).unwrap();
        for (k, t) in truth.iter().enumerate() {
            assert!((exact.mean[k] - t).abs() < 1e-6);
        }
        assert!(exact.trace() < 1e-6);
    }

    #[test]
    fn fuse_rejects_bad_measurements() {
        let mut b = small(3.0, 1.0);
        let m = Measurement { pose: [0.0; 3], cells: vec![0, 1], values: vec![1.0], variance: 1.0 };
        assert!(matches!(b.fuse(&m), Err(Error::ContractViolation(_))));
        let m = Measurement { pose: [0.0; 3], cells: vec![99], values: vec![1.0], variance: 1.0 };
        assert!(matches!(b.fuse(&m), Err(Error::ContractViolation(_))));
    }

    #[test]
    fn footprint_geometry() {
        let b = small(30.0, 3.0);
        let s = SensorModel::default();
        // Side 2·tan 30° ≈ 1.155 at h = 1: only the centre cell at (10.5, 10.5).
        assert_eq!(s.footprint(&b, [10.5, 10.5, 1.0]), vec![10 * 30 + 10]);
        // Centred on a cell corner the footprint reaches the four neighbours.
        assert_eq!(s.footprint(&b, [10.0, 10.0, 1.0]).len(), 4);
        let side = s.footprint_side(4.0);
        assert!((s.footprint_side(8.0) - 2.0 * side).abs() < 1e-12);
        assert!(s.variance(8.0) > s.variance(4.0));
        let n = s.footprint(&b, [15.0, 15.0, 8.0]).len();
        let per_axis = (0..30).filter(|&i| ((i as f64 + 0.5) - 15.0).abs() <= 0.5 * s.footprint_side(8.0)).count();
        assert_eq!(n, per_axis * per_axis);
        // Clipped at the field edge.
        assert!(s.footprint(&b, [0.0, 0.0, 8.0]).len() < n);
    }

    #[test]
    fn observe_noise_matches_model() {
        let b = small(4.0, 1.0);
        let s = SensorModel::default();
        let world = TruthMap { values: vec![0.25; b.len()] };
        let mut rng = seeded(3);
        let h = 2.0;
        let mut sq = 0.0;
        let mut n = 0;
        for _ in 0..1000 {
            let m = observe(&b, [2.0, 2.0, h], &s, &world, &mut rng).unwrap();
            for v in &m.values {
                sq += (v - 0.25).powi(2);
                n += 1;
            }
        }
        let emp = sq / n as f64;
        assert!((emp / s.variance(h) - 1.0).abs() < 0.1, "empirical {emp}");
        assert!(matches!(observe(&b, [2.0, 2.0, 0.5], &s, &world, &mut rng), Err(Error::InvalidObservation(_))));
        let a = observe(&b, [2.0, 2.0, h], &s, &world, &mut seeded(1)).unwrap();
        assert_eq!(a, observe(&b, [2.0, 2.0, h], &s, &world, &mut seeded(1)).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn fusion_is_order_invariant_and_shrinks_trace(
            c1 in proptest::collection::vec(0usize..36, 1..6),
            c2 in proptest::collection::vec(0usize..36, 1..6),
            v1 in 0.01f64..2.0, v2 in 0.01f64..2.0, z in -1.0f64..1.0,
        ) {
            let prior = small(6.0, 2.0);
            let m1 = Measurement { pose: [0.0; 3], values: vec![z; c1.len()], cells: c1, variance: v1 };
            let m2 = Measurement { pose: [0.0; 3], values: vec![-z; c2.len()], cells: c2, variance: v2 };
            let a = fuse(&fuse(&prior, &m1).unwrap(), &m2).unwrap();
            let b = fuse(&fuse(&prior, &m2).unwrap(), &m1).unwrap();
            prop_assert!((&a.mean - &b.mean).abs().max() < 1e-6);
            prop_assert!((&a.cov - &b.cov).abs().max() < 1e-6);
            let mid = fuse(&prior, &m1).unwrap();
            prop_assert!(mid.trace() <= prior.trace() + 1e-12);
            prop_assert!(a.trace() <= mid.trace() + 1e-12);
            prop_assert!(a.max_asymmetry() < 1e-9);
        }
    }
}
