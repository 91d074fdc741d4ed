use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{residual, AltitudeSource, Constraint, PoseGraph, PoseNode};
use crate::fieldgen::DemRaster;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub max_iterations: usize,
    /// Stop once an accepted step lowers the cost by less than this fraction.
    pub epsilon: f64,
    pub initial_lambda: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iterations: 50,
            epsilon: 1e-10,
            initial_lambda: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeReport {
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub converged: bool,
}

const STEP: f64 = 1e-6;

/// Every motion-connected group of free nodes must contain a GPS prior or a
/// fixed node, otherwise the trajectory can slide freely.
fn check_gauge(graph: &PoseGraph) -> Result<()> {
    let ids: Vec<u64> = graph.nodes.keys().copied().collect();
    let index: BTreeMap<u64, usize> = ids.iter().enumerate().map(|(k, &id)| (id, k)).collect();
    let mut parent: Vec<usize> = (0..ids.len()).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut anchored = vec![false; ids.len()];
    for id in &graph.fixed {
        if let Some(&k) = index.get(id) {
            anchored[k] = true;
        }
    }
    for c in &graph.constraints {
        match *c {
            Constraint::MotionEdge { i, j, .. } => {
                let (a, b) = (find(&mut parent, index[&i]), find(&mut parent, index[&j]));
                parent[a] = b;
            }
            Constraint::GpsPrior { i, .. } => anchored[index[&i]] = true,
            _ => {}
        }
    }
    let mut root_ok = vec![false; ids.len()];
    for k in 0..ids.len() {
        let r = find(&mut parent, k);
        root_ok[r] |= anchored[k];
    }
    for k in 0..ids.len() {
        let r = find(&mut parent, k);
        if !root_ok[r] {
            return Err(Error::GaugeFreedom(format!(
                "node {} is not tied to a GPS prior or fixed node",
                ids[k]
            )));
        }
    }
    Ok(())
}

/// Symmetric matrix in lower band storage.
#[derive(Clone)]
struct Band {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl Band {
    fn zeros(n: usize, bw: usize) -> Self {
        Band { n, bw, data: vec![0.0; n * (bw + 1)] }
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> usize {
        i * (self.bw + 1) + (j + self.bw - i)
    }

    /// Adds to `(i, j)`; only the lower triangle is stored.
    #[inline]
    fn add(&mut self, i: usize, j: usize, v: f64) {
        if j <= i {
            let k = self.at(i, j);
            self.data[k] += v;
        }
    }

    fn diag(&self, i: usize) -> f64 {
        self.data[self.at(i, i)]
    }

    /// In-place band Cholesky; `None` if not positive definite.
    fn cholesky(mut self) -> Option<Band> {
        let (n, bw) = (self.n, self.bw);
        for i in 0..n {
            for j in i.saturating_sub(bw)..=i {
                let mut sum = self.data[self.at(i, j)];
                for k in i.saturating_sub(bw).max(j.saturating_sub(bw))..j {
                    sum -= self.data[self.at(i, k)] * self.data[self.at(j, k)];
                }
                let idx = self.at(i, j);
                if i == j {
                    if !(sum > 0.0) {
                        return None;
                    }
                    self.data[idx] = sum.sqrt();
                } else {
                    self.data[idx] = sum / self.data[self.at(j, j)];
                }
            }
        }
        Some(self)
    }

    /// Solves `L Lᵀ x = b` for a factor produced by [`Band::cholesky`].
    fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let (n, bw) = (self.n, self.bw);
        let mut y = b.clone();
        for i in 0..n {
            let mut s = y[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.data[self.at(i, k)] * y[k];
            }
            y[i] = s / self.data[self.at(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..(i + bw + 1).min(n) {
                s -= self.data[self.at(k, i)] * y[k];
            }
            y[i] = s / self.data[self.at(i, i)];
        }
        y
    }
}

struct Layout {
    free: Vec<u64>,
    col: BTreeMap<u64, usize>,
    bw: usize,
}

fn total_cost(graph: &PoseGraph, nodes: &BTreeMap<u64, PoseNode>) -> Result<f64> {
    let dem = graph.dem.as_deref();
    let mut total = 0.0;
    for c in &graph.constraints {
        total += c.cost(&residual(c, nodes, dem)?);
    }
    Ok(total)
}

type Jac = [[f64; 6]; 6];

/// Exact Jacobian rows for constraints that are linear in the translation.
fn analytic_jacobian(c: &Constraint, slot: usize, node: &PoseNode, dem: Option<&DemRaster>) -> Option<Jac> {
    let mut j = [[0.0; 6]; 6];
    match c {
        Constraint::GpsPrior { .. } => {
            for k in 0..3 {
                j[k][k] = 1.0;
            }
        }
        Constraint::DemPrior { altitude, .. } => {
            if let (AltitudeSource::Dem, Some(dem)) = (altitude, dem) {
                let g = dem.gradient(node.translation[0], node.translation[1]);
                j[0][0] = -g[0];
                j[0][1] = -g[1];
            }
            j[0][2] = 1.0;
        }
        Constraint::AltitudeSmoothness { .. } => j[0][2] = if slot == 0 { 1.0 } else { -1.0 },
        _ => return None,
    }
    Some(j)
}

/// Gauss-Newton normal equations; rotational constraints use central differences.
fn normal_equations(
    graph: &PoseGraph,
    nodes: &BTreeMap<u64, PoseNode>,
    layout: &Layout,
) -> Result<(Band, DVector<f64>)> {
    let n = layout.free.len() * 6;
    let mut h = Band::zeros(n, layout.bw);
    let mut g = DVector::zeros(n);
    let dem = graph.dem.as_deref();
    for c in &graph.constraints {
        let (i, j) = c.nodes();
        let a = &nodes[&i];
        let b = j.map(|j| &nodes[&j]);
        let r = c.eval(a, b, dem)?;
        let d = r.len();
        let info = c.information();
        let mut blocks: [(usize, Jac); 2] = [(0, [[0.0; 6]; 6]); 2];
        let mut nb = 0;
        for (slot, id) in [Some(i), j].into_iter().enumerate() {
            let Some(id) = id else { continue };
            let Some(&col) = layout.col.get(&id) else { continue };
            let node = &nodes[&id];
            let jac = match analytic_jacobian(c, slot, node, dem) {
                Some(jac) => jac,
                None => {
                    let mut jac = [[0.0; 6]; 6];
                    for k in 0..6 {
                        let mut delta = [0.0; 6];
                        delta[k] = STEP;
                        let plus = node.retract(&delta);
                        delta[k] = -STEP;
                        let minus = node.retract(&delta);
                        let (rp, rm) = if slot == 0 {
                            (c.eval(&plus, b, dem)?, c.eval(&minus, b, dem)?)
                        } else {
                            (c.eval(a, Some(&plus), dem)?, c.eval(a, Some(&minus), dem)?)
                        };
                        for row in 0..d {
                            jac[row][k] = (rp[row] - rm[row]) / (2.0 * STEP);
                        }
                    }
                    jac
                }
            };
            blocks[nb] = (col, jac);
            nb += 1;
        }
        for &(ca, ref ja) in &blocks[..nb] {
            // (Jᵀ Ω) for this block, 6 × d.
            let mut jt_info = [[0.0; 6]; 6];
            for p in 0..6 {
                for q in 0..d {
                    jt_info[p][q] = (0..d).map(|m| ja[m][p] * info[m * d + q]).sum();
                }
            }
            for p in 0..6 {
                g[ca + p] += (0..d).map(|q| jt_info[p][q] * r[q]).sum::<f64>();
            }
            for &(cb, ref jb) in &blocks[..nb] {
                for p in 0..6 {
                    for q in 0..6 {
                        let v: f64 = (0..d).map(|m| jt_info[p][m] * jb[m][q]).sum();
                        if v != 0.0 {
                            h.add(ca + p, cb + q, v);
                        }
                    }
                }
            }
        }
    }
    Ok((h, g))
}

/// Levenberg-Marquardt on the pose manifold. Nodes in `graph.fixed` are held
/// constant. The cost never increases: rejected steps only raise damping.
pub fn optimize(graph: &mut PoseGraph, cfg: &SolverConfig) -> Result<OptimizeReport> {
    for c in &graph.constraints {
        let (i, j) = c.nodes();
        for id in std::iter::once(i).chain(j) {
            if !graph.nodes.contains_key(&id) {
                return Err(Error::DanglingConstraint(id));
            }
        }
    }
    check_gauge(graph)?;
    let free: Vec<u64> = graph.nodes.keys().copied().filter(|id| !graph.fixed.contains(id)).collect();
    let col: BTreeMap<u64, usize> = free.iter().enumerate().map(|(k, &id)| (id, 6 * k)).collect();
    let mut bw = 5;
    for c in &graph.constraints {
        if let (i, Some(j)) = c.nodes() {
            if let (Some(a), Some(b)) = (col.get(&i), col.get(&j)) {
                bw = bw.max(a.abs_diff(*b) + 5);
            }
        }
    }
    let layout = Layout { free, col, bw };

    let mut nodes = graph.nodes.clone();
    let initial_cost = total_cost(graph, &nodes)?;
    let mut cost = initial_cost;
    let mut lambda = cfg.initial_lambda;
    let mut iterations = 0;
    let mut converged = layout.free.is_empty() || cost == 0.0;

    while !converged && iterations < cfg.max_iterations {
        let (h, g) = normal_equations(graph, &nodes, &layout)?;
        if g.amax() <= 1e-15 * (1.0 + cost) {
            converged = true;
            break;
        }
        iterations += 1;
        let n = h.n;
        let trace: f64 = (0..n).map(|k| h.diag(k)).sum();
        let floor = 1e-9 * (trace / n as f64).max(1e-12);
        let mut accepted = false;
        while lambda < 1e16 {
            let mut a = h.clone();
            for k in 0..n {
                let idx = a.at(k, k);
                a.data[idx] += lambda * h.diag(k).max(floor);
            }
            let Some(chol) = a.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let step = chol.solve(&(-&g));
            let mut trial = nodes.clone();
            for (k, id) in layout.free.iter().enumerate() {
                let node = trial.get_mut(id).expect("free node");
                *node = node.retract(&step.as_slice()[6 * k..6 * k + 6]);
            }
            let trial_cost = total_cost(graph, &trial)?;
            if trial_cost < cost {
                let decrease = cost - trial_cost;
                nodes = trial;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                if decrease <= cfg.epsilon * cost {
                    converged = true;
                }
                cost = trial_cost;
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // No descent direction left at machine precision.
            converged = true;
        }
    }
    graph.nodes = nodes;
    Ok(OptimizeReport {
        iterations,
        initial_cost,
        final_cost: cost,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use nalgebra::{Isometry3, Matrix3, Matrix6, Translation3, UnitQuaternion, Vector3};

    fn node(id: u64, p: [f64; 3]) -> PoseNode {
        PoseNode::new(id, id as f64, Vector3::from(p), UnitQuaternion::identity())
    }

    #[test]
    fn band_solver_matches_dense() {
        let (n, bw) = (9, 2);
        let mut band = Band::zeros(n, bw);
        let mut dense = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in i.saturating_sub(bw)..=i {
                let v = if i == j { 4.0 + i as f64 } else { 0.3 * ((i * 7 + j) % 5) as f64 - 0.6 };
                band.add(i, j, v);
                dense[(i, j)] = v;
                dense[(j, i)] = v;
            }
        }
        let b = DVector::from_fn(n, |i, _| (i as f64).sin());
        let x = band.cholesky().unwrap().solve(&b);
        let want = dense.cholesky().unwrap().solve(&b);
        assert!((x - want).amax() < 1e-12);
    }

    #[test]
    fn prior_at_value_needs_no_iterations() {
        let mut g = PoseGraph::new();
        g.add_node(node(0, [1.0, 2.0, 3.0]));
        g.add(Constraint::GpsPrior { i: 0, position: Vector3::new(1.0, 2.0, 3.0), info: Matrix3::identity() });
        let rep = optimize(&mut g, &SolverConfig::default()).unwrap();
        assert_eq!(rep.iterations, 0);
        assert_eq!(rep.final_cost, 0.0);
    }

    #[test]
    fn dem_prior_alone_sets_altitude() {
        let mut g = PoseGraph::new();
        g.add_node(node(0, [1.0, 2.0, 5.0]));
        g.add(Constraint::GpsPrior {
            i: 0,
            position: Vector3::new(1.0, 2.0, 5.0),
            info: Matrix3::from_diagonal(&Vector3::new(1e6, 1e6, 1e-9)),
        });
        g.add(Constraint::DemPrior { i: 0, altitude: AltitudeSource::Fixed(2.0), info: 1.0 / 0.09 });
        optimize(&mut g, &SolverConfig::default()).unwrap();
        assert!((g.nodes[&0].translation[2] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn unanchored_chain_is_gauge_free() {
        let mut g = PoseGraph::new();
        g.add_node(node(0, [0.0; 3]));
        g.add_node(node(1, [1.0, 0.0, 0.0]));
        g.add(Constraint::MotionEdge {
            i: 0,
            j: 1,
            relative: Isometry3::from_parts(Translation3::new(1.0, 0.0, 0.0), UnitQuaternion::identity()),
            info: Matrix6::identity(),
        });
        assert!(matches!(optimize(&mut g, &SolverConfig::default()), Err(Error::GaugeFreedom(_))));
        g.fixed.insert(0);
        assert!(optimize(&mut g, &SolverConfig::default()).is_ok());
    }

    /// Altitude-only chain: GPS z priors and smoothness between neighbours,
    /// solved in closed form as a tridiagonal weighted least-squares problem.
    #[test]
    fn altitude_chain_matches_tridiagonal_map() {
        let n = 8;
        let zs = [0.3, -0.2, 0.5, 0.1, 0.9, 0.4, -0.1, 0.2];
        let (wp, ws) = (4.0, 25.0);
        let mut g = PoseGraph::new();
        for k in 0..n {
            g.add_node(node(k as u64, [k as f64, 0.0, 0.0]));
            g.add(Constraint::GpsPrior {
                i: k as u64,
                position: Vector3::new(k as f64, 0.0, zs[k]),
                info: Matrix3::from_diagonal(&Vector3::new(100.0, 100.0, wp)),
            });
        }
        for k in 1..n {
            g.add(Constraint::AltitudeSmoothness { i: k as u64 - 1, j: k as u64, info: ws });
            g.add(Constraint::MotionEdge {
                i: k as u64 - 1,
                j: k as u64,
                relative: Isometry3::from_parts(Translation3::new(1.0, 0.0, 0.0), UnitQuaternion::identity()),
                info: Matrix6::from_diagonal(&nalgebra::Vector6::new(100.0, 100.0, 1e-12, 100.0, 100.0, 100.0)),
            });
        }
        let rep = optimize(&mut g, &SolverConfig::default()).unwrap();
        assert!(rep.final_cost <= rep.initial_cost);

        // Thomas algorithm on (wp I + ws L) z = wp zs, L the path Laplacian.
        let mut diag: Vec<f64> = (0..n).map(|k| wp + ws * if k == 0 || k == n - 1 { 1.0 } else { 2.0 }).collect();
        let off = -ws;
        let mut rhs: Vec<f64> = zs.iter().map(|z| wp * z).collect();
        for k in 1..n {
            let m = off / diag[k - 1];
            diag[k] -= m * off;
            rhs[k] -= m * rhs[k - 1];
        }
        let mut z = vec![0.0; n];
        z[n - 1] = rhs[n - 1] / diag[n - 1];
        for k in (0..n - 1).rev() {
            z[k] = (rhs[k] - off * z[k + 1]) / diag[k];
        }
        for k in 0..n {
            assert!((g.nodes[&(k as u64)].translation[2] - z[k]).abs() < 1e-6, "node {k}");
        }
    }

    #[test]
    fn equal_altitude_smoothness_is_neutral() {
        let build = |smooth: bool| {
            let mut g = PoseGraph::new();
            g.add_node(node(0, [0.0, 0.0, 1.0]));
            g.add_node(node(1, [1.0, 0.0, 1.0]));
            g.add(Constraint::GpsPrior { i: 0, position: Vector3::new(0.1, 0.0, 1.0), info: Matrix3::identity() });
            g.add(Constraint::GpsPrior { i: 1, position: Vector3::new(1.0, 0.2, 1.0), info: Matrix3::identity() });
            g.add(Constraint::MotionEdge {
                i: 0,
                j: 1,
                relative: Isometry3::from_parts(Translation3::new(1.0, 0.0, 0.0), UnitQuaternion::identity()),
                info: Matrix6::identity() * 10.0,
            });
            if smooth {
                g.add(Constraint::AltitudeSmoothness { i: 0, j: 1, info: 50.0 });
            }
            optimize(&mut g, &SolverConfig::default()).unwrap();
            g
        };
        let (a, b) = (build(false), build(true));
        for id in 0..2 {
            assert!((a.nodes[&id].translation - b.nodes[&id].translation).norm() < 1e-6);
            assert!((a.nodes[&id].rotation.norm() - 1.0).abs() < 1e-9);
        }
    }
}
