use super::FlowField;
use crate::{Error, Result};

/// 3-D correspondences `(p ∈ M_A, q ∈ M_G)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchSet {
    pub pairs: Vec<([f64; 3], [f64; 3])>,
    /// Dominant displacement (cells) the pairs agree with.
    pub mode: [i32; 2],
    /// Source cells of the pairs (global lattice indices).
    pub cells: Vec<[i64; 2]>,
}

impl MatchSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Largest set of flows within `eps` cells (Euclidean) of a common
/// displacement, found by exhaustive mode search over integer displacements.
pub fn coherent_matches(flow: &FlowField, eps: f64, min_cluster: usize) -> Result<MatchSet> {
    if flow.cells.is_empty() {
        return Err(Error::NoFlow("empty flow field".into()));
    }
    let (mut lo, mut hi) = ([i32::MAX; 2], [i32::MIN; 2]);
    for c in &flow.cells {
        for a in 0..2 {
            lo[a] = lo[a].min(c.d[a]);
            hi[a] = hi[a].max(c.d[a]);
        }
    }
    let (w, h) = ((hi[0] - lo[0] + 1) as usize, (hi[1] - lo[1] + 1) as usize);
    let mut hist = vec![0usize; w * h];
    for c in &flow.cells {
        hist[(c.d[1] - lo[1]) as usize * w + (c.d[0] - lo[0]) as usize] += 1;
    }
    let r = eps.max(0.0).floor() as i32;
    let disc: Vec<(i32, i32)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
        .filter(|&(dx, dy)| ((dx * dx + dy * dy) as f64) <= eps * eps + 1e-12)
        .collect();
    // Ties: nearest to zero displacement, then lexicographic.
    let mut best: Option<(usize, i64, [i32; 2])> = None;
    for vy in lo[1]..=hi[1] {
        for vx in lo[0]..=hi[0] {
            let mut n = 0;
            for &(dx, dy) in &disc {
                let (x, y) = (vx + dx - lo[0], vy + dy - lo[1]);
                if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
                    n += hist[y as usize * w + x as usize];
                }
            }
            let norm = (vx as i64).pow(2) + (vy as i64).pow(2);
            let better = match best {
                None => true,
                Some((bn, bnorm, bv)) => n > bn || (n == bn && (norm, [vy, vx]) < (bnorm, [bv[1], bv[0]])),
            };
            if better {
                best = Some((n, norm, [vx, vy]));
            }
        }
    }
    let (count, _, mode) = best.expect("non-empty histogram");
    if count < min_cluster.max(1) {
        return Err(Error::RegistrationUnreliable(format!(
            "largest coherent flow cluster has {count} cells, {min_cluster} required"
        )));
    }
    let mut out = MatchSet { mode, ..Default::default() };
    for c in &flow.cells {
        let (dx, dy) = ((c.d[0] - mode[0]) as f64, (c.d[1] - mode[1]) as f64);
        if dx * dx + dy * dy <= eps * eps + 1e-12 {
            out.pairs.push((c.source, c.target));
            out.cells.push(c.cell);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::colmap::FlowCell;
    use crate::rng::seeded;
    use proptest::prelude::*;
    use rand::Rng;

    fn field(ds: &[[i32; 2]]) -> FlowField {
        FlowField {
            cell_size: 1.0,
            search_radius: 32,
            cells: ds
                .iter()
                .enumerate()
                .map(|(k, &d)| FlowCell { cell: [k as i64, 0], d, cost: 0.0, source: [k as f64, 0.0, 0.0], target: [0.0; 3] })
                .collect(),
        }
    }

    #[test]
    fn uniform_flow_is_one_cluster() {
        let f = field(&vec![[3, -2]; 80]);
        let m = coherent_matches(&f, 2.0, 50).unwrap();
        assert_eq!(m.len(), 80);
        assert_eq!(m.mode, [3, -2]);
    }

    #[test]
    fn planted_cluster_recall() {
        let mut rng = seeded(5);
        let mut ds = vec![];
        for k in 0..1000 {
            if k % 10 < 7 {
                ds.push([12 + rng.random_range(-1..=1), -7 + rng.random_range(-1..=1)]);
            } else {
                ds.push([rng.random_range(-32..=32), rng.random_range(-32..=32)]);
            }
        }
        let m = coherent_matches(&field(&ds), 2.0, 50).unwrap();
        let planted = (0..1000).filter(|k| k % 10 < 7);
        let found: std::collections::BTreeSet<i64> = m.cells.iter().map(|c| c[0]).collect();
        let recall = planted.clone().filter(|&k| found.contains(&(k as i64))).count() as f64 / planted.count() as f64;
        assert!(recall >= 0.9, "recall {recall}");
    }

    #[test]
    fn random_flow_is_unreliable() {
        let mut rng = seeded(6);
        let ds: Vec<_> = (0..300).map(|_| [rng.random_range(-32..=32), rng.random_range(-32..=32)]).collect();
        assert!(matches!(coherent_matches(&field(&ds), 2.0, 50), Err(Error::RegistrationUnreliable(_))));
    }

    proptest! {
        #[test]
        fn shrinking_eps_never_grows(ds in prop::collection::vec(prop::array::uniform2(-6i32..6), 1..120), e in 0.0f64..4.0) {
            let f = field(&ds);
            let big = coherent_matches(&f, e + 1.0, 1).unwrap();
            let small = coherent_matches(&f, e, 1).unwrap();
            prop_assert!(small.len() <= big.len());
            prop_assert!(small.cells.iter().all(|c| f.cells.iter().any(|x| x.cell == *c)));
        }
    }
}
