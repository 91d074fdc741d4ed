use rand::Rng;
use serde::{Deserialize, Serialize};

use super::descriptor::l2;
use super::{DescriptorImage, MultimodalGrid, DESCRIPTOR_LEN};
use crate::rng::stream;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowParams {
    pub levels: usize,
    /// Sub-block side in cells; a patch is 4 × 4 sub-blocks.
    pub block: usize,
    pub iterations: usize,
    /// Maximum displacement at the finest level, in cells (Chebyshev).
    pub search_radius: i32,
    /// Weight of the height descriptor distance.
    pub lambda: f64,
    /// Forward-backward check: keep a flow only if the reverse flow at its
    /// target returns within this many cells (Chebyshev).
    pub consistency: Option<i32>,
    /// Scan every displacement at the coarsest level instead of starting
    /// from random guesses.
    pub exhaustive_top: bool,
    pub seed: u64,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams {
            levels: 2,
            block: 2,
            iterations: 6,
            search_radius: 32,
            lambda: 1.0,
            consistency: Some(2),
            exhaustive_top: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowCell {
    /// Global lattice index of the source cell.
    pub cell: [i64; 2],
    pub d: [i32; 2],
    pub cost: f64,
    /// Source cell center lifted by its height, and the matched target cell.
    pub source: [f64; 3],
    pub target: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub cell_size: f64,
    pub search_radius: i32,
    pub cells: Vec<FlowCell>,
}

impl FlowField {
    pub fn median(&self) -> [i32; 2] {
        let med = |a: usize| {
            let mut v: Vec<i32> = self.cells.iter().map(|c| c.d[a]).collect();
            v.sort_unstable();
            v.get(v.len() / 2).copied().unwrap_or(0)
        };
        [med(0), med(1)]
    }
}

/// Halves resolution on the global lattice; counts weight the means.
pub(crate) fn downsample(g: &MultimodalGrid) -> MultimodalGrid {
    let lo = [g.index0[0].div_euclid(2), g.index0[1].div_euclid(2)];
    let hi = [
        (g.index0[0] + g.width as i64 - 1).div_euclid(2),
        (g.index0[1] + g.height as i64 - 1).div_euclid(2),
    ];
    let (w, h) = ((hi[0] - lo[0] + 1).max(0) as usize, (hi[1] - lo[1] + 1).max(0) as usize);
    let mut out = MultimodalGrid::empty(g.cell_size * 2.0, lo, w, h);
    let mut sums = vec![[0.0f64; 2]; w * h];
    for k in 0..g.h.len() {
        if !g.valid(k) {
            continue;
        }
        let [gi, gj] = g.global(k);
        let t = out.local(gi.div_euclid(2), gj.div_euclid(2)).expect("parent inside");
        let n = g.count[k] as f64;
        sums[t][0] += n * g.h[k];
        sums[t][1] += n * g.exg[k];
        out.count[t] += g.count[k];
    }
    for (t, s) in sums.iter().enumerate() {
        if out.count[t] > 0 {
            let n = out.count[t] as f64;
            out.h[t] = s[0] / n;
            out.exg[t] = s[1] / n;
        }
    }
    out
}

/// Mean distance of valid-cell descriptors to their mean, per channel.
fn spread(grid: &MultimodalGrid, desc: &DescriptorImage) -> (f64, f64) {
    let valid: Vec<usize> = (0..grid.h.len()).filter(|&k| grid.valid(k)).collect();
    let mut mean_e = vec![0.0f32; DESCRIPTOR_LEN];
    let mut mean_h = vec![0.0f32; DESCRIPTOR_LEN];
    for &k in &valid {
        for (m, v) in mean_e.iter_mut().zip(desc.exg_at(k)) {
            *m += v;
        }
        for (m, v) in mean_h.iter_mut().zip(desc.height_at(k)) {
            *m += v;
        }
    }
    let n = valid.len().max(1) as f32;
    mean_e.iter_mut().for_each(|v| *v /= n);
    mean_h.iter_mut().for_each(|v| *v /= n);
    let (mut se, mut sh) = (0.0, 0.0);
    for &k in &valid {
        se += l2(desc.exg_at(k), &mean_e);
        sh += l2(desc.height_at(k), &mean_h);
    }
    let fix = |s: f64| if s > 1e-12 { s / n as f64 } else { 1.0 };
    (fix(se), fix(sh))
}

struct Level<'a> {
    a: &'a MultimodalGrid,
    g: &'a MultimodalGrid,
    da: DescriptorImage,
    dg: DescriptorImage,
    norm: (f64, f64),
    lambda: f64,
}

impl Level<'_> {
    fn cost(&self, k: usize, d: [i32; 2]) -> f64 {
        let [gi, gj] = self.a.global(k);
        match self.g.local(gi + d[0] as i64, gj + d[1] as i64) {
            Some(t) if self.g.valid(t) => {
                l2(self.da.exg_at(k), self.dg.exg_at(t)) / self.norm.0
                    + self.lambda * l2(self.da.height_at(k), self.dg.height_at(t)) / self.norm.1
            }
            _ => f64::INFINITY,
        }
    }
}

/// Coarse-to-fine PatchMatch flow from the cells of `ja` into `jg`,
/// optionally filtered by forward-backward consistency.
pub fn match_flow(ja: &MultimodalGrid, jg: &MultimodalGrid, params: &FlowParams) -> Result<FlowField> {
    let mut forward = patch_match(ja, jg, params)?;
    if let Some(tol) = params.consistency {
        let back = patch_match(jg, ja, &FlowParams { seed: params.seed ^ 0x5eed, ..params.clone() })?;
        let lookup: std::collections::HashMap<[i64; 2], [i32; 2]> = back.cells.iter().map(|c| (c.cell, c.d)).collect();
        forward.cells.retain(|c| {
            let t = [c.cell[0] + c.d[0] as i64, c.cell[1] + c.d[1] as i64];
            lookup.get(&t).is_some_and(|b| (c.d[0] + b[0]).abs() <= tol && (c.d[1] + b[1]).abs() <= tol)
        });
        if forward.cells.is_empty() {
            return Err(Error::NoFlow("no flow passed the forward-backward check".into()));
        }
    }
    Ok(forward)
}

fn patch_match(ja: &MultimodalGrid, jg: &MultimodalGrid, params: &FlowParams) -> Result<FlowField> {
    if ja.valid_count() == 0 || jg.valid_count() == 0 {
        return Err(Error::NoFlow("a grid has no valid cells".into()));
    }
    if (ja.cell_size - jg.cell_size).abs() > 1e-12 * ja.cell_size {
        return Err(Error::Parameter("grids must share a cell size".into()));
    }
    let levels = params.levels.max(1);
    let mut pa = vec![ja.clone()];
    let mut pg = vec![jg.clone()];
    for _ in 1..levels {
        let (a, g) = (downsample(pa.last().unwrap()), downsample(pg.last().unwrap()));
        pa.push(a);
        pg.push(g);
    }

    let mut prev: Option<(usize, Vec<Option<[i32; 2]>>)> = None;
    for l in (0..levels).rev() {
        let (a, g) = (&pa[l], &pg[l]);
        let da = DescriptorImage::new(a, params.block);
        let dg = DescriptorImage::new(g, params.block);
        let level = Level { a, g, norm: spread(a, &da), da, dg, lambda: params.lambda };
        let radius = ((params.search_radius as f64) / f64::powi(2.0, l as i32)).ceil().max(1.0) as i32;
        let mut rng = stream(params.seed, &format!("flow-level-{l}"));
        let clamp = |d: [i32; 2]| [d[0].clamp(-radius, radius), d[1].clamp(-radius, radius)];

        let n = a.h.len();
        let mut flow: Vec<Option<[i32; 2]>> = vec![None; n];
        let mut cost = vec![f64::INFINITY; n];
        for k in 0..n {
            if !a.valid(k) {
                continue;
            }
            let inherited = prev.as_ref().and_then(|(pl, pf)| {
                let parent = &pa[*pl];
                let [gi, gj] = a.global(k);
                parent.local(gi.div_euclid(2), gj.div_euclid(2)).and_then(|p| pf[p]).map(|d| clamp([2 * d[0], 2 * d[1]]))
            });
            if inherited.is_none() && params.exhaustive_top {
                let mut best = ([0, 0], f64::INFINITY);
                for dy in -radius..=radius {
                    for dx in -radius..=radius {
                        let c = level.cost(k, [dx, dy]);
                        if c < best.1 {
                            best = ([dx, dy], c);
                        }
                    }
                }
                flow[k] = Some(best.0);
                cost[k] = best.1;
                continue;
            }
            let d = inherited.unwrap_or_else(|| [rng.random_range(-radius..=radius), rng.random_range(-radius..=radius)]);
            flow[k] = Some(d);
            cost[k] = level.cost(k, d);
        }

        let w = a.width;
        let start_r = if prev.is_some() { 4.min(radius) } else { radius };
        for it in 0..params.iterations {
            let forward = it % 2 == 0;
            for step in 0..n {
                let k = if forward { step } else { n - 1 - step };
                let Some(mut best) = flow[k] else { continue };
                let mut best_cost = cost[k];
                let (i, j) = (k % w, k / w);
                let nbrs: [Option<usize>; 2] = if forward {
                    [(i > 0).then(|| k - 1), (j > 0).then(|| k - w)]
                } else {
                    [(i + 1 < w).then(|| k + 1), (k + w < n).then(|| k + w)]
                };
                for nb in nbrs.into_iter().flatten() {
                    if let Some(d) = flow[nb] {
                        if d != best {
                            let c = level.cost(k, d);
                            if c < best_cost {
                                best = d;
                                best_cost = c;
                            }
                        }
                    }
                }
                let mut r = start_r;
                while r >= 1 {
                    let d = [best[0] + rng.random_range(-r..=r), best[1] + rng.random_range(-r..=r)];
                    if d[0].abs() <= radius && d[1].abs() <= radius {
                        let c = level.cost(k, d);
                        if c < best_cost {
                            best = d;
                            best_cost = c;
                        }
                    }
                    r /= 2;
                }
                flow[k] = Some(best);
                cost[k] = best_cost;
            }
        }
        if l == 0 {
            let cells = (0..n)
                .filter_map(|k| {
                    let d = flow[k]?;
                    if !cost[k].is_finite() {
                        return None;
                    }
                    let [gi, gj] = a.global(k);
                    let t = g.local(gi + d[0] as i64, gj + d[1] as i64)?;
                    Some(FlowCell { cell: [gi, gj], d, cost: cost[k], source: a.point(k), target: g.point(t) })
                })
                .collect::<Vec<_>>();
            if cells.is_empty() {
                return Err(Error::NoFlow("no source cell found a valid target".into()));
            }
            return Ok(FlowField { cell_size: ja.cell_size, search_radius: params.search_radius, cells });
        }
        prev = Some((l, flow));
    }
    unreachable!("level 0 always returns")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    /// Smooth random height and ExG texture on the global lattice.
    fn texture(w: usize, h: usize, index0: [i64; 2], seed: u64) -> MultimodalGrid {
        let mut rng = seeded(seed);
        let waves: Vec<(f64, f64, f64, f64)> = (0..12)
            .map(|_| (rng.random_range(-0.8..0.8), rng.random_range(-0.8..0.8), rng.random_range(0.0..6.3), rng.random_range(0.5..1.0)))
            .collect();
        let mut g = MultimodalGrid::empty(1.0, index0, w, h);
        for k in 0..w * h {
            let [gi, gj] = g.global(k);
            let (x, y) = (gi as f64, gj as f64);
            let v: f64 = waves.iter().map(|&(a, b, p, s)| s * (a * x + b * y + p).sin()).sum();
            let u: f64 = waves.iter().map(|&(a, b, p, s)| s * (b * x - a * y + 2.0 * p).cos()).sum();
            g.h[k] = v;
            g.exg[k] = u;
            g.count[k] = 1;
        }
        g
    }

    fn shifted(src: &MultimodalGrid, d: [i64; 2]) -> MultimodalGrid {
        let mut g = src.clone();
        g.index0 = [src.index0[0] + d[0], src.index0[1] + d[1]];
        g
    }

    #[test]
    fn self_match_is_zero_flow() {
        let a = texture(48, 40, [0, 0], 1);
        let f = match_flow(&a, &a, &FlowParams::default()).unwrap();
        let zero = f.cells.iter().filter(|c| c.d == [0, 0]).count();
        assert!(zero as f64 >= 0.95 * f.cells.len() as f64);
        assert!(f.cells.iter().filter(|c| c.d == [0, 0]).all(|c| c.cost < 1e-6));
    }

    #[test]
    fn planted_shift_is_recovered() {
        let a = texture(60, 50, [0, 0], 2);
        let g = shifted(&a, [12, -7]);
        let f = match_flow(&a, &g, &FlowParams::default()).unwrap();
        let m = f.median();
        assert!((m[0] - 12).abs() <= 1 && (m[1] + 7).abs() <= 1, "median {m:?}");
    }

    #[test]
    fn planted_shift_survives_noise_cells() {
        let a = texture(60, 50, [0, 0], 3);
        let mut g = shifted(&a, [12, -7]);
        let mut rng = seeded(9);
        for k in 0..g.h.len() {
            if rng.random::<f64>() < 0.2 {
                g.h[k] = rng.random_range(-5.0..5.0);
                g.exg[k] = rng.random_range(-5.0..5.0);
            }
        }
        let f = match_flow(&a, &g, &FlowParams::default()).unwrap();
        let m = f.median();
        assert!((m[0] - 12).abs() <= 1 && (m[1] + 7).abs() <= 1, "median {m:?}");
    }

    #[test]
    fn empty_grid_is_no_flow() {
        let a = texture(10, 10, [0, 0], 4);
        let e = MultimodalGrid::empty(1.0, [0, 0], 10, 10);
        assert!(matches!(match_flow(&a, &e, &FlowParams::default()), Err(Error::NoFlow(_))));
    }

    #[test]
    fn downsample_keeps_point_weighted_means() {
        let mut g = MultimodalGrid::empty(1.0, [-1, 0], 2, 1);
        g.h = vec![1.0, 4.0];
        g.count = vec![1, 2];
        let d = downsample(&g);
        assert_eq!((d.index0, d.width), ([-1, 0], 2));
        assert_eq!(d.h, vec![1.0, 4.0]);
        let mut g = MultimodalGrid::empty(1.0, [0, 0], 2, 1);
        g.h = vec![1.0, 4.0];
        g.count = vec![1, 2];
        assert_eq!(downsample(&g).h, vec![3.0]);
    }
}
