use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// `x ↦ scale · R(rotation) · x + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Similarity2D {
    pub scale: f64,
    pub rotation: f64,
    pub translation: [f64; 2],
}

impl Similarity2D {
    pub fn identity() -> Self {
        Similarity2D { scale: 1.0, rotation: 0.0, translation: [0.0, 0.0] }
    }
}

pub fn apply_similarity(s: &Similarity2D, p: [f64; 2]) -> [f64; 2] {
    let (sn, cs) = s.rotation.sin_cos();
    [
        s.scale * (cs * p[0] - sn * p[1]) + s.translation[0],
        s.scale * (sn * p[0] + cs * p[1]) + s.translation[1],
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TemporalConfig {
    pub k: usize,
    /// Best over second-best descriptor distance must not exceed this.
    pub ratio: f64,
    /// Putative matches turned into similarity hypotheses.
    pub hypotheses: usize,
    /// Inlier gate as a fraction of the median nearest-neighbour distance
    /// of the second session.
    pub gate_fraction: f64,
    pub refine_iterations: usize,
}

impl Default for TemporalConfig {
    fn default() -> Self {
        TemporalConfig { k: 6, ratio: 0.9, hypotheses: 60, gate_fraction: 0.3, refine_iterations: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalMatch {
    /// `(index in stems_t0, index in stems_t1)`.
    pub pairs: Vec<(usize, usize)>,
    pub transform: Similarity2D,
    /// Descriptor matches that survived mutual-NN and the ratio test.
    pub putative: usize,
}

/// Descriptor plus the frame it was normalized in.
struct Local {
    desc: Vec<[f64; 2]>,
    mean_radius: f64,
    axis: f64,
}

fn knn(stems: &[[f64; 2]], index: usize, k: usize) -> Vec<usize> {
    let p = stems[index];
    let mut order: Vec<(f64, usize)> = stems
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != index)
        .map(|(j, q)| ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2), j))
        .collect();
    order.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    order.into_iter().take(k).map(|(_, j)| j).collect()
}

fn local(stems: &[[f64; 2]], index: usize, k: usize) -> Local {
    let p = stems[index];
    let offsets: Vec<[f64; 2]> = knn(stems, index, k).into_iter().map(|j| [stems[j][0] - p[0], stems[j][1] - p[1]]).collect();
    let radii: Vec<f64> = offsets.iter().map(|v| v[0].hypot(v[1])).collect();
    let mean_radius = radii.iter().sum::<f64>() / radii.len() as f64;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for v in &offsets {
        sxx += v[0] * v[0];
        sxy += v[0] * v[1];
        syy += v[1] * v[1];
    }
    // Major axis of the second-moment matrix, oriented towards the offsets' mean.
    let mut axis = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let (sa, ca) = axis.sin_cos();
    let lean: f64 = offsets.iter().map(|v| v[0] * ca + v[1] * sa).sum();
    if lean < 0.0 {
        axis += PI;
    }
    let mut desc: Vec<[f64; 2]> = offsets
        .iter()
        .zip(&radii)
        .map(|(v, r)| [r / mean_radius, (v[1].atan2(v[0]) - axis).rem_euclid(TAU)])
        .collect();
    desc.sort_by(|a, b| (a[1], a[0]).partial_cmp(&(b[1], b[0])).expect("finite descriptor"));
    Local { desc, mean_radius, axis }
}

/// Scale- and rotation-normalized arrangement of the `k` nearest neighbours
/// of `stems[index]`: `(radius / mean radius, angle from the principal axis)`
/// pairs sorted by angle, flattened.
pub fn temporal_descriptor(stems: &[[f64; 2]], index: usize, k: usize) -> Result<Vec<f64>> {
    if k == 0 || stems.len() < k + 1 || index >= stems.len() {
        return Err(Error::InsufficientStructure(format!("{} stems for k = {k}", stems.len())));
    }
    Ok(local(stems, index, k).desc.into_iter().flatten().collect())
}

fn planar(d: &[[f64; 2]], flip: bool) -> Vec<[f64; 2]> {
    let off = if flip { PI } else { 0.0 };
    d.iter().map(|&[r, a]| [r * (a + off).cos(), r * (a + off).sin()]).collect()
}

fn chamfer(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    let one = |x: &[[f64; 2]], y: &[[f64; 2]]| {
        x.iter()
            .map(|p| y.iter().map(|q| (p[0] - q[0]).hypot(p[1] - q[1])).fold(f64::INFINITY, f64::min))
            .sum::<f64>()
            / x.len() as f64
    };
    0.5 * (one(a, b) + one(b, a))
}

/// Descriptor distance: symmetric chamfer between the normalized neighbour
/// offsets, minimized over the 180° ambiguity of the principal axis.
/// Returns the distance and whether the flip was used.
fn distance(a: &[[f64; 2]], b_plain: &[[f64; 2]], b_flip: &[[f64; 2]]) -> (f64, bool) {
    let (d0, d1) = (chamfer(a, b_plain), chamfer(a, b_flip));
    if d1 < d0 {
        (d1, true)
    } else {
        (d0, false)
    }
}

struct Buckets {
    cell: f64,
    map: std::collections::HashMap<(i64, i64), Vec<usize>>,
}

impl Buckets {
    fn new(points: &[[f64; 2]], cell: f64) -> Self {
        let mut map: std::collections::HashMap<(i64, i64), Vec<usize>> = Default::default();
        for (k, p) in points.iter().enumerate() {
            map.entry(((p[0] / cell).floor() as i64, (p[1] / cell).floor() as i64)).or_default().push(k);
        }
        Buckets { cell, map }
    }

    /// Nearest point within `cell` of `p`.
    fn nearest(&self, points: &[[f64; 2]], p: [f64; 2]) -> Option<(usize, f64)> {
        let (ci, cj) = ((p[0] / self.cell).floor() as i64, (p[1] / self.cell).floor() as i64);
        let mut best: Option<(usize, f64)> = None;
        for dj in -1..=1 {
            for di in -1..=1 {
                for &k in self.map.get(&(ci + di, cj + dj)).into_iter().flatten() {
                    let d = (points[k][0] - p[0]).hypot(points[k][1] - p[1]);
                    if d <= self.cell && best.is_none_or(|(bk, bd)| d < bd || (d == bd && k < bk)) {
                        best = Some((k, d));
                    }
                }
            }
        }
        best
    }
}

/// Mutual nearest neighbours between `s(t0)` and `t1` within `gate`.
fn geometric_pairs(t0: &[[f64; 2]], t1: &[[f64; 2]], s: &Similarity2D, gate: f64) -> Vec<(usize, usize, f64)> {
    let moved: Vec<[f64; 2]> = t0.iter().map(|&p| apply_similarity(s, p)).collect();
    let b1 = Buckets::new(t1, gate);
    let b0 = Buckets::new(&moved, gate);
    let mut out = Vec::new();
    for (i, &p) in moved.iter().enumerate() {
        if let Some((j, d)) = b1.nearest(t1, p) {
            if b0.nearest(&moved, t1[j]).map(|(back, _)| back) == Some(i) {
                out.push((i, j, d));
            }
        }
    }
    out
}

/// Weighted least-squares similarity `b ≈ s R a + t`.
fn fit_similarity(pairs: &[([f64; 2], [f64; 2], f64)]) -> Option<Similarity2D> {
    let sw: f64 = pairs.iter().map(|p| p.2).sum();
    if pairs.len() < 2 || !(sw > 0.0) {
        return None;
    }
    let mut ma = [0.0; 2];
    let mut mb = [0.0; 2];
    for (a, b, w) in pairs {
        for k in 0..2 {
            ma[k] += w * a[k] / sw;
            mb[k] += w * b[k] / sw;
        }
    }
    let (mut re, mut im, mut aa) = (0.0, 0.0, 0.0);
    for (a, b, w) in pairs {
        let (ax, ay) = (a[0] - ma[0], a[1] - ma[1]);
        let (bx, by) = (b[0] - mb[0], b[1] - mb[1]);
        // b · conj(a)
        re += w * (bx * ax + by * ay);
        im += w * (by * ax - bx * ay);
        aa += w * (ax * ax + ay * ay);
    }
    if !(aa > 0.0) {
        return None;
    }
    let (zr, zi) = (re / aa, im / aa);
    let s = Similarity2D { scale: zr.hypot(zi), rotation: zi.atan2(zr), translation: [0.0, 0.0] };
    let m = apply_similarity(&s, ma);
    Some(Similarity2D { translation: [mb[0] - m[0], mb[1] - m[1]], ..s })
}

fn median_nn(points: &[[f64; 2]]) -> f64 {
    let mut d: Vec<f64> = (0..points.len())
        .map(|i| {
            points
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, q)| (q[0] - points[i][0]).hypot(q[1] - points[i][1]))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    d.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    d[d.len() / 2]
}

/// Registers two stem maps of the same field taken at different times.
///
/// Mutual-nearest descriptor matches that pass the ratio test each imply a
/// full similarity (scale from the neighbourhood radii, rotation from the
/// principal axes); the hypothesis with the most geometric inliers is
/// refined by iteratively reweighted least squares on mutual nearest
/// neighbours, which also give the returned correspondences.
pub fn temporal_match(stems_t0: &[[f64; 2]], stems_t1: &[[f64; 2]], cfg: &TemporalConfig) -> Result<TemporalMatch> {
    let k = cfg.k;
    if k == 0 || stems_t0.len() < k + 1 || stems_t1.len() < k + 1 {
        return Err(Error::InsufficientStructure(format!(
            "{} and {} stems for k = {k}",
            stems_t0.len(),
            stems_t1.len()
        )));
    }
    let l0: Vec<Local> = (0..stems_t0.len()).map(|i| local(stems_t0, i, k)).collect();
    let l1: Vec<Local> = (0..stems_t1.len()).map(|j| local(stems_t1, j, k)).collect();
    let p0: Vec<Vec<[f64; 2]>> = l0.iter().map(|l| planar(&l.desc, false)).collect();
    let p1: Vec<(Vec<[f64; 2]>, Vec<[f64; 2]>)> =
        l1.iter().map(|l| (planar(&l.desc, false), planar(&l.desc, true))).collect();

    let (n0, n1) = (l0.len(), l1.len());
    let mut dist = vec![(0.0, false); n0 * n1];
    for i in 0..n0 {
        for j in 0..n1 {
            dist[i * n1 + j] = distance(&p0[i], &p1[j].0, &p1[j].1);
        }
    }
    let mut putative: Vec<(f64, usize, usize, bool)> = Vec::new();
    for i in 0..n0 {
        let row = &dist[i * n1..(i + 1) * n1];
        let (mut best, mut second) = ((f64::INFINITY, usize::MAX), f64::INFINITY);
        for (j, d) in row.iter().enumerate() {
            if d.0 < best.0 {
                second = best.0;
                best = (d.0, j);
            } else if d.0 < second {
                second = d.0;
            }
        }
        let j = best.1;
        let back = (0..n0).min_by(|&a, &b| dist[a * n1 + j].0.partial_cmp(&dist[b * n1 + j].0).expect("finite"));
        if back == Some(i) && best.0 <= cfg.ratio * second {
            putative.push((best.0, i, j, dist[i * n1 + j].1));
        }
    }
    putative.sort_by(|a, b| (a.0, a.1).partial_cmp(&(b.0, b.1)).expect("finite"));
    if putative.is_empty() {
        return Err(Error::InsufficientStructure("no distinctive descriptor matches".into()));
    }

    let gate = cfg.gate_fraction * median_nn(stems_t1);
    let mut best: Option<(usize, Similarity2D)> = None;
    for &(_, i, j, flip) in putative.iter().take(cfg.hypotheses.max(1)) {
        let scale = l1[j].mean_radius / l0[i].mean_radius;
        let rotation = l1[j].axis - l0[i].axis + if flip { PI } else { 0.0 };
        let mut s = Similarity2D { scale, rotation, translation: [0.0, 0.0] };
        let m = apply_similarity(&s, stems_t0[i]);
        s.translation = [stems_t1[j][0] - m[0], stems_t1[j][1] - m[1]];
        let inliers = geometric_pairs(stems_t0, stems_t1, &s, gate).len();
        if best.as_ref().is_none_or(|(n, _)| inliers > *n) {
            best = Some((inliers, s));
        }
    }
    let (_, mut s) = best.expect("at least one hypothesis");
    for _ in 0..cfg.refine_iterations {
        let pairs = geometric_pairs(stems_t0, stems_t1, &s, 2.0 * gate);
        // Cauchy weights with the gate as scale.
        let weighted: Vec<_> = pairs
            .iter()
            .map(|&(i, j, d)| (stems_t0[i], stems_t1[j], 1.0 / (1.0 + (d / gate).powi(2))))
            .collect();
        match fit_similarity(&weighted) {
            Some(next) => s = next,
            None => break,
        }
    }
    let pairs = geometric_pairs(stems_t0, stems_t1, &s, gate).into_iter().map(|(i, j, _)| (i, j)).collect();
    Ok(TemporalMatch { pairs, transform: s, putative: putative.len() })
}
