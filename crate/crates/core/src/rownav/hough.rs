use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::{line_residual, project, FeatureGrid, Pattern};
use crate::{Error, Result};

/// Distance from a feature to its nearest line that counts as support (m).
pub const DEFAULT_TOLERANCE: f64 = 0.03;

/// Discretized `(θ, spacing, offset)` parameter space. Orientation and
/// spacing ranges are inclusive; offsets run `0, step, 2·step, ... < spacing`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchGrid {
    pub theta_min: f64,
    pub theta_max: f64,
    pub theta_step: f64,
    pub spacing_min: f64,
    pub spacing_max: f64,
    pub spacing_step: f64,
    pub offset_step: f64,
}

impl Default for SearchGrid {
    fn default() -> Self {
        let deg = std::f64::consts::PI / 180.0;
        SearchGrid {
            theta_min: -90.0 * deg,
            theta_max: 89.0 * deg,
            theta_step: deg,
            spacing_min: 0.2,
            spacing_max: 1.0,
            spacing_step: 0.01,
            offset_step: 0.01,
        }
    }
}

fn inclusive(min: f64, max: f64, step: f64) -> Vec<f64> {
    let n = ((max - min) / step + 1e-9).floor() as usize + 1;
    (0..n).map(|k| min + k as f64 * step).collect()
}

impl SearchGrid {
    pub fn validate(&self) -> Result<()> {
        let half = std::f64::consts::FRAC_PI_2;
        if !(self.theta_step > 0.0 && self.spacing_step > 0.0 && self.offset_step > 0.0) {
            return Err(Error::Parameter("search steps must be positive".into()));
        }
        if !(self.spacing_min > 0.0 && self.spacing_min <= self.spacing_max) {
            return Err(Error::Parameter("spacing range must be positive".into()));
        }
        if !(self.theta_min >= -half - 1e-12 && self.theta_max < half && self.theta_min <= self.theta_max) {
            return Err(Error::Parameter("theta range must lie in [-π/2, π/2)".into()));
        }
        Ok(())
    }

    pub fn thetas(&self) -> Vec<f64> {
        inclusive(self.theta_min, self.theta_max, self.theta_step)
    }

    pub fn spacings(&self) -> Vec<f64> {
        inclusive(self.spacing_min, self.spacing_max, self.spacing_step)
    }

    pub fn offsets(&self, spacing: f64) -> Vec<f64> {
        (0..)
            .map(|k| k as f64 * self.offset_step)
            .take_while(|&o| o < spacing)
            .collect()
    }

    pub fn cell_count(&self) -> usize {
        self.thetas().len() * self.spacings().iter().map(|&s| self.offsets(s).len()).sum::<usize>()
    }
}

/// Tie-break order: higher score, then smaller spacing, smaller |θ|,
/// smaller offset, smaller θ.
fn beats(a: &Pattern, b: &Pattern) -> bool {
    if a.score != b.score {
        return a.score > b.score;
    }
    let key = |p: &Pattern| (p.spacing, p.theta.abs(), p.offset, p.theta);
    key(a).partial_cmp(&key(b)) == Some(std::cmp::Ordering::Less)
}

/// Finds the pattern of parallel equidistant lines best supported by the
/// features, over the discretized search space.
///
/// Each feature votes only into offset bins that can lie within `tol` of it;
/// the vote itself uses the exact residual test, so the accumulator equals
/// exhaustive scoring while touching a handful of bins per feature.
pub fn detect_pattern(features: &FeatureGrid, search: &SearchGrid, tol: f64) -> Result<Pattern> {
    search.validate()?;
    if !(tol >= 0.0) {
        return Err(Error::Parameter("tolerance must be non-negative".into()));
    }
    let feats: Vec<([f64; 2], f64)> = features.features().collect();
    if feats.len() < 2 {
        return Err(Error::NoPattern(format!(
            "{} feature cell(s); at least 2 are needed",
            feats.len()
        )));
    }
    let spacings = search.spacings();
    let offset_sets: Vec<Vec<f64>> = spacings.iter().map(|&s| search.offsets(s)).collect();
    let step = search.offset_step;
    let margin = 1e-9 + 1e-12 * tol.max(1.0);

    let mut best: Option<Pattern> = None;
    let mut proj = vec![0.0; feats.len()];
    let mut acc = Vec::new();
    for theta in search.thetas() {
        for (u, (p, _)) in proj.iter_mut().zip(&feats) {
            *u = project(theta, *p);
        }
        for (&s, offsets) in spacings.iter().zip(&offset_sets) {
            let nb = offsets.len();
            acc.clear();
            acc.resize(nb, 0.0);
            let exhaustive = 2.0 * (tol + margin) + step >= s;
            for (&u, &(_, w)) in proj.iter().zip(&feats) {
                if exhaustive {
                    for (a, &o) in acc.iter_mut().zip(offsets) {
                        if line_residual(u, o, s) <= tol {
                            *a += w;
                        }
                    }
                    continue;
                }
                let r = u.rem_euclid(s);
                for shift in [-s, 0.0, s] {
                    let lo = (r + shift - tol - margin) / step;
                    let hi = (r + shift + tol + margin) / step;
                    if hi < 0.0 {
                        continue;
                    }
                    let k0 = lo.ceil().max(0.0) as usize;
                    let k1 = (hi.floor() as usize).min(nb - 1);
                    for k in k0..=k1.max(k0) {
                        if k < nb && k <= k1 && line_residual(u, offsets[k], s) <= tol {
                            acc[k] += w;
                        }
                    }
                }
            }
            for (&score, &o) in acc.iter().zip(offsets) {
                let cand = Pattern {
                    theta,
                    spacing: s,
                    offset: o,
                    score,
                };
                if best.as_ref().is_none_or(|b| beats(&cand, b)) {
                    best = Some(cand);
                }
            }
        }
    }
    best.ok_or_else(|| Error::NoPattern("empty search space".into()))
}

/// Support of `pattern` under the same tolerance rule `detect_pattern` uses.
pub fn support(features: &FeatureGrid, pattern: &Pattern, tol: f64) -> f64 {
    features
        .features()
        .filter(|(p, _)| pattern.distance(*p) <= tol)
        .map(|(_, w)| w)
        .sum()
}

/// Continuous refinement of a detected pattern: Gauss-Newton on
/// `u(θ) = offset + k·spacing` over the features within `tol` of a line,
/// jointly in orientation, offset and spacing. The discrete support is flat
/// across every offset bin within `tol` of the rows, so the argmax alone sits
/// at the plateau edge, and a quantized orientation tilts the offset by the
/// lever arm of the features.
pub fn refine_pattern(features: &FeatureGrid, pattern: &Pattern, tol: f64) -> Pattern {
    let mut cur = *pattern;
    for _ in 0..5 {
        let (sn, cs) = cur.theta.sin_cos();
        let mut h = Matrix3::zeros();
        let mut g = Vector3::zeros();
        let (mut sw, mut ks) = (0.0, std::collections::BTreeSet::new());
        for (p, w) in features.features() {
            if cur.distance(p) > tol {
                continue;
            }
            let k = cur.line_index(p);
            ks.insert(k);
            let u = -sn * p[0] + cs * p[1];
            let r = u - cur.offset - k as f64 * cur.spacing;
            // d r / d (θ, offset, spacing)
            let j = Vector3::new(-(cs * p[0] + sn * p[1]), -1.0, -(k as f64));
            h += w * j * j.transpose();
            g += w * r * j;
            sw += w;
        }
        if sw <= 0.0 {
            break;
        }
        let step = if ks.len() >= 2 {
            h.try_inverse().map(|hi| -(hi * g))
        } else {
            // One line fixes orientation and offset only.
            let h2 = Matrix2::new(h[(0, 0)], h[(0, 1)], h[(1, 0)], h[(1, 1)]);
            h2.try_inverse().map(|hi| {
                let d = -(hi * Vector2::new(g[0], g[1]));
                Vector3::new(d[0], d[1], 0.0)
            })
        };
        let Some(d) = step.filter(|d| d.iter().all(|v| v.is_finite())) else { break };
        let s = cur.spacing + d[2];
        if !(s > 0.0) {
            break;
        }
        // Keep line indices anchored: offsets are re-wrapped by `canonical`.
        cur = Pattern::canonical(cur.theta + d[0], s, cur.offset + d[1], 0.0);
        if d[0].abs() < 1e-12 && d[1].abs() < 1e-12 && d[2].abs() < 1e-12 {
            break;
        }
    }
    cur.score = support(features, &cur, tol);
    cur
}

/// `detect_pattern` followed by `refine_pattern`.
pub fn detect_rows(features: &FeatureGrid, search: &SearchGrid, tol: f64) -> Result<Pattern> {
    let p = detect_pattern(features, search, tol)?;
    Ok(refine_pattern(features, &p, tol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rownav::line_angle_error;

    fn planted(theta: f64, s: f64, o: f64, rows: i64, per_row: i64) -> FeatureGrid {
        let pat = Pattern { theta, spacing: s, offset: o, score: 0.0 };
        let (n, d) = (pat.normal(), pat.direction());
        let mut pts = Vec::new();
        for k in -rows / 2..=rows / 2 {
            for j in -per_row / 2..=per_row / 2 {
                let (a, b) = (o + k as f64 * s, j as f64 * 0.2);
                pts.push([a * n[0] + b * d[0], a * n[1] + b * d[1]]);
            }
        }
        FeatureGrid::from_points(&pts, 0.01, [-2.0, -2.0], [400, 400])
    }

    #[test]
    fn recovers_planted_pattern() {
        let f = planted(0.0, 0.5, 0.25, 6, 16);
        let search = SearchGrid { spacing_min: 0.3, spacing_max: 0.8, ..Default::default() };
        let raw = detect_pattern(&f, &search, DEFAULT_TOLERANCE).unwrap();
        assert!((raw.spacing - 0.5).abs() <= search.spacing_step + 1e-12);
        assert_eq!(raw.score, support(&f, &raw, DEFAULT_TOLERANCE));
        let p = refine_pattern(&f, &raw, DEFAULT_TOLERANCE);
        assert!(p.score >= raw.score);
        assert!(line_angle_error(p.theta, 0.0).abs() <= search.theta_step + 1e-12);
        assert!((p.spacing - 0.5).abs() <= search.spacing_step + 1e-12);
        assert!(p.offset_error(&Pattern { theta: 0.0, spacing: 0.5, offset: 0.25, score: 0.0 }).abs() <= 0.01 + 1e-12);
    }

    #[test]
    fn empty_or_single_feature_is_an_error() {
        let f = FeatureGrid::from_points(&[], 0.01, [0.0, 0.0], [10, 10]);
        assert!(matches!(detect_pattern(&f, &SearchGrid::default(), 0.03), Err(Error::NoPattern(_))));
        let f = FeatureGrid::from_points(&[[0.05, 0.05]], 0.01, [0.0, 0.0], [10, 10]);
        assert!(matches!(detect_pattern(&f, &SearchGrid::default(), 0.03), Err(Error::NoPattern(_))));
    }

    #[test]
    fn search_grid_enumeration() {
        let g = SearchGrid::default();
        assert_eq!(g.thetas().len(), 180);
        assert_eq!(g.spacings().len(), 81);
        assert_eq!(g.offsets(0.5).len(), 50);
        assert_eq!(g.offsets(0.505).len(), 51);
        assert!(SearchGrid { spacing_min: 0.0, ..Default::default() }.validate().is_err());
    }
}
