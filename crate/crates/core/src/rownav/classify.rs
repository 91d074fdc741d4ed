use serde::{Deserialize, Serialize};

use super::Pattern;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantObservation {
    pub position: [f64; 2],
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometricLabel {
    Crop,
    Weed,
}

fn circ_dist(t: f64, phase: f64, lattice: f64) -> f64 {
    let d = (t - phase).rem_euclid(lattice);
    d.min(lattice - d)
}

/// Circular mean of `t mod lattice` over the given along-row coordinates.
fn lattice_phase(ts: impl Iterator<Item = f64>, lattice: f64) -> Option<f64> {
    let w = std::f64::consts::TAU / lattice;
    let (mut s, mut c, mut n) = (0.0, 0.0, 0);
    for t in ts {
        s += (w * t).sin();
        c += (w * t).cos();
        n += 1;
    }
    (n > 0 && s.hypot(c) > 1e-12).then(|| s.atan2(c) / w)
}

/// Labels each plant crop iff it lies within `d_row` of a pattern line and
/// within `d_lattice` of that line's lattice positions `phase + k·lattice`.
///
/// The lattice phase of every row is estimated from the near-row plants
/// themselves (circular mean, then re-estimated on plants that agree with
/// the first estimate), so only the lattice distance has to be known.
pub fn classify_by_geometry(
    plants: &[PlantObservation],
    pattern: &Pattern,
    lattice: f64,
    d_row: f64,
    d_lattice: f64,
) -> Vec<GeometricLabel> {
    let mut labels = vec![GeometricLabel::Weed; plants.len()];
    if !(lattice > 0.0 && d_row > 0.0 && d_lattice > 0.0) {
        return labels;
    }
    let d = pattern.direction();
    let mut rows: std::collections::BTreeMap<i64, Vec<(usize, f64)>> = Default::default();
    for (k, pl) in plants.iter().enumerate() {
        if pattern.distance(pl.position) <= d_row {
            let t = pl.position[0] * d[0] + pl.position[1] * d[1];
            rows.entry(pattern.line_index(pl.position)).or_default().push((k, t));
        }
    }
    for members in rows.values() {
        let Some(first) = lattice_phase(members.iter().map(|m| m.1), lattice) else {
            continue;
        };
        let agree = members.iter().map(|m| m.1).filter(|&t| circ_dist(t, first, lattice) <= d_lattice);
        let phase = lattice_phase(agree, lattice).unwrap_or(first);
        for &(k, t) in members {
            if circ_dist(t, phase, lattice) <= d_lattice {
                labels[k] = GeometricLabel::Crop;
            }
        }
    }
    labels
}
