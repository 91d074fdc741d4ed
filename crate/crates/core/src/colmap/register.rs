use serde::{Deserialize, Serialize};

use super::affine::fit_pairs_ridge;
use super::{
    build_grid, coherent_matches, cpd_affine, match_flow, AffineTransform3D, CpdConfig, CpdResult, FlowParams,
};
use crate::spectral::{vegetation_filter, ColoredCloud, DEFAULT_EXG_THRESHOLD};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegisterConfig {
    /// Matching grid resolution; the denser cloud is aggregated to it.
    pub cell_size: f64,
    pub flow: FlowParams,
    /// Flow clustering radius (cells) and minimum cluster size.
    pub eps: f64,
    pub min_cluster: usize,
    pub exg_threshold: f64,
    pub outlier_weight: f64,
    pub cpd: CpdConfig,
    /// Accepted range of `|det A|`.
    pub det_range: [f64; 2],
    /// Source vegetation farther than this outside the target extent is not
    /// passed to CPD (m).
    pub overlap_margin: f64,
}

impl Default for RegisterConfig {
    fn default() -> Self {
        RegisterConfig {
            cell_size: 0.08,
            flow: FlowParams::default(),
            eps: 2.0,
            min_cluster: 50,
            exg_threshold: DEFAULT_EXG_THRESHOLD,
            outlier_weight: 0.1,
            cpd: CpdConfig { initial_sigma2: Some(0.08 * 0.08), ridge: 0.08, ..Default::default() },
            det_range: [0.5, 2.0],
            overlap_margin: 0.16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Registration {
    /// Maps `M_A` coordinates into `M_G` coordinates.
    pub transform: AffineTransform3D,
    /// Preliminary alignment from the coherent flow matches.
    pub coarse: AffineTransform3D,
    pub coarse_rmse: f64,
    pub matches: usize,
    pub flow_mode: [i32; 2],
    pub cpd: CpdResult,
    /// RMS distance from each aligned source vegetation point inside the
    /// target extent to the nearest target vegetation point.
    pub alignment_rmse: f64,
}

fn unreliable(e: Error) -> Error {
    match e {
        Error::NoFlow(m) | Error::RankDeficient(m) => Error::RegistrationUnreliable(m),
        other => other,
    }
}

fn check_det(f: &AffineTransform3D, range: [f64; 2], stage: &str) -> Result<()> {
    let d = f.det().abs();
    if !(range[0]..=range[1]).contains(&d) {
        return Err(Error::RegistrationUnreliable(format!("{stage} |det A| = {d:.3} outside {range:?}")));
    }
    Ok(())
}

fn bbox(points: &[[f64; 3]]) -> [f64; 4] {
    let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
    for p in points {
        b[0] = b[0].min(p[0]);
        b[1] = b[1].min(p[1]);
        b[2] = b[2].max(p[0]);
        b[3] = b[3].max(p[1]);
    }
    b
}

/// Aligns the aerial cloud `ma` with the ground cloud `mg`: multimodal grids,
/// dense flow, coherent matches, least-squares affine, then affine CPD on
/// the vegetation points.
pub fn register(ma: &ColoredCloud, mg: &ColoredCloud, cfg: &RegisterConfig) -> Result<Registration> {
    if ma.is_empty() || mg.is_empty() {
        return Err(Error::RegistrationUnreliable("empty input cloud".into()));
    }
    let cs = cfg.cell_size;
    let ja_full = build_grid(ma, cs);
    let jg = build_grid(mg, cs);
    let r = cfg.flow.search_radius as i64;
    let ja = ja_full.crop(
        [jg.index0[0] - r, jg.index0[1] - r],
        [jg.index0[0] + jg.width as i64 + r, jg.index0[1] + jg.height as i64 + r],
    );
    if ja.valid_count() == 0 {
        return Err(Error::RegistrationUnreliable("clouds do not overlap within the search radius".into()));
    }
    let flow = match_flow(&ja, &jg, &cfg.flow).map_err(unreliable)?;
    let matches = coherent_matches(&flow, cfg.eps, cfg.min_cluster)?;
    let coarse_fit = fit_pairs_ridge(&matches.pairs, cs).map_err(unreliable)?;
    check_det(&coarse_fit.transform, cfg.det_range, "coarse")?;

    let veg_g = vegetation_filter(mg, cfg.exg_threshold).positions();
    let gb = bbox(&mg.positions());
    let m = cfg.overlap_margin;
    let veg_a: Vec<[f64; 3]> = vegetation_filter(ma, cfg.exg_threshold)
        .positions()
        .into_iter()
        .filter(|&p| {
            let q = coarse_fit.transform.apply(p);
            q[0] >= gb[0] - m && q[0] <= gb[2] + m && q[1] >= gb[1] - m && q[1] <= gb[3] + m
        })
        .collect();
    if veg_a.len() < 4 || veg_g.len() < 4 {
        return Err(Error::RegistrationUnreliable("too few vegetation points in the overlap".into()));
    }
    let cpd = cpd_affine(&veg_a, &veg_g, cfg.outlier_weight, &coarse_fit.transform, &cfg.cpd).map_err(unreliable)?;
    check_det(&cpd.transform, cfg.det_range, "refined")?;

    let (mut sq, mut n) = (0.0, 0usize);
    for &p in &veg_a {
        let q = cpd.transform.apply(p);
        if q[0] < gb[0] || q[0] > gb[2] || q[1] < gb[1] || q[1] > gb[3] {
            continue;
        }
        sq += veg_g
            .iter()
            .map(|g| (0..3).map(|k| (g[k] - q[k]).powi(2)).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        n += 1;
    }
    let alignment_rmse = if n > 0 { (sq / n as f64).sqrt() } else { f64::INFINITY };
    Ok(Registration {
        transform: cpd.transform,
        coarse: coarse_fit.transform,
        coarse_rmse: coarse_fit.rmse,
        matches: matches.len(),
        flow_mode: matches.mode,
        alignment_rmse,
        cpd,
    })
}
