//! Spectral indices and vegetation extraction over grid maps and clouds.

mod cloud;
mod grid;

pub use cloud::{parse_ply, ply_string, read_ply, write_ply, ColoredCloud, ColoredPoint};
pub use grid::{GridMap2D, Mask};

use crate::{Error, Result};

/// Default ExG threshold separating canopy from soil on [0, 1] reflectances.
pub const DEFAULT_EXG_THRESHOLD: f64 = 0.1;

/// Excess Green index `2g - r - b`.
#[inline]
pub fn exg(r: f64, g: f64, b: f64) -> f64 {
    2.0 * g - r - b
}

/// Normalized difference red edge `(nir - re) / (nir + re)`.
pub fn ndre(nir: f64, red_edge: f64) -> Result<f64> {
    let den = nir + red_edge;
    if den <= 0.0 || !den.is_finite() {
        return Err(Error::UndefinedIndex("ndre: nir + red_edge must be positive"));
    }
    Ok((nir - red_edge) / den)
}

/// Simple ratio `nir / re`.
pub fn simple_ratio(nir: f64, red_edge: f64) -> Result<f64> {
    if nir <= 0.0 || red_edge <= 0.0 {
        return Err(Error::UndefinedIndex("simple ratio: inputs must be positive"));
    }
    Ok(nir / red_edge)
}

/// Cells whose ExG exceeds `threshold`.
pub fn vegetation_mask(grid: &GridMap2D, threshold: f64) -> Result<Mask> {
    let exg = grid
        .exg()
        .ok_or_else(|| Error::ContractViolation("grid has no r/g/b layers".into()))?;
    Ok(Mask {
        width: grid.width(),
        height: grid.height(),
        cells: exg.iter().map(|&v| v > threshold).collect(),
    })
}

/// Points whose ExG exceeds `threshold`; idempotent.
pub fn vegetation_filter(cloud: &ColoredCloud, threshold: f64) -> ColoredCloud {
    ColoredCloud {
        points: cloud
            .points
            .iter()
            .filter(|p| p.exg() > threshold)
            .copied()
            .collect(),
        geo_tag: cloud.geo_tag,
    }
}
