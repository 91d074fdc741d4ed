use std::collections::BTreeMap;
use std::sync::OnceLock;

use super::{exg, ndre, simple_ratio};
use crate::{Error, Result};

const COMPUTED: [&str; 3] = ["exg", "ndre", "sr"];

/// Georeferenced multi-layer raster. Cell `(i, j)` has its lower-left corner
/// at `origin + (i, j) * cell_size`; values are stored row-major with the
/// south row first.
///
/// Index layers (`exg`, `ndre`, `sr`) are derived from the base bands on
/// first access and cached; they cannot be inserted directly.
#[derive(Debug, Clone)]
pub struct GridMap2D {
    origin: [f64; 2],
    cell_size: f64,
    width: usize,
    height: usize,
    layers: BTreeMap<String, Vec<f64>>,
    exg: OnceLock<Option<Vec<f64>>>,
    ndre: OnceLock<Option<Vec<f64>>>,
    sr: OnceLock<Option<Vec<f64>>>,
}

impl PartialEq for GridMap2D {
    fn eq(&self, other: &Self) -> bool {
        self.origin == other.origin
            && self.cell_size == other.cell_size
            && self.width == other.width
            && self.height == other.height
            && self.layers == other.layers
    }
}

impl GridMap2D {
    pub fn new(origin: [f64; 2], cell_size: f64, width: usize, height: usize) -> Result<Self> {
        if !(cell_size > 0.0) || !cell_size.is_finite() {
            return Err(Error::Parameter(format!("cell size {cell_size} must be positive")));
        }
        Ok(GridMap2D {
            origin,
            cell_size,
            width,
            height,
            layers: BTreeMap::new(),
            exg: OnceLock::new(),
            ndre: OnceLock::new(),
            sr: OnceLock::new(),
        })
    }

    /// Adds (or replaces) a base layer. Replacing a band resets cached indices.
    pub fn with_layer(mut self, name: &str, values: Vec<f64>) -> Result<Self> {
        if COMPUTED.contains(&name) {
            return Err(Error::ContractViolation(format!("`{name}` is a computed layer")));
        }
        if values.len() != self.width * self.height {
            return Err(Error::ContractViolation(format!(
                "layer `{name}` has {} cells, grid has {}",
                values.len(),
                self.width * self.height
            )));
        }
        self.layers.insert(name.to_string(), values);
        self.exg = OnceLock::new();
        self.ndre = OnceLock::new();
        self.sr = OnceLock::new();
        Ok(self)
    }

    pub fn origin(&self) -> [f64; 2] {
        self.origin
    }
    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn len(&self) -> usize {
        self.width * self.height
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn base_layer_names(&self) -> impl Iterator<Item = &str> {
        self.layers.keys().map(String::as_str)
    }

    /// Base or computed layer by name.
    pub fn layer(&self, name: &str) -> Option<&[f64]> {
        match name {
            "exg" => self.exg(),
            "ndre" => self.ndre_layer(),
            "sr" => self.sr_layer(),
            _ => self.layers.get(name).map(Vec::as_slice),
        }
    }

    pub fn exg(&self) -> Option<&[f64]> {
        self.exg
            .get_or_init(|| {
                let (r, g, b) = (self.layers.get("r")?, self.layers.get("g")?, self.layers.get("b")?);
                Some(
                    r.iter()
                        .zip(g)
                        .zip(b)
                        .map(|((&r, &g), &b)| exg(r, g, b))
                        .collect(),
                )
            })
            .as_deref()
    }

    /// NDRE per cell; undefined cells hold NaN.
    pub fn ndre_layer(&self) -> Option<&[f64]> {
        self.ndre
            .get_or_init(|| self.red_edge_map(|n, e| ndre(n, e).unwrap_or(f64::NAN)))
            .as_deref()
    }

    /// Simple ratio per cell; undefined cells hold NaN.
    pub fn sr_layer(&self) -> Option<&[f64]> {
        self.sr
            .get_or_init(|| self.red_edge_map(|n, e| simple_ratio(n, e).unwrap_or(f64::NAN)))
            .as_deref()
    }

    fn red_edge_map(&self, f: impl Fn(f64, f64) -> f64) -> Option<Vec<f64>> {
        let (nir, re) = (self.layers.get("nir")?, self.layers.get("red_edge")?);
        Some(nir.iter().zip(re).map(|(&n, &e)| f(n, e)).collect())
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.width + i
    }

    pub fn cell_center(&self, i: usize, j: usize) -> [f64; 2] {
        [
            self.origin[0] + (i as f64 + 0.5) * self.cell_size,
            self.origin[1] + (j as f64 + 0.5) * self.cell_size,
        ]
    }

    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let fi = ((x - self.origin[0]) / self.cell_size).floor();
        let fj = ((y - self.origin[1]) / self.cell_size).floor();
        if fi < 0.0 || fj < 0.0 || fi >= self.width as f64 || fj >= self.height as f64 {
            return None;
        }
        Some((fi as usize, fj as usize))
    }
}

/// Boolean layer with the same layout as the grid it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub cells: Vec<bool>,
}

impl Mask {
    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.cells[j * self.width + i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn computed_layers_are_cached_and_reserved() {
        let g = GridMap2D::new([0.0, 0.0], 1.0, 2, 1)
            .unwrap()
            .with_layer("r", vec![0.1, 0.2])
            .unwrap()
            .with_layer("g", vec![0.5, 0.2])
            .unwrap()
            .with_layer("b", vec![0.1, 0.2])
            .unwrap()
            .with_layer("nir", vec![0.6, 0.0])
            .unwrap()
            .with_layer("red_edge", vec![0.2, 0.0])
            .unwrap();
        let e = g.layer("exg").unwrap();
        assert!((e[0] - 0.8).abs() < 1e-15);
        assert!(std::ptr::eq(e, g.layer("exg").unwrap()));
        let n = g.layer("ndre").unwrap();
        assert!((n[0] - 0.5).abs() < 1e-15);
        assert!(n[1].is_nan());
        assert!((g.layer("sr").unwrap()[0] - 3.0).abs() < 1e-12);
        assert!(g.clone().with_layer("exg", vec![0.0, 0.0]).is_err());
        assert!(g.with_layer("r", vec![0.0]).is_err());
    }

    #[test]
    fn cell_lookup() {
        let g = GridMap2D::new([1.0, 2.0], 0.5, 4, 2).unwrap();
        assert_eq!(g.cell_of(1.1, 2.1), Some((0, 0)));
        assert_eq!(g.cell_of(2.99, 2.99), Some((3, 1)));
        assert_eq!(g.cell_of(3.0, 2.0), None);
        assert_eq!(g.cell_center(1, 1), [1.75, 2.75]);
        assert!(GridMap2D::new([0.0, 0.0], 0.0, 1, 1).is_err());
    }
}
