use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::SimRng;

/// Digital elevation model parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TerrainSpec {
    /// Mean altitude (m).
    pub base_altitude: f64,
    /// RMS deviation from the base altitude (m).
    pub roughness: f64,
    /// Spatial correlation length of the relief (m).
    pub correlation_length: f64,
    /// Raster node spacing (m).
    pub cell_size: f64,
}

impl Default for TerrainSpec {
    fn default() -> Self {
        TerrainSpec {
            base_altitude: 0.0,
            roughness: 0.1,
            correlation_length: 4.0,
            cell_size: 0.25,
        }
    }
}

/// Altitude raster sampled at nodes `origin + (i, j) * cell_size`,
/// bilinearly interpolated, clamped at the border.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemRaster {
    pub origin: [f64; 2],
    pub cell_size: f64,
    pub nx: usize,
    pub ny: usize,
    pub values: Vec<f64>,
}

const WAVES: usize = 8;

impl DemRaster {
    /// Sum of random plane waves scaled to the requested RMS roughness.
    pub(crate) fn generate(terrain: &TerrainSpec, extent: [f64; 2], rng: &mut SimRng) -> Self {
        let cell = terrain.cell_size;
        let origin = [-cell, -cell];
        let nx = (extent[0] / cell).ceil() as usize + 3;
        let ny = (extent[1] / cell).ceil() as usize + 3;
        let k = 1.0 / terrain.correlation_length.max(1e-6);
        let amp = terrain.roughness * (2.0 / WAVES as f64).sqrt();
        let waves: Vec<(f64, f64, f64)> = (0..WAVES)
            .map(|_| {
                let dir = rng.random_range(0.0..std::f64::consts::TAU);
                let scale = rng.random_range(0.5..1.5);
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                (k * scale * dir.cos(), k * scale * dir.sin(), phase)
            })
            .collect();
        let mut values = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let x = origin[0] + i as f64 * cell;
                let y = origin[1] + j as f64 * cell;
                let relief: f64 = waves
                    .iter()
                    .map(|&(kx, ky, ph)| (kx * x + ky * y + ph).sin())
                    .sum();
                values.push(terrain.base_altitude + amp * relief);
            }
        }
        DemRaster {
            origin,
            cell_size: cell,
            nx,
            ny,
            values,
        }
    }

    pub fn flat(altitude: f64, origin: [f64; 2], cell_size: f64, nx: usize, ny: usize) -> Self {
        DemRaster {
            origin,
            cell_size,
            nx,
            ny,
            values: vec![altitude; nx * ny],
        }
    }

    fn locate(&self, x: f64, y: f64) -> (usize, usize, f64, f64) {
        let fx = ((x - self.origin[0]) / self.cell_size).clamp(0.0, (self.nx - 1) as f64);
        let fy = ((y - self.origin[1]) / self.cell_size).clamp(0.0, (self.ny - 1) as f64);
        let i = (fx.floor() as usize).min(self.nx.saturating_sub(2));
        let j = (fy.floor() as usize).min(self.ny.saturating_sub(2));
        (i, j, fx - i as f64, fy - j as f64)
    }

    #[inline]
    fn node(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.nx + i]
    }

    pub fn altitude(&self, x: f64, y: f64) -> f64 {
        let (i, j, u, v) = self.locate(x, y);
        let (a, b) = (self.node(i, j), self.node(i + 1, j));
        let (c, d) = (self.node(i, j + 1), self.node(i + 1, j + 1));
        (1.0 - v) * ((1.0 - u) * a + u * b) + v * ((1.0 - u) * c + u * d)
    }

    /// Gradient of the interpolant (zero outside the raster).
    pub fn gradient(&self, x: f64, y: f64) -> [f64; 2] {
        let fx = (x - self.origin[0]) / self.cell_size;
        let fy = (y - self.origin[1]) / self.cell_size;
        if fx < 0.0 || fy < 0.0 || fx > (self.nx - 1) as f64 || fy > (self.ny - 1) as f64 {
            return [0.0, 0.0];
        }
        let (i, j, u, v) = self.locate(x, y);
        let (a, b) = (self.node(i, j), self.node(i + 1, j));
        let (c, d) = (self.node(i, j + 1), self.node(i + 1, j + 1));
        let dx = (1.0 - v) * (b - a) + v * (d - c);
        let dy = (1.0 - u) * (c - a) + u * (d - b);
        [dx / self.cell_size, dy / self.cell_size]
    }
}
