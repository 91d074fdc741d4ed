use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{FieldTruth, PlantInstance};
use crate::rng::stream;
use crate::spectral::{ColoredCloud, ColoredPoint, GridMap2D};
use crate::{Error, Result};

/// Nominal soil reflectance (ExG = 0).
pub const SOIL_RGB: [f64; 3] = [0.45, 0.35, 0.25];
/// Nominal canopy reflectance (ExG = 0.85).
pub const VEGETATION_RGB: [f64; 3] = [0.15, 0.55, 0.10];
const SOIL_NIR_RE: [f64; 2] = [0.30, 0.25];
const VEGETATION_NIR_RE: [f64; 2] = [0.60, 0.20];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Band {
    Rgb,
    Height,
    Nir,
    RedEdge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderParams {
    /// Per-cell brightness attenuation drawn from `U(1 - noise, 1]`.
    pub brightness_noise: f64,
    pub seed: u64,
}

impl Default for RenderParams {
    fn default() -> Self {
        RenderParams {
            brightness_noise: 0.05,
            seed: 0,
        }
    }
}

/// Uniform bucket grid over plant discs for point-in-canopy queries.
pub struct PlantIndex<'a> {
    plants: &'a [PlantInstance],
    bucket: f64,
    nx: usize,
    ny: usize,
    cells: Vec<Vec<u32>>,
}

impl<'a> PlantIndex<'a> {
    pub fn new(truth: &'a FieldTruth) -> Self {
        let max_r = truth
            .plants
            .iter()
            .map(|p| p.radius)
            .fold(0.0f64, f64::max);
        let bucket = (2.0 * max_r).max(0.05);
        let nx = (truth.spec.extent[0] / bucket).ceil() as usize + 1;
        let ny = (truth.spec.extent[1] / bucket).ceil() as usize + 1;
        let mut cells = vec![Vec::new(); nx * ny];
        for p in &truth.plants {
            let (x0, x1) = (p.stem[0] - p.radius, p.stem[0] + p.radius);
            let (y0, y1) = (p.stem[1] - p.radius, p.stem[1] + p.radius);
            let clampi = |v: f64, n: usize| ((v / bucket).floor().max(0.0) as usize).min(n - 1);
            for j in clampi(y0, ny)..=clampi(y1, ny) {
                for i in clampi(x0, nx)..=clampi(x1, nx) {
                    cells[j * nx + i].push(p.id);
                }
            }
        }
        PlantIndex {
            plants: &truth.plants,
            bucket,
            nx,
            ny,
            cells,
        }
    }

    /// Plants whose canopy disc contains `(x, y)`.
    pub fn covering(&self, x: f64, y: f64) -> impl Iterator<Item = &'a PlantInstance> + '_ {
        let i = (x / self.bucket).floor();
        let j = (y / self.bucket).floor();
        let slot = if i >= 0.0 && j >= 0.0 && (i as usize) < self.nx && (j as usize) < self.ny {
            Some(j as usize * self.nx + i as usize)
        } else {
            None
        };
        let plants = self.plants;
        slot.into_iter()
            .flat_map(move |s| self.cells[s].iter())
            .map(move |&id| &plants[id as usize])
            .filter(move |p| {
                let (dx, dy) = (x - p.stem[0], y - p.stem[1]);
                dx * dx + dy * dy <= p.radius * p.radius
            })
    }

    pub fn is_canopy(&self, x: f64, y: f64) -> bool {
        self.covering(x, y).next().is_some()
    }
}

/// Rasterizes the field; a cell is canopy iff its center lies in a plant disc.
pub fn render_grid(truth: &FieldTruth, cell_size: f64, bands: &[Band]) -> Result<GridMap2D> {
    render_grid_with(
        truth,
        cell_size,
        bands,
        &RenderParams {
            seed: truth.spec.seed,
            ..Default::default()
        },
    )
}

pub fn render_grid_with(
    truth: &FieldTruth,
    cell_size: f64,
    bands: &[Band],
    params: &RenderParams,
) -> Result<GridMap2D> {
    if !(cell_size > 0.0) {
        return Err(Error::Parameter(format!("cell size {cell_size} must be positive")));
    }
    let w = (truth.spec.extent[0] / cell_size).ceil() as usize;
    let h = (truth.spec.extent[1] / cell_size).ceil() as usize;
    let grid = GridMap2D::new([0.0, 0.0], cell_size, w, h)?;
    let index = PlantIndex::new(truth);
    let mut rng = stream(params.seed, "render");
    let n = w * h;
    let mut canopy = vec![false; n];
    let mut brightness = vec![1.0; n];
    let mut height = vec![0.0; n];
    for j in 0..h {
        for i in 0..w {
            let [x, y] = grid.cell_center(i, j);
            let k = grid.index(i, j);
            canopy[k] = index.is_canopy(x, y);
            if params.brightness_noise > 0.0 {
                brightness[k] = 1.0 - params.brightness_noise * rng.random::<f64>();
            }
            height[k] = truth.dem.altitude(x, y)
                + if canopy[k] { truth.spec.canopy_height } else { 0.0 };
        }
    }
    let band = |f: &dyn Fn(bool) -> f64| -> Vec<f64> {
        canopy
            .iter()
            .zip(&brightness)
            .map(|(&c, &s)| f(c) * s)
            .collect()
    };
    let mut grid = grid;
    for b in bands {
        grid = match b {
            Band::Rgb => {
                let mut g = grid;
                for (ch, name) in ["r", "g", "b"].iter().enumerate() {
                    g = g.with_layer(
                        name,
                        band(&|c| if c { VEGETATION_RGB[ch] } else { SOIL_RGB[ch] }),
                    )?;
                }
                g
            }
            Band::Height => grid.with_layer("height", height.clone())?,
            Band::Nir => grid.with_layer(
                "nir",
                band(&|c| if c { VEGETATION_NIR_RE[0] } else { SOIL_NIR_RE[0] }),
            )?,
            Band::RedEdge => grid.with_layer(
                "red_edge",
                band(&|c| if c { VEGETATION_NIR_RE[1] } else { SOIL_NIR_RE[1] }),
            )?,
        };
    }
    Ok(grid)
}

/// Samples the field surface on a jittered lattice of pitch `spacing` inside
/// `region = [xmin, ymin, xmax, ymax]`, emulating a reconstructed cloud.
pub fn sample_cloud(
    truth: &FieldTruth,
    region: [f64; 4],
    spacing: f64,
    brightness_noise: f64,
    seed: u64,
) -> Result<ColoredCloud> {
    if !(spacing > 0.0) {
        return Err(Error::Parameter("sample spacing must be positive".into()));
    }
    let index = PlantIndex::new(truth);
    let mut rng = stream(seed, "cloud");
    let nx = ((region[2] - region[0]) / spacing).floor() as usize;
    let ny = ((region[3] - region[1]) / spacing).floor() as usize;
    let mut points = Vec::with_capacity(nx * ny);
    let jitter = 0.25 * spacing;
    for j in 0..ny {
        for i in 0..nx {
            let x = region[0] + (i as f64 + 0.5) * spacing + rng.random_range(-jitter..jitter);
            let y = region[1] + (j as f64 + 0.5) * spacing + rng.random_range(-jitter..jitter);
            let s = 1.0 - brightness_noise * rng.random::<f64>();
            let canopy = index.is_canopy(x, y);
            let z = truth.dem.altitude(x, y) + if canopy { truth.spec.canopy_height } else { 0.0 };
            let base = if canopy { VEGETATION_RGB } else { SOIL_RGB };
            points.push(ColoredPoint {
                pos: [x, y, z],
                rgb: base.map(|c| c * s),
            });
        }
    }
    Ok(ColoredCloud {
        points,
        geo_tag: [0.0; 3],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fieldgen::{generate, FieldSpec, Jitter, Species};

    fn single_plant(radius: f64) -> FieldTruth {
        let spec = FieldSpec {
            extent: [1.0, 1.0],
            weed_density: 0.0,
            row_count: Some(0),
            ..Default::default()
        };
        let mut t = generate(&spec).unwrap();
        t.plants.push(PlantInstance {
            id: 0,
            stem: [0.503, 0.497, 0.0],
            radius,
            species: Species::Weed,
            row: None,
        });
        t
    }

    #[test]
    fn empty_field_renders_soil() {
        let spec = FieldSpec {
            weed_density: 0.0,
            row_count: Some(0),
            ..Default::default()
        };
        let t = generate(&spec).unwrap();
        let g = render_grid(&t, 0.05, &[Band::Rgb]).unwrap();
        assert!(g.layer("g").unwrap().iter().all(|&v| v <= SOIL_RGB[1]));
    }

    #[test]
    fn disc_rasterization_matches_area() {
        let r = 0.1;
        let c = 0.01;
        let g = render_grid(&single_plant(r), c, &[Band::Rgb]).unwrap();
        let veg = g.exg().unwrap().iter().filter(|&&e| e > 0.1).count() as f64;
        let expect = std::f64::consts::PI * r * r / (c * c);
        // Boundary cells: at most the perimeter in cells.
        let boundary = 2.0 * std::f64::consts::PI * r / c;
        assert!((veg - expect).abs() <= boundary, "{veg} vs {expect}");
    }

    #[test]
    fn occupied_area_is_resolution_consistent() {
        let spec = FieldSpec {
            seed: 5,
            crop_jitter: Jitter { along: 0.01, lateral: 0.0 },
            ..Default::default()
        };
        let t = generate(&spec).unwrap();
        let area = |c: f64| {
            let g = render_grid(&t, c, &[Band::Rgb]).unwrap();
            g.exg().unwrap().iter().filter(|&&e| e > 0.1).count() as f64 * c * c
        };
        let (a, b) = (area(0.02), area(0.01));
        assert!((a - b).abs() / b < 0.10, "{a} vs {b}");
    }

    #[test]
    fn height_layer_adds_canopy() {
        let t = single_plant(0.1);
        let g = render_grid(&t, 0.05, &[Band::Rgb, Band::Height, Band::Nir, Band::RedEdge]).unwrap();
        let (i, j) = g.cell_of(0.5, 0.5).unwrap();
        let k = g.index(i, j);
        let [x, y] = g.cell_center(i, j);
        assert!((g.layer("height").unwrap()[k] - t.dem.altitude(x, y) - t.spec.canopy_height).abs() < 1e-12);
        assert!(g.layer("ndre").unwrap()[k] > g.layer("ndre").unwrap()[0]);
    }

    #[test]
    fn sampled_cloud_colors_follow_canopy() {
        let t = single_plant(0.2);
        let c = sample_cloud(&t, [0.0, 0.0, 1.0, 1.0], 0.02, 0.05, 1).unwrap();
        let index = PlantIndex::new(&t);
        for p in &c.points {
            assert_eq!(p.exg() > 0.1, index.is_canopy(p.pos[0], p.pos[1]));
        }
    }
}
