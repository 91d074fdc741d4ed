//! Procedural ground-truth fields and simulated sensor observations.
//!
//! A field is a family of parallel crop rows with plants on a regular
//! along-row lattice, uniformly scattered weeds (plus optional weed patches),
//! and a smooth terrain. Everything is a pure function of the [`FieldSpec`],
//! including its seed.

mod dem;
mod detect;
mod export;
mod render;

pub use dem::{DemRaster, TerrainSpec};
pub use detect::{simulate_detections, CameraPass, DelayModel, DetectionEvent, DetectorParams};
pub use export::{geojson, write_geojson, write_grid};
pub use render::{
    render_grid, render_grid_with, sample_cloud, Band, PlantIndex, RenderParams, SOIL_RGB,
    VEGETATION_RGB,
};

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::rng::{stream, SimRng};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Species {
    Crop,
    Weed,
    GrassWeed,
}

impl Species {
    pub fn is_weed(self) -> bool {
        !matches!(self, Species::Crop)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Species::Crop => "crop",
            Species::Weed => "weed",
            Species::GrassWeed => "grass_weed",
        }
    }
}

/// Zero-mean Gaussian perturbation of lattice positions, truncated at 3σ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Jitter {
    /// Along-row σ (m).
    pub along: f64,
    /// Perpendicular σ (m).
    pub lateral: f64,
}

impl Default for Jitter {
    fn default() -> Self {
        Jitter {
            along: 0.01,
            lateral: 0.0,
        }
    }
}

impl Jitter {
    pub const TRUNCATION: f64 = 3.0;

    pub fn lateral_bound(&self) -> f64 {
        Self::TRUNCATION * self.lateral
    }

    pub fn along_bound(&self) -> f64 {
        Self::TRUNCATION * self.along
    }
}

/// Disc of elevated weed density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeedPatch {
    pub center: [f64; 2],
    pub radius: f64,
    /// Weeds per m² inside the disc, on top of the background density.
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldSpec {
    /// East × north size (m); the field spans `[0, e] × [0, n]`.
    pub extent: [f64; 2],
    /// Row direction angle (rad); rows run along `(cos θ, sin θ)`.
    pub row_orientation: f64,
    pub row_spacing: f64,
    /// Signed offset of row 0 along the row normal `(-sin θ, cos θ)` (m).
    pub row_offset: f64,
    /// Number of rows starting at `row_offset`; `None` fills the extent.
    pub row_count: Option<usize>,
    /// Intra-row stem distance (m).
    pub crop_lattice: f64,
    pub crop_radius_range: [f64; 2],
    pub crop_jitter: Jitter,
    /// Fraction of lattice positions left empty.
    pub crop_dropout: f64,
    /// Weeds per m².
    pub weed_density: f64,
    pub weed_radius_range: [f64; 2],
    pub grass_weed_fraction: f64,
    pub weed_patches: Vec<WeedPatch>,
    /// Canopy disc height above the terrain (m).
    pub canopy_height: f64,
    pub terrain: TerrainSpec,
    pub seed: u64,
}

impl Default for FieldSpec {
    fn default() -> Self {
        FieldSpec {
            extent: [4.0, 4.0],
            row_orientation: 0.0,
            row_spacing: 0.5,
            row_offset: 0.25,
            row_count: None,
            crop_lattice: 0.25,
            crop_radius_range: [0.03, 0.05],
            crop_jitter: Jitter::default(),
            crop_dropout: 0.0,
            weed_density: 2.0,
            weed_radius_range: [0.003, 0.02],
            grass_weed_fraction: 0.2,
            weed_patches: Vec::new(),
            canopy_height: 0.05,
            terrain: TerrainSpec::default(),
            seed: 0,
        }
    }
}

impl FieldSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if !(self.extent[0] > 0.0 && self.extent[1] > 0.0) {
            return bad(format!("extent {:?} must be positive", self.extent));
        }
        if !(self.row_spacing > 0.0) {
            return bad(format!("row_spacing {} must be positive", self.row_spacing));
        }
        if !(self.crop_lattice > 0.0) {
            return bad(format!("crop_lattice {} must be positive", self.crop_lattice));
        }
        if !(self.weed_density >= 0.0) {
            return bad(format!("weed_density {} must be non-negative", self.weed_density));
        }
        for (name, [lo, hi]) in [
            ("crop_radius_range", self.crop_radius_range),
            ("weed_radius_range", self.weed_radius_range),
        ] {
            if !(lo > 0.0 && lo <= hi) {
                return bad(format!("{name} [{lo}, {hi}] must satisfy 0 < min <= max"));
            }
        }
        if !(0.0..=1.0).contains(&self.grass_weed_fraction) {
            return bad("grass_weed_fraction must be in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.crop_dropout) {
            return bad("crop_dropout must be in [0, 1]".into());
        }
        if !(self.crop_jitter.along >= 0.0 && self.crop_jitter.lateral >= 0.0) {
            return bad("jitter σ must be non-negative".into());
        }
        if !(self.terrain.cell_size > 0.0) {
            return bad("terrain cell size must be positive".into());
        }
        for p in &self.weed_patches {
            if !(p.radius > 0.0 && p.density >= 0.0) {
                return bad("weed patch needs radius > 0 and density >= 0".into());
            }
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        self.extent[0] * self.extent[1]
    }

    pub fn row_direction(&self) -> [f64; 2] {
        [self.row_orientation.cos(), self.row_orientation.sin()]
    }

    pub fn row_normal(&self) -> [f64; 2] {
        [-self.row_orientation.sin(), self.row_orientation.cos()]
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        (0.0..=self.extent[0]).contains(&p[0]) && (0.0..=self.extent[1]).contains(&p[1])
    }
}

/// Line `{p : p · (-sin θ, cos θ) = offset}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RowLine {
    pub theta: f64,
    pub offset: f64,
}

impl RowLine {
    pub fn distance(&self, p: [f64; 2]) -> f64 {
        (-self.theta.sin() * p[0] + self.theta.cos() * p[1] - self.offset).abs()
    }

    /// Endpoints of the segment inside `[0, ex] × [0, ey]`, if any.
    pub fn clip(&self, extent: [f64; 2]) -> Option<([f64; 2], [f64; 2])> {
        let (d, n) = (
            [self.theta.cos(), self.theta.sin()],
            [-self.theta.sin(), self.theta.cos()],
        );
        let base = [n[0] * self.offset, n[1] * self.offset];
        let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
        for axis in 0..2 {
            if d[axis].abs() < 1e-12 {
                if base[axis] < 0.0 || base[axis] > extent[axis] {
                    return None;
                }
                continue;
            }
            let a = (0.0 - base[axis]) / d[axis];
            let b = (extent[axis] - base[axis]) / d[axis];
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
        (t1 > t0).then(|| {
            (
                [base[0] + t0 * d[0], base[1] + t0 * d[1]],
                [base[0] + t1 * d[0], base[1] + t1 * d[1]],
            )
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantInstance {
    pub id: u32,
    /// Stem position; `z` is the terrain altitude under the stem.
    pub stem: [f64; 3],
    pub radius: f64,
    pub species: Species,
    /// Row index for crops.
    pub row: Option<usize>,
}

impl PlantInstance {
    pub fn xy(&self) -> [f64; 2] {
        [self.stem[0], self.stem[1]]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldTruth {
    pub spec: FieldSpec,
    pub rows: Vec<RowLine>,
    pub plants: Vec<PlantInstance>,
    pub dem: DemRaster,
}

impl FieldTruth {
    pub fn crops(&self) -> impl Iterator<Item = &PlantInstance> {
        self.plants.iter().filter(|p| p.species == Species::Crop)
    }

    pub fn weeds(&self) -> impl Iterator<Item = &PlantInstance> {
        self.plants.iter().filter(|p| p.species.is_weed())
    }

    pub fn plant(&self, id: u32) -> Option<&PlantInstance> {
        self.plants.get(id as usize).filter(|p| p.id == id)
    }
}

fn truncated_normal(rng: &mut SimRng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    loop {
        let z: f64 = normal.sample(rng);
        if z.abs() <= Jitter::TRUNCATION {
            return z * sigma;
        }
    }
}

fn uniform_in(rng: &mut SimRng, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn poisson(rng: &mut SimRng, lambda: f64) -> usize {
    if lambda <= 0.0 {
        return 0;
    }
    Poisson::new(lambda).expect("positive rate").sample(rng) as usize
}

/// Builds the ground truth for `spec`.
pub fn generate(spec: &FieldSpec) -> Result<FieldTruth> {
    spec.validate()?;
    let dem = DemRaster::generate(&spec.terrain, spec.extent, &mut stream(spec.seed, "dem"));
    let theta = spec.row_orientation;
    let (d, n) = (spec.row_direction(), spec.row_normal());

    let ks: Vec<i64> = match spec.row_count {
        Some(c) => (0..c as i64).collect(),
        None => {
            let corners = [[0.0, 0.0], [spec.extent[0], 0.0], [0.0, spec.extent[1]], spec.extent];
            let proj: Vec<f64> = corners.iter().map(|c| c[0] * n[0] + c[1] * n[1]).collect();
            let lo = proj.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = proj.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let k0 = ((lo - spec.row_offset) / spec.row_spacing).ceil() as i64;
            let k1 = ((hi - spec.row_offset) / spec.row_spacing).floor() as i64;
            (k0..=k1).collect()
        }
    };
    let rows: Vec<RowLine> = ks
        .iter()
        .map(|&k| RowLine {
            theta,
            offset: spec.row_offset + k as f64 * spec.row_spacing,
        })
        .collect();

    let mut plants = Vec::new();
    let mut crop_rng = stream(spec.seed, "crops");
    for (ri, row) in rows.iter().enumerate() {
        let Some((a, b)) = row.clip(spec.extent) else {
            continue;
        };
        let ta = a[0] * d[0] + a[1] * d[1];
        let tb = b[0] * d[0] + b[1] * d[1];
        let (t0, t1) = (ta.min(tb), ta.max(tb));
        let j0 = (t0 / spec.crop_lattice).ceil() as i64;
        let j1 = (t1 / spec.crop_lattice).floor() as i64;
        for j in j0..=j1 {
            // Draw everything up front so dropout does not shift later plants.
            let keep = crop_rng.random::<f64>() >= spec.crop_dropout;
            let da = truncated_normal(&mut crop_rng, spec.crop_jitter.along);
            let dl = truncated_normal(&mut crop_rng, spec.crop_jitter.lateral);
            let radius = uniform_in(&mut crop_rng, spec.crop_radius_range);
            if !keep {
                continue;
            }
            let t = j as f64 * spec.crop_lattice + da;
            let off = row.offset + dl;
            let p = [off * n[0] + t * d[0], off * n[1] + t * d[1]];
            if !spec.contains(p) {
                continue;
            }
            plants.push(PlantInstance {
                id: plants.len() as u32,
                stem: [p[0], p[1], dem.altitude(p[0], p[1])],
                radius,
                species: Species::Crop,
                row: Some(ri),
            });
        }
    }

    let mut weed_rng = stream(spec.seed, "weeds");
    let push_weed = |plants: &mut Vec<PlantInstance>, rng: &mut SimRng, p: [f64; 2]| {
        let grass = rng.random::<f64>() < spec.grass_weed_fraction;
        let radius = uniform_in(rng, spec.weed_radius_range);
        plants.push(PlantInstance {
            id: plants.len() as u32,
            stem: [p[0], p[1], dem.altitude(p[0], p[1])],
            radius,
            species: if grass { Species::GrassWeed } else { Species::Weed },
            row: None,
        });
    };
    let count = poisson(&mut weed_rng, spec.weed_density * spec.area());
    for _ in 0..count {
        let p = [
            weed_rng.random_range(0.0..spec.extent[0]),
            weed_rng.random_range(0.0..spec.extent[1]),
        ];
        push_weed(&mut plants, &mut weed_rng, p);
    }
    for patch in &spec.weed_patches {
        let area = std::f64::consts::PI * patch.radius * patch.radius;
        let count = poisson(&mut weed_rng, patch.density * area);
        for _ in 0..count {
            let r = patch.radius * weed_rng.random::<f64>().sqrt();
            let a = weed_rng.random_range(0.0..std::f64::consts::TAU);
            let p = [patch.center[0] + r * a.cos(), patch.center[1] + r * a.sin()];
            if spec.contains(p) {
                push_weed(&mut plants, &mut weed_rng, p);
            }
        }
    }

    Ok(FieldTruth {
        spec: spec.clone(),
        rows,
        plants,
        dem,
    })
}
