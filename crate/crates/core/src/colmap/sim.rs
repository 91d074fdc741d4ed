use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::AffineTransform3D;
use crate::fieldgen::{generate, sample_cloud, FieldSpec, FieldTruth};
use crate::rng::stream;
use crate::spectral::{vegetation_filter, ColoredCloud, DEFAULT_EXG_THRESHOLD};
use crate::Result;

/// Aerial cloud of a whole field plus a denser ground cloud of one strip,
/// expressed in a frame distorted by a planted affine transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MisalignmentSpec {
    pub field: FieldSpec,
    /// `[xmin, ymin, xmax, ymax]` seen by the ground robot.
    pub strip: [f64; 4],
    pub uav_spacing: f64,
    pub ugv_spacing: f64,
    /// Geo-tag offset magnitude (m); its direction is drawn from the seed.
    pub offset: f64,
    pub scale: f64,
    pub yaw_deg: f64,
    pub brightness_noise: f64,
    pub seed: u64,
}

impl Default for MisalignmentSpec {
    fn default() -> Self {
        MisalignmentSpec {
            // Gaps and sizeable weeds break the periodicity of the crop lattice.
            field: FieldSpec {
                extent: [8.0, 8.0],
                crop_dropout: 0.15,
                weed_density: 6.0,
                weed_radius_range: [0.01, 0.05],
                ..Default::default()
            },
            strip: [2.0, 2.5, 6.0, 5.0],
            uav_spacing: 0.08,
            ugv_spacing: 0.04,
            offset: 1.5,
            scale: 1.1,
            yaw_deg: 3.0,
            brightness_noise: 0.05,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MisalignmentCase {
    pub truth_field: FieldTruth,
    pub uav: ColoredCloud,
    pub ugv: ColoredCloud,
    /// Maps aerial coordinates into the ground cloud's frame.
    pub truth: AffineTransform3D,
    pub strip: [f64; 4],
}

pub fn planted_misalignment(spec: &MisalignmentSpec) -> Result<MisalignmentCase> {
    let field = FieldSpec { seed: spec.seed, ..spec.field.clone() };
    let truth_field = generate(&field)?;
    let [w, h] = field.extent;
    let uav = sample_cloud(&truth_field, [0.0, 0.0, w, h], spec.uav_spacing, spec.brightness_noise, spec.seed ^ 0xA)?;
    let mut ugv = sample_cloud(&truth_field, spec.strip, spec.ugv_spacing, spec.brightness_noise, spec.seed ^ 0xB)?;
    let mut rng = stream(spec.seed, "misalignment");
    let dir = rng.random_range(0.0..std::f64::consts::TAU);
    let (s, c) = spec.yaw_deg.to_radians().sin_cos();
    let a = Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0) * spec.scale;
    let center = Vector3::new(0.5 * (spec.strip[0] + spec.strip[2]), 0.5 * (spec.strip[1] + spec.strip[3]), 0.0);
    let t = center - a * center + Vector3::new(spec.offset * dir.cos(), spec.offset * dir.sin(), 0.0);
    let truth = AffineTransform3D::from_parts(a, t);
    for p in &mut ugv.points {
        p.pos = truth.apply(p.pos);
    }
    ugv.geo_tag = [t[0], t[1], t[2]];
    Ok(MisalignmentCase { truth_field, uav, ugv, truth, strip: spec.strip })
}

impl MisalignmentCase {
    /// RMS of `‖F(p) − F_true(p)‖` over aerial vegetation points in the strip.
    pub fn vegetation_rmse(&self, f: &AffineTransform3D) -> f64 {
        let veg = vegetation_filter(&self.uav, DEFAULT_EXG_THRESHOLD);
        let b = self.strip;
        let (mut s, mut n) = (0.0, 0usize);
        for p in veg.points.iter().filter(|p| p.pos[0] >= b[0] && p.pos[0] <= b[2] && p.pos[1] >= b[1] && p.pos[1] <= b[3]) {
            let (x, y) = (f.apply(p.pos), self.truth.apply(p.pos));
            s += (0..3).map(|k| (x[k] - y[k]).powi(2)).sum::<f64>();
            n += 1;
        }
        if n == 0 {
            f64::INFINITY
        } else {
            (s / n as f64).sqrt()
        }
    }
}
