use agrisim::colmap::*;
use agrisim::spectral::{vegetation_filter, ColoredCloud, DEFAULT_EXG_THRESHOLD};
use agrisim::Error;
use nalgebra::{Matrix3, Vector3};

fn case(seed: u64) -> MisalignmentCase {
    planted_misalignment(&MisalignmentSpec { seed, ..Default::default() }).unwrap()
}

fn rms_between(points: &[[f64; 3]], f: &AffineTransform3D, g: &AffineTransform3D) -> f64 {
    let s: f64 = points
        .iter()
        .map(|&p| {
            let (a, b) = (f.apply(p), g.apply(p));
            (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>()
        })
        .sum();
    (s / points.len() as f64).sqrt()
}

fn strip_vegetation(cloud: &ColoredCloud, b: [f64; 4]) -> Vec<[f64; 3]> {
    vegetation_filter(cloud, DEFAULT_EXG_THRESHOLD)
        .positions()
        .into_iter()
        .filter(|p| p[0] >= b[0] && p[0] <= b[2] && p[1] >= b[1] && p[1] <= b[3])
        .collect()
}

#[test]
fn subsampled_cloud_registers_to_identity() {
    let c = case(3);
    let b = c.strip;
    let mut sub = c.uav.clone();
    sub.points = c
        .uav
        .points
        .iter()
        .enumerate()
        .filter(|(i, p)| i % 2 == 0 && p.pos[0] >= b[0] && p.pos[0] <= b[2] && p.pos[1] >= b[1] && p.pos[1] <= b[3])
        .map(|(_, p)| p.clone())
        .collect();
    let cfg = RegisterConfig::default();
    let r = register(&c.uav, &sub, &cfg).unwrap();
    let veg = strip_vegetation(&c.uav, b);
    let err = rms_between(&veg, &r.transform, &AffineTransform3D::identity());
    assert!(err < cfg.cell_size, "identity error {err}");

    let mut crop = c.uav.clone();
    crop.points.retain(|p| p.pos[0] >= b[0] && p.pos[0] <= b[2] && p.pos[1] >= b[1] && p.pos[1] <= b[3]);
    let r = register(&c.uav, &crop, &cfg).unwrap();
    assert!(rms_between(&veg, &r.transform, &AffineTransform3D::identity()) < cfg.cell_size);
    assert!(r.alignment_rmse < cfg.cell_size, "alignment rmse {}", r.alignment_rmse);
}

#[test]
fn planted_misalignment_is_recovered() {
    let c = case(1);
    let r = register(&c.uav, &c.ugv, &RegisterConfig::default()).unwrap();
    assert!(c.vegetation_rmse(&r.transform) < 0.04);
    assert!(c.vegetation_rmse(&r.coarse) > c.vegetation_rmse(&r.transform));
    assert!(r.cpd.nll.windows(2).all(|w| w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0)));
}

#[test]
fn rigid_pre_transform_is_absorbed() {
    let c = case(5);
    let (s, co) = 2f64.to_radians().sin_cos();
    let center = Vector3::new(4.0, 3.75, 0.0);
    let rot = Matrix3::new(co, -s, 0.0, s, co, 0.0, 0.0, 0.0, 1.0);
    let pre = AffineTransform3D::from_parts(rot, center - rot * center + Vector3::new(0.2, -0.1, 0.0));
    let mut moved = c.uav.clone();
    for p in &mut moved.points {
        p.pos = pre.apply(p.pos);
    }
    let r = register(&moved, &c.ugv, &RegisterConfig::default()).unwrap();
    let veg = strip_vegetation(&c.uav, c.strip);
    let err = rms_between(&veg, &r.transform.compose(&pre), &c.truth);
    assert!(err < 0.04, "composed error {err}");
}

#[test]
fn disjoint_clouds_are_unreliable() {
    let c = case(2);
    let mut far = c.ugv.clone();
    for p in &mut far.points {
        p.pos[0] += 50.0;
    }
    assert!(matches!(register(&c.uav, &far, &RegisterConfig::default()), Err(Error::RegistrationUnreliable(_))));
    let empty = ColoredCloud { points: vec![], ..c.ugv.clone() };
    assert!(matches!(register(&c.uav, &empty, &RegisterConfig::default()), Err(Error::RegistrationUnreliable(_))));
}

#[test]
fn transform_text_round_trip() {
    let c = case(0);
    let back = AffineTransform3D::parse(&c.truth.to_text()).unwrap();
    assert_eq!(back, c.truth);
}
