use agrisim::fieldgen::{generate, render_grid, sample_cloud, Band, FieldSpec};
use agrisim::ipp::{init_belief, Kernel, Measurement};
use agrisim::posegraph::{dead_reckon, optimize, read_g2o, simulate_drive, write_g2o, DriveSpec, PoseGraph, SolverConfig};
use agrisim::rownav::{component_centroids, detect_rows, line_angle_error, FeatureGrid, SearchGrid, DEFAULT_TOLERANCE};
use agrisim::spectral::{parse_ply, ply_string, vegetation_mask, DEFAULT_EXG_THRESHOLD};
use proptest::prelude::*;

#[test]
fn rendered_field_yields_its_rows() {
    let spec = FieldSpec { extent: [4.0, 4.0], row_orientation: -0.4, row_spacing: 0.6, row_offset: 0.2, seed: 3, ..Default::default() };
    let truth = generate(&spec).unwrap();
    let grid = render_grid(&truth, 0.01, &[Band::Rgb]).unwrap();
    let mask = vegetation_mask(&grid, DEFAULT_EXG_THRESHOLD).unwrap();
    let centroids = component_centroids(&grid, &mask);
    assert!(centroids.len() > truth.crops().count() / 2);
    let features = FeatureGrid::from_points(&centroids, 0.02, [0.0, 0.0], [200, 200]);
    let search = SearchGrid { spacing_min: 0.45, spacing_max: 0.75, ..Default::default() };
    let p = detect_rows(&features, &search, DEFAULT_TOLERANCE).unwrap();
    assert!(line_angle_error(p.theta, -0.4).abs() < 0.5f64.to_radians(), "{p:?}");
    assert!((p.spacing - 0.6).abs() < 0.01, "{p:?}");
}

#[test]
fn surface_cloud_survives_ply() {
    let truth = generate(&FieldSpec { extent: [2.0, 2.0], seed: 8, ..Default::default() }).unwrap();
    let cloud = sample_cloud(&truth, [0.0, 0.0, 2.0, 2.0], 0.05, 0.05, 8).unwrap();
    let back = parse_ply(&ply_string(&cloud)).unwrap();
    assert_eq!(back.len(), cloud.len());
    for (a, b) in cloud.points.iter().zip(&back.points) {
        for k in 0..3 {
            assert!((a.pos[k] - b.pos[k]).abs() <= 5e-7);
            assert!((a.rgb[k] - b.rgb[k]).abs() <= 5e-7);
        }
    }
}

#[test]
fn g2o_round_trip_preserves_the_optimum() {
    let run = simulate_drive(&DriveSpec { nodes: 40, seed: 4, ..Default::default() });
    let mut g = PoseGraph::with_dem(run.dem.clone());
    for n in dead_reckon(&run) {
        g.add_node(n);
    }
    for c in run.constraints.iter().flatten() {
        g.add(c.clone());
    }
    let mut h = read_g2o(&write_g2o(&g), Some(run.dem.clone())).unwrap();
    let a = optimize(&mut g, &SolverConfig::default()).unwrap();
    let b = optimize(&mut h, &SolverConfig::default()).unwrap();
    assert!((a.final_cost - b.final_cost).abs() <= 1e-6 * a.final_cost.max(1.0));
    assert!(a.final_cost < a.initial_cost);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn fusion_never_raises_any_variance(
        z in prop::collection::vec(-1.0f64..1.0, 1..6),
        var in 0.01f64..1.0,
        first in 0usize..14,
    ) {
        let k = Kernel { signal_variance: 1.0, ..Default::default() };
        let mut b = init_belief([5.0, 4.0], 1.0, 0.5, k).unwrap();
        let before: Vec<f64> = (0..b.mean.len()).map(|i| b.cov[(i, i)]).collect();
        let cells: Vec<usize> = (0..z.len()).map(|i| first + i).collect();
        b.fuse(&Measurement { pose: [0.0, 0.0, 1.0], cells, values: z, variance: var }).unwrap();
        for (i, v) in before.iter().enumerate() {
            prop_assert!(b.cov[(i, i)] <= v + 1e-12);
        }
    }
}
