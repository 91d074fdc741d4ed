use agrisim::fieldgen::{generate, simulate_detections, DetectorParams, Species};
use agrisim::weedops::*;

fn seeded(seed: u64) -> TreatmentScenario {
    let mut s = TreatmentScenario::default();
    s.field.seed = seed;
    s.detector.seed = seed;
    s.treatment.seed = seed;
    s
}

fn overall(rows: &[TreatmentMetrics], speed: f64, roughness: f64) -> f64 {
    let (a, t) = rows
        .iter()
        .filter(|m| m.speed == speed && m.roughness == roughness)
        .fold((0, 0), |(a, t), m| (a + m.attempted, t + m.treated));
    t as f64 / a as f64
}

#[test]
fn compensated_rate_is_nearly_speed_invariant() {
    for seed in 0..3 {
        let s = TreatmentScenario { roughness: vec![0.0], ..seeded(seed) };
        let rows = treatment_sweep(&s).unwrap();
        let rates: Vec<f64> = s.speeds.iter().map(|&v| overall(&rows, v, 0.0)).collect();
        let spread = rates.iter().cloned().fold(f64::MIN, f64::max) - rates.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread <= 0.05, "seed {seed}: {rates:?}");
        assert!(rates.iter().all(|&r| r > 0.85), "seed {seed}: {rates:?}");
    }
}

#[test]
fn roughness_never_raises_the_rate() {
    let s = TreatmentScenario { speeds: vec![0.2], roughness: vec![0.0, 0.001, 0.002, 0.004, 0.008], ..seeded(7) };
    let rows = treatment_sweep(&s).unwrap();
    let rates: Vec<f64> = s.roughness.iter().map(|&r| overall(&rows, 0.2, r)).collect();
    assert!(rates.windows(2).all(|w| w[1] <= w[0]), "{rates:?}");
    assert!(rates[4] < rates[0] - 0.2, "{rates:?}");
}

#[test]
fn perfect_case_holds_on_a_rotated_field() {
    let mut s = TreatmentScenario::default();
    s.field.extent = [12.0, 12.0];
    s.field.row_orientation = 0.7;
    s.field.row_offset = 2.0;
    s.field.row_count = Some(1);
    s.detector = DetectorParams { position_sigma: 0.0, radius_sigma: 0.0, confusion: 0.0, ..Default::default() };
    s.roughness = vec![0.0];
    let truth = generate(&s.field).unwrap();
    let (d, n) = (s.field.row_direction(), s.field.row_normal());
    let mut pass = s.pass(0.3);
    pass.start = [2.0 * n[0] + 3.0 * d[0], 2.0 * n[1] + 3.0 * d[1]];
    pass.duration = 10.0 / 0.3;
    let det = simulate_detections(&truth, &pass, &s.detector);
    let rep = simulate_treatment(&truth, &det, &RobotRun { pass, roughness: 0.0 }, &s.bank, &s.treatment).unwrap();
    assert!(rep.totals().0 > 20, "{:?}", rep.metrics);
    assert_eq!(rep.rate(), 1.0);
    for c in &rep.commands {
        assert!(c.actuation_time - c.fire_time > 0.0);
    }
}

#[test]
fn validated_crops_are_never_targeted_across_seeds() {
    for seed in 0..4 {
        let mut s = seeded(seed);
        s.detector.confusion = 0.2;
        let truth = generate(&s.field).unwrap();
        let pass = s.pass(0.4);
        let det = simulate_detections(&truth, &pass, &s.detector);
        let rep = simulate_treatment(&truth, &det, &RobotRun { pass, roughness: 0.0 }, &s.bank, &s.treatment).unwrap();
        for o in rep.outcomes.iter().filter(|o| o.species == Species::Crop) {
            if o.crop_votes >= o.weed_votes {
                assert!(o.targeted.is_none(), "seed {seed}: {o:?}");
            }
        }
    }
}

#[test]
fn tool_choice_follows_measured_size() {
    let s = seeded(2);
    let truth = generate(&s.field).unwrap();
    let pass = s.pass(0.2);
    let det = simulate_detections(&truth, &pass, &s.detector);
    let rep = simulate_treatment(&truth, &det, &RobotRun { pass, roughness: 0.0 }, &s.bank, &s.treatment).unwrap();
    let stamps = rep.commands.iter().filter(|c| c.tool == ToolKind::Stamp).count();
    let sprays = rep.commands.iter().filter(|c| c.tool == ToolKind::Spray).count();
    assert!(stamps > 50 && sprays > 50, "{stamps} {sprays}");
    let csv = metrics_csv(&rep.metrics);
    assert_eq!(csv.lines().count(), 3);
}
