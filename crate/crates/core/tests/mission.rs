use agrisim::fieldgen::WeedPatch;
use agrisim::mission::*;
use agrisim::Error;

fn single_area() -> CoordinationScenario {
    let mut sc = CoordinationScenario::default();
    sc.field.weed_patches = vec![WeedPatch { center: [6.0, 6.0], radius: 2.0, density: 20.0 }];
    sc
}

#[test]
fn single_area_lossless_log_has_one_exchange() {
    let sc = single_area();
    let log = coordinated_mission(&sc, 1).unwrap();
    assert_eq!(log.state, TaskState::Succeeded);
    assert_eq!(log.areas.len(), 1);
    assert!(log.all_treated());
    assert_eq!(log.count("uav", "tx:request"), 1);
    assert_eq!(log.count("ugv", "tx:status:received"), 1);
    assert_eq!(log.count("ugv", "tx:status:succeeded"), 1);
    assert_eq!(log.count("uav", "retx:request"), 0);
    assert_eq!(log.count("uav", "rx:status:succeeded"), 1);
    // Causal order of the exchange.
    let at = |agent: &str, ev: &str| log.events.iter().position(|e| e.agent == agent && e.event == ev).unwrap();
    assert!(at("uav", "tx:request") < at("ugv", "rx:request"));
    assert!(at("ugv", "rx:request") < at("ugv", "tx:status:received"));
    assert!(at("ugv", "tx:status:received") < at("ugv", "tx:status:succeeded"));
    let t = &log.treatments[0];
    assert!(t.attempted > 20 && t.treated as f64 >= 0.8 * t.attempted as f64, "{t:?}");
}

#[test]
fn lossy_demo_mission_treats_every_area() {
    let mut sc = CoordinationScenario::default();
    sc.channel.drop_probability = 0.3;
    let log = coordinated_mission(&sc, 2).unwrap();
    assert!(log.succeeded());
    assert!(log.all_treated());
    assert!(log.areas.len() >= 3);
    assert!(log.count("uav", "drop:request") + log.count("ugv", "drop:status:received") + log.count("ugv", "drop:ugv_pose") > 0);
    assert!(log.max_localization_error < 0.2, "{}", log.max_localization_error);
    for p in &sc.field.weed_patches {
        assert!(log.areas.iter().any(|a| a.contains(p.center)), "patch {:?} not flagged", p.center);
    }
}

#[test]
fn disabled_ugv_times_out_and_fails() {
    let mut sc = single_area();
    sc.ugv.enabled = false;
    let log = coordinated_mission(&sc, 1).unwrap();
    assert_eq!(log.state, TaskState::Failed);
    assert!(log.treated.is_empty());
    assert_eq!(log.count("uav", "timeout:request"), 1);
    assert!(log.count("uav", "retx:request") >= 25);
    assert!(log.events.iter().any(|e| e.event == "task:await_treatment:failed"));
}

#[test]
fn total_loss_fails_the_mission() {
    let mut sc = single_area();
    sc.channel.drop_probability = 1.0;
    let log = coordinated_mission(&sc, 1).unwrap();
    assert_eq!(log.state, TaskState::Failed);
    assert_eq!(log.count("ugv", "rx:request"), 0);
}

#[test]
fn deadline_monitor_interrupts_the_mission() {
    let mut sc = single_area();
    sc.deadline = 200.0;
    let log = coordinated_mission(&sc, 1).unwrap();
    assert_eq!(log.state, TaskState::Failed);
    let find = |name: &str, state: TaskState| log.transitions.iter().any(|t| t.task == name && t.to == state);
    assert!(find("deadline", TaskState::Failed));
    assert!(find("uav", TaskState::Interrupted));
    assert!(find("await_treatment", TaskState::Interrupted));
    assert!(!find("await_treatment", TaskState::Succeeded));
}

#[test]
fn mission_log_is_deterministic() {
    let mut sc = single_area();
    sc.channel.drop_probability = 0.3;
    let a = coordinated_mission(&sc, 5).unwrap().csv();
    let b = coordinated_mission(&sc, 5).unwrap().csv();
    assert_eq!(a, b);
    assert!(a.starts_with("time,agent,event,payload_digest\n"));
}

#[test]
fn script_round_trip_and_structural_errors() {
    let sc = CoordinationScenario::default();
    let back = CoordinationScenario::from_json(&sc.to_json()).unwrap();
    assert_eq!(back, sc);
    let partial = CoordinationScenario::from_json(r#"{"channel": {"drop_probability": 0.3}}"#).unwrap();
    assert_eq!(partial.channel.drop_probability, 0.3);
    assert_eq!(partial.tree, default_tree());

    let mut bad = sc.clone();
    bad.tree = TaskSpec::group("parallel", "p", 0, vec![TaskSpec::leaf("s", "survey", 0)]);
    assert!(matches!(CoordinationScenario::from_json(&bad.to_json()), Err(Error::Structural(_))));
    bad.tree = TaskSpec::leaf("x", "fly_to_moon", 0);
    assert!(matches!(coordinated_mission(&bad, 0), Err(Error::Structural(_))));
    assert!(matches!(CoordinationScenario::from_json("{not json"), Err(Error::Parse { .. })));
}

#[test]
fn effect_once_over_many_exchanges() {
    for p in [0.0, 0.3, 0.6] {
        let cfg = ChannelConfig { drop_probability: p, deadline: None, seed: 42, ..Default::default() };
        let s = request_exchange(300, &cfg).unwrap();
        assert!(s.effect_once(), "p = {p}");
        assert_eq!(s.succeeded, 300);
        assert_eq!(s.timed_out, 0);
        if p > 0.0 {
            assert!(s.duplicates > 0);
        }
    }
}
