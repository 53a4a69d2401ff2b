use std::sync::OnceLock;

use geomatch_wasm::{Demo, DEMO_N};
use serde_json::Value;

fn demo() -> &'static Demo {
    static D: OnceLock<Demo> = OnceLock::new();
    D.get_or_init(|| Demo::build(7).unwrap())
}

fn parse(s: String) -> Value {
    serde_json::from_str(&s).unwrap()
}

#[test]
fn locations_and_people_are_listed() {
    let locs = parse(demo().locations());
    assert_eq!(locs["locations"].as_array().unwrap().len(), 8);
    assert!(locs["cv_r_squared"].as_f64().unwrap() > 0.0);
    let p = parse(demo().person(0).unwrap());
    assert!(p["profile"]["age"].is_number());
    assert!(demo().person(DEMO_N).is_err());
}

#[test]
fn recommend_respects_exclusions_and_order() {
    let first = parse(demo().recommend(3, &[], 3).unwrap());
    let top = first["recommendations"][0]["location_id"].as_u64().unwrap() as u32;
    let again = parse(demo().recommend(3, &[top], 3).unwrap());
    let recs = again["recommendations"].as_array().unwrap();
    assert!(recs.iter().all(|r| r["location_id"].as_u64().unwrap() as u32 != top));
    let values: Vec<f64> = recs.iter().map(|r| r["predicted_value"].as_f64().unwrap()).collect();
    assert!(values.windows(2).all(|w| w[0] >= w[1]));
    assert!(demo().recommend(3, &(1..=8).collect::<Vec<_>>(), 3).is_err());
    assert!(demo().recommend(3, &[], 0).is_err());
}

#[test]
fn simulate_is_deterministic_and_bounded() {
    let a = demo().simulate(0.3, 3, 3, 5).unwrap();
    assert_eq!(a, demo().simulate(0.3, 3, 3, 5).unwrap());
    assert!(parse(a)["cohort_gain"]["mean"].is_number());
    let zero = parse(demo().simulate(0.0, 0, 3, 2).unwrap());
    assert_eq!(zero["cohort_gain"]["mean"].as_f64().unwrap(), 0.0);
    assert!(demo().simulate(0.3, 3, 3, 0).is_err());
}
