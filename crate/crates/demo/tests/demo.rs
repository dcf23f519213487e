use serde_json::Value;

use flowcast_demo::{complete_demo, forecast_demo, update_demo};

fn parse(s: &str) -> Value {
    let v: Value = serde_json::from_str(s).unwrap();
    assert!(v.get("error").is_none(), "{s}");
    v
}

fn floats(v: &Value, key: &str) -> Vec<f64> {
    v[key].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

#[test]
fn forecast_returns_both_curves() {
    let v = parse(&forecast_demo(1, 0.6, 2));
    assert_eq!(floats(&v, "history").len(), 42);
    for key in ["truth", "arma", "ar"] {
        assert_eq!(floats(&v, key).len(), 7, "{key}");
    }
    assert!(v["res_arma"].as_f64().unwrap().is_finite());
    assert_eq!(forecast_demo(1, 0.6, 2), forecast_demo(1, 0.6, 2));
}

#[test]
fn update_keeps_the_observed_prefix() {
    let v = parse(&update_demo(3, 0.25, 0));
    let prefix = v["prefix"].as_u64().unwrap() as usize;
    assert_eq!(prefix, 6);
    let (truth, updated) = (floats(&v, "truth"), floats(&v, "updated"));
    assert_eq!(truth.len(), 24);
    assert_eq!(&truth[..prefix], &updated[..prefix]);
}

#[test]
fn completion_band_is_zero_on_observed_slots() {
    let v = parse(&complete_demo(5, 0.3, 1));
    let prefix = v["prefix"].as_u64().unwrap() as usize;
    let sd = floats(&v, "sd");
    assert!(sd[..prefix].iter().all(|&s| s == 0.0));
    assert!(sd[prefix..].iter().all(|&s| s > 0.0));
    let rank = v["effective_rank"].as_u64().unwrap();
    assert!((1..=10).contains(&rank), "rank {rank}");
    assert!(!floats(&v, "elbo").is_empty());
}

#[test]
fn bad_input_becomes_an_error_object() {
    let v: Value = serde_json::from_str(&forecast_demo(0, -1.0, 0)).unwrap();
    assert!(v["error"].is_string(), "{v}");
}
