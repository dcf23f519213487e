//! Browser demo. Each exported function runs one small experiment on
//! seeded synthetic data and returns a JSON string for the page to plot.
//! Failures come back as `{"error": "..."}`.

use serde_json::{json, Value};
use wasm_bindgen::prelude::wasm_bindgen;

use flowcast::forecast::{forecast_from_model, forecast_with, lean_update, prefix_mask, ForecastPlan, DAY_AXIS};
use flowcast::harness::baseline::{ar_extend, DEFAULT_AR_LAGS};
use flowcast::harness::synth::{generate_synthetic, SyntheticSpec};
use flowcast::lrtc::{lrtc_fit, lrtc_predict, LrtcHyperParams};
use flowcast::{cp_fit, relative_residual, AlsConfig, DenseTensor, ObservationMask, Result};

const HORIZON: usize = 7;

fn respond(result: Result<Value>) -> String {
    match result {
        Ok(v) => v.to_string(),
        Err(e) => json!({ "error": e.to_string() }).to_string(),
    }
}

fn daily_totals(t: &DenseTensor, station: usize) -> Vec<f64> {
    let s = t.shape();
    (0..s[1]).map(|d| (0..s[2]).map(|p| t.get(&[station, d, p])).sum()).collect()
}

fn slot_curve(t: &DenseTensor, station: usize, day: usize) -> Vec<f64> {
    (0..t.shape()[2]).map(|p| t.get(&[station, day, p])).collect()
}

fn station_res(estimate: &DenseTensor, truth: &DenseTensor, station: usize, from_slot: usize) -> Result<f64> {
    let mask = ObservationMask::from_fn(truth.shape().to_vec(), |i| i[0] == station && i[2] >= from_slot)?;
    relative_residual(estimate, truth, &mask)
}

fn scenario(seed: u64, weekly_strength: f64) -> SyntheticSpec {
    SyntheticSpec { stations: 8, days: 49, slots: 24, weekly_strength, seed, ..Default::default() }
}

/// Seven-day forecast of station totals: 2D-ARMA against the 8-lag AR.
pub fn forecast_json(seed: u64, weekly_strength: f64, station: usize) -> Result<Value> {
    let data = generate_synthetic(&scenario(seed, weekly_strength))?;
    let t = &data.tensor;
    let train = t.shape()[DAY_AXIS] - HORIZON;
    let station = station.min(t.shape()[0] - 1);
    let history = t.slice_axis(DAY_AXIS, 0, train)?;
    let truth = t.slice_axis(DAY_AXIS, train, train + HORIZON)?;
    let plan = ForecastPlan { horizon_days: HORIZON, rank: 3, als: AlsConfig::new(3).with_seed(seed), ..Default::default() };
    let fit = cp_fit(&history, &plan.als)?;
    let arma = forecast_from_model(&fit.model, &plan)?;
    let ar = forecast_with(&fit.model, HORIZON, |s| ar_extend(s, DEFAULT_AR_LAGS, HORIZON))?;
    Ok(json!({
        "history": daily_totals(&history, station),
        "truth": daily_totals(&truth, station),
        "arma": daily_totals(&arma.tensor, station),
        "ar": daily_totals(&ar.tensor, station),
        "res_arma": station_res(&arma.tensor, &truth, station, 0)?,
        "res_ar": station_res(&ar.tensor, &truth, station, 0)?,
    }))
}

/// Refreshes the first forecast day from an observed prefix of its slots.
pub fn update_json(seed: u64, observed_fraction: f64, station: usize) -> Result<Value> {
    let spec = SyntheticSpec { station_jitter: 0.2, ..scenario(seed, 0.6) };
    let data = generate_synthetic(&spec)?;
    let t = &data.tensor;
    let [l, days, p] = [t.shape()[0], t.shape()[1], t.shape()[2]];
    let station = station.min(l - 1);
    let train = days - HORIZON;
    let history = t.slice_axis(DAY_AXIS, 0, train)?;
    let truth = t.slice_axis(DAY_AXIS, train, train + 1)?;
    let prefix = ((observed_fraction.clamp(0.0, 1.0) * p as f64).ceil() as usize).clamp(1, p - 1);
    let plan = ForecastPlan { horizon_days: HORIZON, rank: 3, als: AlsConfig::new(3).with_seed(seed), ..Default::default() };
    let long = forecast_from_model(&cp_fit(&history, &plan.als)?.model, &plan)?.day(0)?;
    let updated = lean_update(&long, &truth, &prefix_mask(l, p, prefix)?, &long.source_model)?;
    Ok(json!({
        "prefix": prefix,
        "truth": slot_curve(&truth, station, 0),
        "long_term": slot_curve(&long.tensor, station, 0),
        "updated": slot_curve(&updated.tensor, station, 0),
        "res_long": station_res(&long.tensor, &truth, station, prefix)?,
        "res_updated": station_res(&updated.tensor, &truth, station, prefix)?,
    }))
}

/// Completes the rest of the last day, with a share of the earlier cells
/// also hidden, and reports the predictive band for one station.
pub fn complete_json(seed: u64, missing_history: f64, station: usize) -> Result<Value> {
    let spec = SyntheticSpec { stations: 8, days: 14, slots: 24, rank: 2, seed, ..Default::default() };
    let t = generate_synthetic(&spec)?.tensor;
    let [l, days, p] = [t.shape()[0], t.shape()[1], t.shape()[2]];
    let station = station.min(l - 1);
    let prefix = p * 3 / 10;
    let missing = missing_history.clamp(0.0, 0.9);
    let mut state = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) | 1;
    let mut next_unit = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    let mask = ObservationMask::from_fn(t.shape().to_vec(), |i| {
        if i[1] == days - 1 {
            i[2] < prefix
        } else {
            next_unit() >= missing
        }
    })?;
    let hp = LrtcHyperParams { seed, ..Default::default() };
    let post = lrtc_fit(&t, &mask, &hp)?;
    let out = lrtc_predict(&post, &mask, &t)?;
    let sd: Vec<f64> = slot_curve(&out.predictive_variance, station, days - 1).iter().map(|v| v.sqrt()).collect();
    let target = mask.complement().expect("some cells are hidden");
    Ok(json!({
        "prefix": prefix,
        "truth": slot_curve(&t, station, days - 1),
        "imputed": slot_curve(&out.imputed, station, days - 1),
        "sd": sd,
        "effective_rank": out.effective_rank,
        "elbo": post.elbo_trace,
        "res_missing": relative_residual(&out.imputed, &t, &target)?,
    }))
}

#[wasm_bindgen]
pub fn forecast_demo(seed: u32, weekly_strength: f64, station: u32) -> String {
    respond(forecast_json(seed.into(), weekly_strength, station as usize))
}

#[wasm_bindgen]
pub fn update_demo(seed: u32, observed_fraction: f64, station: u32) -> String {
    respond(update_json(seed.into(), observed_fraction, station as usize))
}

#[wasm_bindgen]
pub fn complete_demo(seed: u32, missing_history: f64, station: u32) -> String {
    respond(complete_json(seed.into(), missing_history, station as usize))
}
