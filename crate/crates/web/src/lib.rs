//! wasm-bindgen entry points for the static demo page in `www/`. Every call
//! returns a JSON string; the `*_json` functions are the native equivalents.

use agrisim::fieldgen::{generate, FieldSpec, Species};
use agrisim::mission::{request_exchange, ChannelConfig};
use agrisim::rownav::{detect_rows, FeatureGrid, SearchGrid, DEFAULT_TOLERANCE};
use agrisim::weedops::NbcModel;
use serde_json::json;
use wasm_bindgen::prelude::*;

const FIELD: f64 = 4.0;

/// Generates a 4×4 m field and recovers its row pattern from the stems alone.
pub fn rows_json(theta_deg: f64, spacing: f64, weed_density: f64, seed: u64) -> Result<String, String> {
    let spec = FieldSpec {
        extent: [FIELD, FIELD],
        row_orientation: theta_deg.to_radians(),
        row_spacing: spacing,
        row_offset: 0.5 * spacing,
        weed_density,
        seed,
        ..Default::default()
    };
    let truth = generate(&spec).map_err(|e| e.to_string())?;
    let stems: Vec<[f64; 2]> = truth.plants.iter().map(|p| p.xy()).collect();
    let grid = FeatureGrid::from_points(&stems, 0.02, [0.0, 0.0], [200, 200]);
    let search = SearchGrid {
        spacing_min: (0.75 * spacing * 100.0).floor() / 100.0,
        spacing_max: (1.25 * spacing * 100.0).ceil() / 100.0,
        ..Default::default()
    };
    let p = detect_rows(&grid, &search, DEFAULT_TOLERANCE).map_err(|e| e.to_string())?;
    let plants: Vec<_> = truth
        .plants
        .iter()
        .map(|p| json!([p.stem[0], p.stem[1], p.radius, p.species == Species::Crop]))
        .collect();
    Ok(json!({
        "extent": FIELD,
        "plants": plants,
        "truth": { "theta": spec.row_orientation, "spacing": spacing, "offset": spec.row_offset },
        "detected": { "theta": p.theta, "spacing": p.spacing, "offset": p.offset, "score": p.score },
    })
    .to_string())
}

/// Label-validation posterior for a tracked plant after its per-frame votes.
pub fn nbc_json(weed_votes: u32, crop_votes: u32, hit_rate: f64, prior_weed: f64, threshold: f64) -> Result<String, String> {
    if !(0.5 < hit_rate && hit_rate < 1.0 && 0.0 < prior_weed && prior_weed < 1.0) {
        return Err("hit rate must be in (0.5, 1) and prior in (0, 1)".into());
    }
    let model = NbcModel { prior_weed, weed_hit: hit_rate, crop_hit: hit_rate };
    let posterior = model.posterior(weed_votes, crop_votes);
    let validated = weed_votes + crop_votes > 0 && posterior > threshold;
    Ok(json!({ "posterior": posterior, "validated": validated }).to_string())
}

/// Runs `n` request/acknowledge exchanges over a lossy link.
pub fn exchange_json(n: usize, drop_probability: f64, seed: u64) -> Result<String, String> {
    if !(0.0..1.0).contains(&drop_probability) {
        return Err("drop probability must be in [0, 1)".into());
    }
    let cfg = ChannelConfig { drop_probability, deadline: None, seed, ..Default::default() };
    let s = request_exchange(n, &cfg).map_err(|e| e.to_string())?;
    Ok(json!({
        "requests": s.requests,
        "succeeded": s.succeeded,
        "timed_out": s.timed_out,
        "retransmissions": s.retransmissions,
        "duplicates": s.duplicates,
        "end_time": s.end_time,
        "effect_once": s.effect_once(),
    })
    .to_string())
}

#[wasm_bindgen]
pub fn rows(theta_deg: f64, spacing: f64, weed_density: f64, seed: u32) -> Result<String, JsError> {
    rows_json(theta_deg, spacing, weed_density, seed.into()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn nbc(weed_votes: u32, crop_votes: u32, hit_rate: f64, prior_weed: f64, threshold: f64) -> Result<String, JsError> {
    nbc_json(weed_votes, crop_votes, hit_rate, prior_weed, threshold).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn exchange(n: u32, drop_probability: f64, seed: u32) -> Result<String, JsError> {
    exchange_json(n as usize, drop_probability, seed.into()).map_err(|e| JsError::new(&e))
}
