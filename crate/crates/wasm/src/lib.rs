//! Browser bindings for the demo page: fit a parabola dataset with a chosen
//! number of groups, render the enumeration risk staircase, and run the
//! certification pipeline — all returning SVG or JSON strings for the page
//! to inject.

use wasm_bindgen::prelude::*;

use cpwl_core::build::BuildConfig;
use cpwl_core::data::{gen_parabola, Loss};
use cpwl_core::pipeline::{build_1d_state, even_count_boundaries};
use cpwl_core::plot::{render_fit_svg, render_risk_staircase_svg};
use cpwl_core::verify::{demonstrate_spurious, enumerate_patterns_1d};

fn js_err(e: cpwl_core::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// Fit-panel SVG: `n` parabola samples on `[lo, hi]` split into `groups`
/// contiguous even-count groups, each fitted by least squares; auxiliary
/// connector segments render dashed.
#[wasm_bindgen]
pub fn fit_panel_svg(n: usize, groups: usize, lo: f64, hi: f64) -> Result<String, JsValue> {
    let ds = gen_parabola(n, lo, hi).map_err(js_err)?;
    let boundaries = even_count_boundaries(&ds, groups).map_err(js_err)?;
    let state =
        build_1d_state(&ds, &boundaries, &Loss::Mse, &BuildConfig::default()).map_err(js_err)?;
    render_fit_svg(&ds, &state.predictor, 640, 400).map_err(js_err)
}

/// Risk staircase SVG over every contiguous fitting pattern with up to
/// `p_max` groups: sorted risks, one dot per pattern; plateaus are
/// equal-risk fitting patterns.
#[wasm_bindgen]
pub fn risk_staircase_svg(n: usize, p_max: usize) -> Result<String, JsValue> {
    let ds = gen_parabola(n, -1.0, 1.0).map_err(js_err)?;
    let table = enumerate_patterns_1d(&ds, p_max, &Loss::Mse).map_err(js_err)?;
    let risks: Vec<f64> = table.rows.iter().map(|r| r.risk).collect();
    render_risk_staircase_svg(&risks, 640, 400).map_err(js_err)
}

/// Enumeration summary JSON (row count plus distinct risk levels).
#[wasm_bindgen]
pub fn enumerate_summary_json(n: usize, p_max: usize) -> Result<String, JsValue> {
    let ds = gen_parabola(n, -1.0, 1.0).map_err(js_err)?;
    let table = enumerate_patterns_1d(&ds, p_max, &Loss::Mse).map_err(js_err)?;
    let risks: Vec<f64> = table.rows.iter().map(|r| r.risk).collect();
    serde_json::to_string_pretty(&serde_json::json!({
        "rows": table.rows.len(),
        "p_max": p_max,
        "distinct_risk_levels": table.distinct_levels,
        "min_risk": risks.iter().copied().fold(f64::INFINITY, f64::min),
        "max_risk": risks.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }))
    .map_err(|e| JsValue::from_str(&e.to_string()))
}

/// Full pipeline on the parabola dataset: build the network for `groups`
/// groups, probe it with `trials` seeded perturbations, refine, and return
/// the certification report JSON.
#[wasm_bindgen]
pub fn certify_json(n: usize, groups: usize, trials: usize, seed: u64) -> Result<String, JsValue> {
    let ds = gen_parabola(n, -1.0, 1.0).map_err(js_err)?;
    let boundaries = even_count_boundaries(&ds, groups).map_err(js_err)?;
    let state =
        build_1d_state(&ds, &boundaries, &Loss::Mse, &BuildConfig::default()).map_err(js_err)?;
    let report = demonstrate_spurious(&state, &ds, &Loss::Mse, trials, seed).map_err(js_err)?;
    serde_json::to_string_pretty(&report).map_err(|e| JsValue::from_str(&e.to_string()))
}
