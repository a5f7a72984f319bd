//! Browser bindings. Each operation takes a JSON parameter object and
//! returns a JSON result; the page in `www/` draws the results.
//!
//! The `api` module holds the plain Rust entry points so they can be tested
//! natively; the exported wrappers only convert errors into JS exceptions.

use wasm_bindgen::prelude::*;

pub mod api;

fn export(r: Result<String, api::DemoError>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

/// Runs the family flow on a small torus and returns its monitors and the
/// final θ on the base.
#[wasm_bindgen]
pub fn run_flow(params: &str) -> Result<String, JsError> {
    export(api::run_flow(params))
}

/// Evaluates iν for a preset deformation on the base grid.
#[wasm_bindgen]
pub fn moment_map(params: &str) -> Result<String, JsError> {
    export(api::moment_map(params))
}

/// Sweeps k and reports the adiabatic defect with its decay rate.
#[wasm_bindgen]
pub fn adiabatic(params: &str) -> Result<String, JsError> {
    export(api::adiabatic(params))
}
