//! Browser bindings. Each export takes and returns JSON text so the page
//! stays framework-free.

use cluster_expansion::combinatorics::{bell_number, cayley_number, enumerate_trees, DEFAULT_TREE_CAP};
use cluster_expansion::config::{RunConfig, QUARTIC_THREE_SITE};
use cluster_expansion::covariance::build_laplacian_covariance;
use cluster_expansion::engine::Engine;
use cluster_expansion::lattice::Lattice;
use cluster_expansion::oracle::decay_fit;
use cluster_expansion::Result;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

/// Engine run on a JSON configuration: `logZ`, partial sums, clusters and
/// any requested correlations.
pub fn expand_json(config: &str) -> Result<Value> {
    let cfg = RunConfig::from_json(config, &[])?;
    let model = cfg.model()?;
    let engine = Engine::new(&model, cfg.expansion.engine())?;
    let result = engine.log_z(&cfg.source_for(&model)?)?;
    let mut doc = serde_json::to_value(&result)?;
    doc["correlations"] = if cfg.correlations.points.is_empty() {
        json!([])
    } else {
        serde_json::to_value(engine.truncated_correlations(&cfg.correlations.points, &cfg.correlations.fd)?)?
    };
    Ok(doc)
}

/// Partition and spanning-tree counts, closed form against enumeration.
pub fn tree_counts_json(max_n: usize) -> Result<Value> {
    let rows: Result<Vec<Value>> = (1..=max_n.min(DEFAULT_TREE_CAP))
        .map(|n| {
            Ok(json!({
                "n": n,
                "bell": bell_number(n),
                "cayley": cayley_number(n),
                "trees_enumerated": enumerate_trees(n, DEFAULT_TREE_CAP)?.count(),
            }))
        })
        .collect();
    Ok(Value::Array(rows?))
}

/// Laplacian covariance on a ring: the row through site 0 and an
/// exponential fit of its decay.
pub fn ring_decay_json(side: usize, mass: f64) -> Result<Value> {
    let lattice = Lattice::torus1d(side, 1)?;
    let cov = build_laplacian_covariance(&lattice, mass)?;
    // stay well short of the antipode, where the ring folds the decay back
    let points: Vec<(f64, f64)> = (0..=(side / 4).max(2))
        .map(|y| (lattice.distance(0, y), cov.entry(0, 0, y, 0).re))
        .collect();
    let fit = decay_fit(&points, 1e-14)?;
    Ok(json!({
        "points": points,
        "fit": fit,
        "decay_mass": cov.decay_mass(),
    }))
}

fn to_js(r: Result<Value>) -> std::result::Result<String, JsValue> {
    r.map(|v| v.to_string()).map_err(|e| JsValue::from_str(&e.to_string()))
}

#[wasm_bindgen]
pub fn expand(config: &str) -> std::result::Result<String, JsValue> {
    to_js(expand_json(config))
}

#[wasm_bindgen]
pub fn tree_counts(max_n: usize) -> std::result::Result<String, JsValue> {
    to_js(tree_counts_json(max_n))
}

#[wasm_bindgen]
pub fn ring_decay(side: usize, mass: f64) -> std::result::Result<String, JsValue> {
    to_js(ring_decay_json(side, mass))
}

#[wasm_bindgen]
pub fn bundled_config() -> String {
    QUARTIC_THREE_SITE.to_string()
}
