//! Browser bindings for the demo page in `www/`.
//!
//! Every export takes plain numbers/strings and returns JSON or a flat
//! `Float64Array`, so the page needs no glue beyond the generated module.

use hgkit_core::hyperconv::{build_hypergraph, gridize, Metric, MetricKind};
use hgkit_core::metrics::{evaluate, Detection, EvalOptions, GroundTruth};
use hgkit_core::{eigencam, SeededRng, Tensor};
use serde::Serialize;
use serde::de::DeserializeOwned;
use wasm_bindgen::prelude::*;

fn parse_kind(name: &str) -> Result<MetricKind, String> {
    serde_json::from_value(serde_json::Value::String(name.into()))
        .map_err(|_| format!("unknown metric {name:?}"))
}

fn check_sketch(sketch: &[f64], height: usize, width: usize) -> Result<(), String> {
    if height == 0 || width == 0 || sketch.len() != height * width {
        return Err(format!("sketch has {} cells, expected {height}x{width}", sketch.len()));
    }
    Ok(())
}

#[derive(Serialize)]
struct GridGraph {
    metric: String,
    degrees: Vec<usize>,
    edges: Vec<Vec<usize>>,
    incidences: usize,
}

/// Hypergraph over the cells of a scalar grid. Each cell's feature is its
/// value plus its position scaled by `spatial`, so neighbourhoods mix
/// appearance and location.
#[wasm_bindgen]
pub fn grid_hypergraph(
    sketch: &[f64],
    height: usize,
    width: usize,
    metric: &str,
    percentile: f64,
    spatial: f64,
) -> Result<String, String> {
    check_sketch(sketch, height, width)?;
    let kind = parse_kind(metric)?;
    let plane = height * width;
    let mut data = sketch.to_vec();
    if spatial > 0.0 {
        let scale = spatial / height.max(width).max(1) as f64;
        data.extend((0..plane).map(|i| (i / width) as f64 * scale));
        data.extend((0..plane).map(|i| (i % width) as f64 * scale));
    }
    let c = data.len() / plane;
    let map = Tensor::new(vec![1, c, height, width], data).map_err(|e| e.to_string())?;
    let nodes = gridize(&map).map_err(|e| e.to_string())?;
    let metric = Metric::from_percentile(kind, &nodes, percentile, 0.5, 0).map_err(|e| e.to_string())?;
    let graph = build_hypergraph(&nodes, &metric).map_err(|e| e.to_string())?;
    to_json(&GridGraph {
        metric: metric.to_string(),
        degrees: graph.node_degrees().to_vec(),
        edges: graph.edges().to_vec(),
        incidences: graph.incidences(),
    })
}

/// Eigen-CAM of a synthetic activation: `channels` random mixtures of the
/// sketch, its inverse and noise. Returns `out_h * out_w` values in [0, 1].
#[wasm_bindgen]
pub fn sketch_cam(
    sketch: &[f64],
    height: usize,
    width: usize,
    channels: usize,
    noise: f64,
    seed: u64,
    out_h: usize,
    out_w: usize,
) -> Result<Vec<f64>, String> {
    check_sketch(sketch, height, width)?;
    let mut rng = SeededRng::new(seed);
    let mut data = Vec::with_capacity(channels * sketch.len());
    for _ in 0..channels {
        let (a, b) = (rng.uniform(0.2, 1.0), rng.uniform(0.0, 0.3));
        data.extend(sketch.iter().map(|&s| a * s + b * (1.0 - s) + noise * rng.uniform(-1.0, 1.0)));
    }
    let act = Tensor::new(vec![1, channels, height, width], data).map_err(|e| e.to_string())?;
    let cam = eigencam::eigen_cam(&act, out_h, out_w).map_err(|e| e.to_string())?;
    Ok(cam.heatmap.values().to_vec())
}

fn parse_jsonl<T: DeserializeOwned>(text: &str, what: &str) -> Result<Vec<T>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("{what} line {}: {e}", i + 1)))
        .collect()
}

/// Full metrics report for JSONL detections and ground truth.
#[wasm_bindgen]
pub fn evaluate_jsonl(dets: &str, gts: &str, classes: usize, iou: f64) -> Result<String, String> {
    let dets: Vec<Detection> = parse_jsonl(dets, "detections")?;
    let gts: Vec<GroundTruth> = parse_jsonl(gts, "ground truth")?;
    let opts = EvalOptions { iou, ..EvalOptions::new(classes) };
    let report = evaluate(&dets, &gts, &opts).map_err(|e| e.to_string())?;
    to_json(&report)
}

fn to_json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}
