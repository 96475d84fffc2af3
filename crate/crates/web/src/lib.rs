//! Browser bindings for three small demos: sampling a soft permutation under
//! global and entropy-adaptive temperatures, training a sort of user values,
//! and sweeping a global β over a block-ambiguous cost.
//!
//! Each operation has a plain Rust form returning JSON text, wrapped for
//! JavaScript by `wasm_bindgen`.

use permlearn::controller::{build_beta_field, normalized_entropies, BetaField, ControllerConfig};
use permlearn::decode::hungarian;
use permlearn::sinkhorn::{gumbel_sinkhorn, SinkhornConfig};
use permlearn::tasks::{check_beta, log_uniform_grid, proposition1_bounds, BlockAmbiguousSpec, TaskInstance};
use permlearn::tensor::Matrix;
use permlearn::train::{train_instance, AnnealSchedule, Mode, TrainConfig};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct Sample {
    matrix: Vec<Vec<f64>>,
    row_entropy: Vec<f64>,
    row_beta: Vec<f64>,
    col_beta: Vec<f64>,
    decoded: Vec<usize>,
}

#[derive(Serialize)]
struct Comparison {
    global: Sample,
    adaptive: Sample,
}

fn sample(s: &Matrix, field: &BetaField, cfg: &SinkhornConfig) -> Result<Sample, String> {
    let p = gumbel_sinkhorn(s, field, cfg, None, 0)
        .map_err(|e| e.to_string())?
        .into_matrix();
    let (row_entropy, _) = normalized_entropies(&p).map_err(|e| e.to_string())?;
    Ok(Sample {
        row_entropy,
        row_beta: field.row_beta().to_vec(),
        col_beta: field.col_beta().to_vec(),
        decoded: hungarian(&p).map_err(|e| e.to_string())?.as_slice().to_vec(),
        matrix: p.to_rows(),
    })
}

/// Same Gumbel draw under a global and an entropy-adaptive field.
pub fn compare_fields_json(
    scores: &[f64],
    n: usize,
    beta0: f64,
    h0: f64,
    b_max: f64,
    seed: u64,
) -> Result<String, String> {
    let s = Matrix::from_vec(n, n, scores.to_vec()).map_err(|e| e.to_string())?;
    let controller = ControllerConfig {
        h0,
        b_max,
        warmup_steps: 0,
        ..ControllerConfig::default()
    };
    controller.validate().map_err(|e| e.to_string())?;
    let cfg = SinkhornConfig {
        seed,
        ..SinkhornConfig::default()
    };
    let adaptive = build_beta_field(&s, beta0, &controller, 0, &cfg).map_err(|e| e.to_string())?;
    let out = Comparison {
        global: sample(&s, &BetaField::constant(n, beta0), &cfg)?,
        adaptive: sample(&s, &adaptive, &cfg)?,
    };
    Ok(serde_json::to_string(&out).expect("serializable"))
}

#[derive(Serialize)]
struct SortOutcome {
    order: Vec<usize>,
    kendall_tau: f64,
    loss: Vec<f64>,
    min_beta: Vec<f64>,
}

/// Train a sort of `values`; `mode` is `global` or `entropy_adaptive`.
pub fn sort_values_json(values: &[f64], mode: &str, epochs: usize, seed: u64) -> Result<String, String> {
    let mode = match mode {
        "global" => Mode::Global,
        "entropy_adaptive" => Mode::EntropyAdaptive,
        other => return Err(format!("unknown mode '{other}'")),
    };
    if epochs == 0 {
        return Err("epochs must be >= 1".into());
    }
    let inst = TaskInstance::sorting(values).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        epochs,
        seed,
        schedule: AnnealSchedule::linear(0.3, 2.0, epochs),
        ..TrainConfig::sorting()
    };
    let r = train_instance(&inst, &cfg, mode).map_err(|e| e.to_string())?;
    let out = SortOutcome {
        order: r.permutation.order(),
        kendall_tau: r.metrics.kendall_tau,
        loss: r.trace.iter().map(|t| t.loss).collect(),
        min_beta: r.trace.iter().map(|t| t.min_beta).collect(),
    };
    Ok(serde_json::to_string(&out).expect("serializable"))
}

#[derive(Serialize)]
struct SweepPoint {
    beta: f64,
    min_easy_diagonal: f64,
    max_hard_diagonal: f64,
    feasible: bool,
}

#[derive(Serialize)]
struct Sweep {
    beta_lower: f64,
    beta_upper: f64,
    points: Vec<SweepPoint>,
}

/// Diagonal mass of the easy and hard blocks over a log-uniform β grid.
pub fn block_sweep_json(
    n1: usize,
    n2: usize,
    delta_easy: f64,
    delta_hard: f64,
    epsilon: f64,
    eta: f64,
    points: usize,
) -> Result<String, String> {
    let spec = BlockAmbiguousSpec::new(n1, n2, delta_easy, delta_hard);
    let bounds = proposition1_bounds(&spec, epsilon, eta).map_err(|e| e.to_string())?;
    let lo = bounds.beta_lower.min(bounds.beta_upper) / 10.0;
    let hi = bounds.beta_lower.max(bounds.beta_upper) * 10.0;
    let grid = log_uniform_grid(lo, hi, points).map_err(|e| e.to_string())?;
    let points = grid
        .into_iter()
        .map(|beta| {
            let c = check_beta(&spec, epsilon, eta, beta).map_err(|e| e.to_string())?;
            Ok(SweepPoint {
                beta,
                min_easy_diagonal: c.min_easy_diagonal,
                max_hard_diagonal: c.max_hard_diagonal,
                feasible: c.easy_sharp && c.hard_diffuse,
            })
        })
        .collect::<Result<Vec<_>, String>>()?;
    let out = Sweep {
        beta_lower: bounds.beta_lower,
        beta_upper: bounds.beta_upper,
        points,
    };
    Ok(serde_json::to_string(&out).expect("serializable"))
}

#[wasm_bindgen(js_name = compareFields)]
pub fn compare_fields(
    scores: Vec<f64>,
    n: usize,
    beta0: f64,
    h0: f64,
    b_max: f64,
    seed: u32,
) -> Result<String, JsError> {
    compare_fields_json(&scores, n, beta0, h0, b_max, seed.into()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = sortValues)]
pub fn sort_values(values: Vec<f64>, mode: &str, epochs: usize, seed: u32) -> Result<String, JsError> {
    sort_values_json(&values, mode, epochs, seed.into()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = blockSweep)]
pub fn block_sweep(
    n1: usize,
    n2: usize,
    delta_easy: f64,
    delta_hard: f64,
    epsilon: f64,
    eta: f64,
    points: usize,
) -> Result<String, JsError> {
    block_sweep_json(n1, n2, delta_easy, delta_hard, epsilon, eta, points).map_err(|e| JsError::new(&e))
}
