//! Python bindings over the livectr core: simulate, assemble, train,
//! score, and the individual losses and metrics.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use livectr_core::config::RunConfig;
use livectr_core::metrics::{self, ScoredExample};
use livectr_core::model::{
    self, bce_term, pu_term, ObjectiveMode, Prediction, RankWeights,
};
use livectr_core::pipeline;
use livectr_core::sim;
use livectr_core::streaming::{self, PolicyKind, ReportPolicy};
use livectr_core::types::{TaskKind, TASK_COUNT};

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn parse_run_config(config_json: Option<&str>) -> PyResult<RunConfig> {
    let config: RunConfig = match config_json {
        Some(text) => serde_json::from_str(text).map_err(err)?,
        None => RunConfig::default(),
    };
    config.validate().map_err(err)?;
    Ok(config)
}

fn parse_policy(name: &str, fast_window: f64, slow_window: f64, tick: f64) -> PyResult<ReportPolicy> {
    let kind = match name {
        "exit_report" | "exit-report" | "exit" => PolicyKind::ExitReport,
        "fast_slow" | "fast-slow" => PolicyKind::FastSlow,
        "realtime" | "rt" => PolicyKind::Realtime,
        other => return Err(PyValueError::new_err(format!("unknown policy {other}"))),
    };
    let policy = ReportPolicy {
        kind,
        fast_window,
        slow_window,
        tick,
        realtime_cap: None,
    };
    policy.validate().map_err(err)?;
    Ok(policy)
}

fn prediction_from(values: Vec<f64>) -> PyResult<Prediction> {
    if values.len() != TASK_COUNT {
        return Err(PyValueError::new_err(format!(
            "expected {TASK_COUNT} per-task probabilities, got {}",
            values.len()
        )));
    }
    let mut per_task = [0.0; TASK_COUNT];
    per_task.copy_from_slice(&values);
    Ok(Prediction { per_task })
}

fn task_array<T: Copy + Default>(values: Vec<T>) -> PyResult<[T; TASK_COUNT]> {
    if values.len() != TASK_COUNT {
        return Err(PyValueError::new_err(format!(
            "expected {TASK_COUNT} per-task values, got {}",
            values.len()
        )));
    }
    let mut out = [T::default(); TASK_COUNT];
    out.copy_from_slice(&values);
    Ok(out)
}

/// Task names in the label/mask order used everywhere.
#[pyfunction]
fn task_names() -> Vec<&'static str> {
    TaskKind::ALL.iter().map(|t| t.name()).collect()
}

/// Run the simulator; returns the event log as JSON lines.
#[pyfunction]
#[pyo3(signature = (config_json=None, seed=None))]
fn simulate_events(config_json: Option<&str>, seed: Option<u64>) -> PyResult<String> {
    let mut config = parse_run_config(config_json)?;
    if let Some(seed) = seed {
        config.sim.seed = seed;
    }
    let output = sim::simulate(&config.sim).map_err(err)?;
    let mut out = String::new();
    for e in &output.events {
        out.push_str(&serde_json::to_string(e).map_err(err)?);
        out.push('\n');
    }
    Ok(out)
}

/// Assemble training samples from an event log (JSON lines in, JSON lines out).
#[pyfunction]
#[pyo3(signature = (events_jsonl, policy="realtime", fast_window=300.0, slow_window=3600.0, tick=30.0))]
fn assemble_samples(
    events_jsonl: &str,
    policy: &str,
    fast_window: f64,
    slow_window: f64,
    tick: f64,
) -> PyResult<String> {
    let policy = parse_policy(policy, fast_window, slow_window, tick)?;
    let mut events = Vec::new();
    for (i, line) in events_jsonl.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let event: sim::InteractionEvent = serde_json::from_str(line)
            .map_err(|e| PyValueError::new_err(format!("line {}: {e}", i + 1)))?;
        events.push(event);
    }
    let samples = streaming::assemble(&events, &policy).map_err(err)?;
    let mut out = String::new();
    for s in &samples {
        out.push_str(&serde_json::to_string(s).map_err(err)?);
        out.push('\n');
    }
    Ok(out)
}

/// Σ over tasks of the negative log-likelihood.
#[pyfunction]
fn loss_fast(predictions: Vec<f64>, labels: Vec<u8>) -> PyResult<f64> {
    let pred = prediction_from(predictions)?;
    let labels = task_array(labels)?;
    model::loss_fast(&pred, &labels).map_err(err)
}

/// Positive-unlabeled correction over the flagged tasks.
#[pyfunction]
fn loss_slow_pu(predictions: Vec<f64>, missing: Vec<bool>) -> PyResult<f64> {
    let pred = prediction_from(predictions)?;
    let missing = task_array(missing)?;
    model::loss_slow_pu(&pred, &missing).map_err(err)
}

/// First-only masked log-likelihood.
#[pyfunction]
fn loss_masked(predictions: Vec<f64>, labels: Vec<u8>, mask: Vec<bool>) -> PyResult<f64> {
    let pred = prediction_from(predictions)?;
    let labels = task_array(labels)?;
    let mask = task_array(mask)?;
    model::loss_masked(&pred, &labels, &mask).map_err(err)
}

/// Single-probability helpers for quick identities.
#[pyfunction]
fn bce(label: u8, p: f64) -> f64 {
    bce_term(label, p)
}

#[pyfunction]
fn pu(p: f64) -> f64 {
    pu_term(p)
}

/// Π over tasks of (1 + p)^w.
#[pyfunction]
#[pyo3(signature = (predictions, weights=None))]
fn ranking_score(predictions: Vec<f64>, weights: Option<Vec<f64>>) -> PyResult<f64> {
    let pred = prediction_from(predictions)?;
    let weights = match weights {
        Some(w) => RankWeights {
            per_task: task_array(w)?,
        },
        None => RankWeights::default(),
    };
    Ok(model::ranking_score(&pred, &weights))
}

/// AUC with midrank tie handling; None on single-class input.
#[pyfunction]
fn auc(scores: Vec<f64>, labels: Vec<u8>) -> PyResult<Option<f64>> {
    if scores.len() != labels.len() {
        return Err(PyValueError::new_err("scores and labels differ in length"));
    }
    let examples: Vec<ScoredExample> = scores
        .into_iter()
        .zip(labels)
        .map(|(score, label)| ScoredExample {
            user_id: 0,
            score,
            label,
        })
        .collect();
    Ok(metrics::auc(&examples))
}

/// Example-count-weighted per-user AUC; None when no user has both classes.
#[pyfunction]
fn gauc(user_ids: Vec<u64>, scores: Vec<f64>, labels: Vec<u8>) -> PyResult<Option<f64>> {
    if user_ids.len() != scores.len() || scores.len() != labels.len() {
        return Err(PyValueError::new_err("input lengths differ"));
    }
    let examples: Vec<ScoredExample> = user_ids
        .into_iter()
        .zip(scores.into_iter().zip(labels))
        .map(|(user_id, (score, label))| ScoredExample {
            user_id,
            score,
            label,
        })
        .collect();
    Ok(metrics::gauc(&examples))
}

/// Train a model on an assembled sample stream; returns summary stats.
#[pyfunction]
#[pyo3(signature = (samples_jsonl, mode, config_json=None))]
fn train_on_samples(
    samples_jsonl: &str,
    mode: &str,
    config_json: Option<&str>,
) -> PyResult<BTreeMap<String, f64>> {
    let config = parse_run_config(config_json)?;
    let mode = ObjectiveMode::from_name(mode)
        .ok_or_else(|| PyValueError::new_err(format!("unknown mode {mode}")))?;
    let mut samples = Vec::new();
    for (i, line) in samples_jsonl.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let sample: streaming::TrainingSample = serde_json::from_str(line)
            .map_err(|e| PyValueError::new_err(format!("line {}: {e}", i + 1)))?;
        samples.push(sample);
    }
    let mut params = model::ModelParams::new(model::ModelConfig {
        embed_dim: config.trainer.embed_dim,
        hidden_dim: config.trainer.hidden_dim,
        seed: config.sim.seed,
        ..model::ModelConfig::default()
    });
    let opts = model::TrainOptions {
        learning_rate: config.trainer.learning_rate,
        grad_clip: config.trainer.grad_clip,
        ..model::TrainOptions::default()
    };
    let result = model::train_stream(&mut params, &samples, mode, &opts, |_, s| {
        Ok(model::FeatureVector::new(s.user_id, s.item_id, 0, 0))
    })
    .map_err(err)?;
    let mut out = BTreeMap::new();
    out.insert("steps".into(), result.steps as f64);
    out.insert(
        "final_loss".into(),
        result.trace.last().map(|r| r.loss).unwrap_or(0.0),
    );
    let mean = if result.trace.is_empty() {
        0.0
    } else {
        result.trace.iter().map(|r| r.loss).sum::<f64>() / result.trace.len() as f64
    };
    out.insert("mean_loss".into(), mean);
    Ok(out)
}

/// Run the full policy-comparison experiment; returns the report as JSON.
#[pyfunction]
#[pyo3(signature = (config_json=None, out_dir=None))]
fn compare_policies(config_json: Option<&str>, out_dir: Option<String>) -> PyResult<String> {
    let config = parse_run_config(config_json)?;
    let base = out_dir
        .map(PathBuf::from)
        .unwrap_or_else(std::env::temp_dir);
    let dir = pipeline::run_dir(&base, &config);
    let report = pipeline::run_compare(&config, &dir).map_err(err)?;
    serde_json::to_string_pretty(&report).map_err(err)
}

#[pymodule]
fn livectr(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(task_names, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_events, m)?)?;
    m.add_function(wrap_pyfunction!(assemble_samples, m)?)?;
    m.add_function(wrap_pyfunction!(loss_fast, m)?)?;
    m.add_function(wrap_pyfunction!(loss_slow_pu, m)?)?;
    m.add_function(wrap_pyfunction!(loss_masked, m)?)?;
    m.add_function(wrap_pyfunction!(bce, m)?)?;
    m.add_function(wrap_pyfunction!(pu, m)?)?;
    m.add_function(wrap_pyfunction!(ranking_score, m)?)?;
    m.add_function(wrap_pyfunction!(auc, m)?)?;
    m.add_function(wrap_pyfunction!(gauc, m)?)?;
    m.add_function(wrap_pyfunction!(train_on_samples, m)?)?;
    m.add_function(wrap_pyfunction!(compare_policies, m)?)?;
    Ok(())
}
