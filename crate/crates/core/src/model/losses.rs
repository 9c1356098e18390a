//! Training objectives and the serving-time ranking score.
//!
//! Three losses drive the streaming trainer:
//!
//! * `loss_fast` — plain multi-task negative log-likelihood over fully
//!   observed labels.
//! * `loss_slow_pu` — the positive-unlabeled correction for labels that
//!   turned positive after a fast sample already trained them as negative:
//!   `-(ln p − ln(1−p))` per missing task, which cancels the earlier
//!   negative-label gradient and applies the positive one. Algebraically,
//!   `loss_fast(0, p) + loss_slow_pu(p) == loss_fast(1, p)`.
//! * `loss_masked` — the first-only objective: log-likelihood restricted to
//!   the unmasked tasks of a sample; masked tasks contribute neither loss
//!   nor gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{TaskKind, TASK_COUNT};

use super::Prediction;

fn check_prob(p: f64, task: TaskKind) -> Result<()> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Numeric {
            place: format!("tower {}", task.name()),
            message: format!("probability {p} outside (0,1)"),
        });
    }
    Ok(())
}

/// Single-task negative log-likelihood term.
pub fn bce_term(label: u8, p: f64) -> f64 {
    if label == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Single-task positive-unlabeled correction term.
pub fn pu_term(p: f64) -> f64 {
    -(p.ln() - (1.0 - p).ln())
}

/// Σ over all tasks of the negative log-likelihood.
pub fn loss_fast(pred: &Prediction, labels: &[u8; TASK_COUNT]) -> Result<f64> {
    let mut total = 0.0;
    for t in TaskKind::ALL {
        let p = pred.per_task[t.index()];
        check_prob(p, t)?;
        total += bce_term(labels[t.index()], p);
    }
    Ok(total)
}

/// Σ over the tasks flagged `missing` of the PU correction term.
pub fn loss_slow_pu(pred: &Prediction, missing: &[bool; TASK_COUNT]) -> Result<f64> {
    if !missing.iter().any(|&m| m) {
        return Err(Error::Empty("slow sample with no missing tasks".into()));
    }
    let mut total = 0.0;
    for t in TaskKind::ALL {
        if !missing[t.index()] {
            continue;
        }
        let p = pred.per_task[t.index()];
        check_prob(p, t)?;
        total += pu_term(p);
    }
    Ok(total)
}

/// Negative log-likelihood over unmasked tasks only.
pub fn loss_masked(
    pred: &Prediction,
    labels: &[u8; TASK_COUNT],
    mask: &[bool; TASK_COUNT],
) -> Result<f64> {
    let mut total = 0.0;
    for t in TaskKind::ALL {
        if !mask[t.index()] {
            continue;
        }
        let p = pred.per_task[t.index()];
        check_prob(p, t)?;
        total += bce_term(labels[t.index()], p);
    }
    Ok(total)
}

/// Per-task exponents for the serving-time score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankWeights {
    pub per_task: [f64; TASK_COUNT],
}

impl Default for RankWeights {
    fn default() -> Self {
        RankWeights {
            per_task: [1.0; TASK_COUNT],
        }
    }
}

/// Π over tasks of (1 + p)^w — the multiplicative ranking score.
pub fn ranking_score(pred: &Prediction, weights: &RankWeights) -> f64 {
    TaskKind::ALL
        .iter()
        .map(|t| (1.0 + pred.per_task[t.index()]).powf(weights.per_task[t.index()]))
        .product()
}
