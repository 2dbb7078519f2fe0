//! Final loss, forgetting and cost normalization.
//!
//! Percentages put the Oracle (joint iid training) at 0% and the untouched
//! pre-trained model (Base) at 100%. Training time is a share of the
//! Oracle's total pass count.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ledger::CostLedger;
use crate::trainer::{StrategyKind, TaskReport};

pub const RESULT_SCHEMA_VERSION: u32 = 1;

/// Spans below this are treated as degenerate when normalizing.
pub const MIN_NORMALIZATION_SPAN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeBreakdown {
    pub total: f64,
    pub selecting: f64,
    pub training: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizedMetrics {
    pub final_loss_pct: f64,
    pub forgetting_pct: f64,
    pub time_pct: TimeBreakdown,
}

/// Everything recorded for one strategy and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub schema_version: u32,
    pub strategy: StrategyKind,
    pub seed: u64,
    /// `loss_matrix[a][b]`: test loss on task `b` after training task `a`.
    pub loss_matrix: Vec<Vec<f64>>,
    pub ledger: CostLedger,
    pub final_loss_raw: f64,
    pub forgetting_raw: f64,
    pub task_reports: Vec<TaskReport>,
    #[serde(default)]
    pub normalized: Option<NormalizedMetrics>,
}

fn check_matrix(matrix: &[Vec<f64>]) -> Result<()> {
    let Some(last) = matrix.last() else {
        return Err(Error::usage("loss matrix is empty"));
    };
    if last.len() < matrix.len() {
        return Err(Error::usage("final row must cover every task"));
    }
    for (a, row) in matrix.iter().enumerate() {
        if row.len() <= a {
            return Err(Error::usage(format!(
                "row {a} is missing its diagonal entry"
            )));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::usage(format!("row {a} has non-finite entries")));
        }
    }
    Ok(())
}

/// Mean test loss over all tasks after the last one was trained.
pub fn final_loss_raw(matrix: &[Vec<f64>]) -> Result<f64> {
    check_matrix(matrix)?;
    let last = &matrix[matrix.len() - 1];
    let tasks = matrix.len();
    Ok(last[..tasks].iter().sum::<f64>() / tasks as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForgettingValue {
    pub value: f64,
    /// False when fewer than two tasks were trained and the value is a placeholder 0.
    pub defined: bool,
}

/// Mean over earlier tasks of (final loss - loss right after training that task).
pub fn forgetting_raw(matrix: &[Vec<f64>]) -> Result<ForgettingValue> {
    check_matrix(matrix)?;
    let last = matrix.len() - 1;
    if last == 0 {
        return Ok(ForgettingValue {
            value: 0.0,
            defined: false,
        });
    }
    let sum: f64 = (0..last).map(|t| matrix[last][t] - matrix[t][t]).sum();
    Ok(ForgettingValue {
        value: sum / last as f64,
        defined: true,
    })
}

/// `100 * (raw - oracle) / (base - oracle)`.
pub fn normalize(raw: f64, oracle_raw: f64, base_raw: f64) -> Result<f64> {
    let span = base_raw - oracle_raw;
    if span.is_nan() || span.abs() < MIN_NORMALIZATION_SPAN {
        return Err(Error::usage(format!(
            "cannot normalize: base ({base_raw}) and oracle ({oracle_raw}) coincide"
        )));
    }
    Ok(100.0 * (raw - oracle_raw) / span)
}

/// Forgetting expressed in the same units as the normalized final loss:
/// `100 * forgetting / (base_final - oracle_final)`.
pub fn normalize_forgetting(
    raw_forgetting: f64,
    oracle_final: f64,
    base_final: f64,
) -> Result<f64> {
    let span = base_final - oracle_final;
    if span.is_nan() || span.abs() < MIN_NORMALIZATION_SPAN {
        return Err(Error::usage(format!(
            "cannot normalize forgetting: base ({base_final}) and oracle ({oracle_final}) final losses coincide"
        )));
    }
    Ok(100.0 * raw_forgetting / span)
}

/// Ledger counters as percentages of the Oracle's total.
pub fn normalize_time(ledger: &CostLedger, oracle: &CostLedger) -> Result<TimeBreakdown> {
    if oracle.total() == 0 {
        return Err(Error::usage("oracle ledger is empty"));
    }
    let denom = oracle.total() as f64;
    let selecting = 100.0 * ledger.selecting_passes as f64 / denom;
    let training = 100.0 * ledger.training_passes as f64 / denom;
    Ok(TimeBreakdown {
        total: selecting + training,
        selecting,
        training,
    })
}

/// Fills `result.normalized` from the Oracle and Base runs of the same seed.
///
/// The Oracle re-trains jointly at every task and has no task sequence to
/// forget, so its forgetting is 0% by definition.
pub fn normalize_result(
    result: &mut ExperimentResult,
    oracle: &ExperimentResult,
    base: &ExperimentResult,
) -> Result<()> {
    let final_loss_pct = normalize(
        result.final_loss_raw,
        oracle.final_loss_raw,
        base.final_loss_raw,
    )?;
    let forgetting_pct = if result.strategy == StrategyKind::Oracle {
        0.0
    } else {
        normalize_forgetting(
            result.forgetting_raw,
            oracle.final_loss_raw,
            base.final_loss_raw,
        )?
    };
    let time_pct = normalize_time(&result.ledger, &oracle.ledger)?;
    result.normalized = Some(NormalizedMetrics {
        final_loss_pct,
        forgetting_pct,
        time_pct,
    });
    Ok(())
}
