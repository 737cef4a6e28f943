//! Reports rebuilt from a finished run directory.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analytics::{MetricLog, PresenceHistogram};
use crate::error::{Error, Result};
use crate::experiment::run::{DECAY_FILE, METRICS_FILE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunAnalysis {
    pub rows: usize,
    pub iterations: usize,
    pub best_val_loss: Option<f64>,
    pub last_val_loss: Option<f64>,
    pub mean_similarity: Option<f64>,
    pub mean_similarity_after_first: Option<f64>,
    pub final_residual: Option<f64>,
    /// `(iteration, similarity, residual)` per logged iteration.
    pub trajectory: Vec<(usize, f64, f64)>,
    pub decay: Option<PresenceHistogram>,
}

pub fn analyze_log(log: &MetricLog) -> RunAnalysis {
    let sims = log.similarities();
    let mean = |s: &[f64]| (!s.is_empty()).then(|| s.iter().sum::<f64>() / s.len() as f64);
    let trajectory: Vec<(usize, f64, f64)> = log
        .rows()
        .iter()
        .filter_map(|r| Some((r.k?, r.similarity?, r.residual?)))
        .collect();
    RunAnalysis {
        rows: log.len(),
        iterations: trajectory.len(),
        best_val_loss: log.best_val_loss(),
        last_val_loss: log.rows().iter().rev().find_map(|r| r.val_loss_pruned),
        mean_similarity: mean(&sims),
        mean_similarity_after_first: sims.get(1..).and_then(mean),
        final_residual: log.last_residual(),
        trajectory,
        decay: None,
    }
}

/// Reads `metrics.csv` and, if present, `decay.json` from `dir`.
pub fn analyze_run(dir: &Path) -> Result<RunAnalysis> {
    let path = dir.join(METRICS_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut analysis = analyze_log(&MetricLog::from_csv(&text)?);
    let decay_path = dir.join(DECAY_FILE);
    if decay_path.exists() {
        let text = fs::read_to_string(&decay_path).map_err(|e| Error::io(&decay_path, e))?;
        analysis.decay = Some(serde_json::from_str(&text)?);
    }
    Ok(analysis)
}
