//! Append-only metric log and its CSV encoding.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fine-tuning method tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    AdmmNxm,
    Asp,
    AdmmUnstructured,
    Dense,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::AdmmNxm => "admm-nxm",
            Method::Asp => "asp",
            Method::AdmmUnstructured => "admm-unstructured",
            Method::Dense => "dense",
        }
    }

    pub fn is_admm(self) -> bool {
        matches!(self, Method::AdmmNxm | Method::AdmmUnstructured)
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "admm-nxm" => Ok(Method::AdmmNxm),
            "asp" => Ok(Method::Asp),
            "admm-unstructured" => Ok(Method::AdmmUnstructured),
            "dense" => Ok(Method::Dense),
            other => Err(Error::Config(format!("unknown method `{other}`"))),
        }
    }
}

pub const CSV_HEADER: &str =
    "step,epoch,k,train_loss,aug_loss,val_loss_pruned,residual,similarity,method,seed";

/// One logging event. Fields that do not apply to the event or the method
/// are `None` and serialize as empty CSV fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub step: usize,
    pub epoch: usize,
    pub k: Option<usize>,
    pub train_loss: Option<f64>,
    pub aug_loss: Option<f64>,
    pub val_loss_pruned: Option<f64>,
    /// Largest per-layer relative primal residual `‖W − Z‖ / ‖W‖`.
    pub residual: Option<f64>,
    /// Mean per-layer mask similarity to the previous iteration.
    pub similarity: Option<f64>,
    pub method: Method,
    pub seed: u64,
}

impl MetricRow {
    pub fn new(step: usize, epoch: usize, method: Method, seed: u64) -> Self {
        Self {
            step,
            epoch,
            k: None,
            train_loss: None,
            aug_loss: None,
            val_loss_pruned: None,
            residual: None,
            similarity: None,
            method,
            seed,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricLog {
    rows: Vec<MetricRow>,
}

/// 17 significant digits: enough to round-trip any `f64`.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt_f64(v: Option<f64>) -> String {
    v.map(format_f64).unwrap_or_default()
}

impl MetricLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, row: MetricRow) {
        self.rows.push(row);
    }

    pub fn rows(&self) -> &[MetricRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Lowest validation loss recorded on the pruned copy.
    pub fn best_val_loss(&self) -> Option<f64> {
        self.rows
            .iter()
            .filter_map(|r| r.val_loss_pruned)
            .min_by(f64::total_cmp)
    }

    pub fn similarities(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.similarity).collect()
    }

    pub fn last_residual(&self) -> Option<f64> {
        self.rows.iter().rev().find_map(|r| r.residual)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.rows.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.step,
                r.epoch,
                r.k.map(|k| k.to_string()).unwrap_or_default(),
                opt_f64(r.train_loss),
                opt_f64(r.aug_loss),
                opt_f64(r.val_loss_pruned),
                opt_f64(r.residual),
                opt_f64(r.similarity),
                r.method.as_str(),
                r.seed
            );
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(CSV_HEADER) {
            return Err(Error::Config("metric CSV has an unexpected header".into()));
        }
        let bad = |line: &str| Error::Config(format!("malformed metric row `{line}`"));
        let mut log = MetricLog::new();
        for line in lines.filter(|l| !l.is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 10 {
                return Err(bad(line));
            }
            let opt = |s: &str| -> Result<Option<f64>> {
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse().map(Some).map_err(|_| bad(line))
                }
            };
            log.push(MetricRow {
                step: f[0].parse().map_err(|_| bad(line))?,
                epoch: f[1].parse().map_err(|_| bad(line))?,
                k: if f[2].is_empty() {
                    None
                } else {
                    Some(f[2].parse().map_err(|_| bad(line))?)
                },
                train_loss: opt(f[3])?,
                aug_loss: opt(f[4])?,
                val_loss_pruned: opt(f[5])?,
                residual: opt(f[6])?,
                similarity: opt(f[7])?,
                method: f[8].parse()?,
                seed: f[9].parse().map_err(|_| bad(line))?,
            });
        }
        Ok(log)
    }
}
