//! Per-evaluation metrics rows and their CSV files.

use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const METRICS_COLUMNS: [&str; 12] = [
    "step",
    "eval_return",
    "eval_success",
    "critic_loss",
    "actor_loss",
    "density_loss",
    "priority_mean",
    "priority_max",
    "w_lcb_mean",
    "a_lcb_mean",
    "beta",
    "wall_ms",
];

/// One evaluation record. Diagnostics are averages since the previous row;
/// they are 0 before learning starts.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub eval_return: f64,
    pub eval_success: f64,
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub density_loss: f64,
    pub priority_mean: f64,
    pub priority_max: f64,
    pub w_lcb_mean: f64,
    pub a_lcb_mean: f64,
    pub beta: f64,
    /// Milliseconds since the start of training; 0 unless timing is enabled.
    pub wall_ms: u64,
}

impl MetricsRow {
    pub fn check_finite(&self) -> Result<()> {
        let values = [
            ("eval_return", self.eval_return),
            ("eval_success", self.eval_success),
            ("critic_loss", self.critic_loss),
            ("actor_loss", self.actor_loss),
            ("density_loss", self.density_loss),
            ("priority_mean", self.priority_mean),
            ("priority_max", self.priority_max),
            ("w_lcb_mean", self.w_lcb_mean),
            ("a_lcb_mean", self.a_lcb_mean),
            ("beta", self.beta),
        ];
        match values.iter().find(|(_, v)| !v.is_finite()) {
            Some((name, _)) => Err(Error::non_finite(format!("metric {name}"))),
            None => Ok(()),
        }
    }
}

/// `{env}_{mode}_{seed}.csv`
pub fn metrics_file_name(env: &str, mode: &str, seed: u64) -> String {
    format!("{env}_{mode}_{seed}.csv")
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    if rows.is_empty() {
        w.write_record(METRICS_COLUMNS)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    if header != METRICS_COLUMNS {
        return Err(Error::Format {
            kind: "metrics",
            reason: format!("unexpected header {header:?}"),
        });
    }
    r.deserialize().map(|row| Ok(row?)).collect()
}
