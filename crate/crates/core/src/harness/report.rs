use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub seed: u64,
    pub runs: usize,
    pub steps: usize,
    pub attack_start: usize,
    pub step_seconds: f64,
    pub config_digest: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSeries {
    pub estimator: String,
    /// RMSE per step over all runs.
    pub rmse: Vec<f64>,
    /// Steps, summed over runs, where selection could not certify δ sensors.
    pub flagged_steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmseReport {
    pub metadata: ReportMetadata,
    pub series: Vec<EstimatorSeries>,
}

impl RmseReport {
    pub fn get(&self, estimator: &str) -> Option<&EstimatorSeries> {
        self.series.iter().find(|s| s.estimator == estimator)
    }

    /// Long-format CSV: `step,estimator,rmse`, 9 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,estimator,rmse\n");
        for step in 0..self.metadata.steps {
            for s in &self.series {
                if let Some(v) = s.rmse.get(step) {
                    writeln!(out, "{step},{},{v:.8e}", s.estimator).expect("string write");
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ReportFormat {
    #[default]
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(Error::InvalidArgument(format!("unknown format `{other}`"))),
        }
    }
}

pub fn emit_report(report: &RmseReport, path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
    let path = path.as_ref();
    let body = match format {
        ReportFormat::Csv => report.to_csv(),
        ReportFormat::Json => report.to_json() + "\n",
    };
    fs::write(path, body).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn check_lengths(estimates: &[DVector<f64>], truths: &[DVector<f64>]) -> Result<()> {
    if estimates.len() != truths.len() {
        return Err(Error::Dimension {
            what: "estimate series",
            expected: truths.len(),
            found: estimates.len(),
        });
    }
    for (e, t) in estimates.iter().zip(truths) {
        if e.len() != t.len() {
            return Err(Error::Dimension {
                what: "estimate",
                expected: t.len(),
                found: e.len(),
            });
        }
    }
    Ok(())
}

/// Single-run series `√(‖x̂_t − x_t‖² / p)`.
pub fn rmse_series(estimates: &[DVector<f64>], truths: &[DVector<f64>]) -> Result<Vec<f64>> {
    rmse_across_runs(&[estimates.to_vec()], &[truths.to_vec()])
}

/// `√(mean_r ‖x̂_{r,t} − x_{r,t}‖² / p)` for each step `t`.
pub fn rmse_across_runs(estimates: &[Vec<DVector<f64>>], truths: &[Vec<DVector<f64>>]) -> Result<Vec<f64>> {
    if estimates.len() != truths.len() || estimates.is_empty() {
        return Err(Error::Dimension {
            what: "run count",
            expected: truths.len(),
            found: estimates.len(),
        });
    }
    let steps = truths[0].len();
    let mut sums = vec![0.0; steps];
    let mut p = 0;
    for (e, t) in estimates.iter().zip(truths) {
        check_lengths(e, t)?;
        if t.len() != steps {
            return Err(Error::Dimension {
                what: "steps per run",
                expected: steps,
                found: t.len(),
            });
        }
        for (k, (ek, tk)) in e.iter().zip(t).enumerate() {
            sums[k] += (ek - tk).norm_squared();
            p = tk.len();
        }
    }
    let denom = estimates.len() as f64 * p.max(1) as f64;
    Ok(sums.into_iter().map(|s| (s / denom).sqrt()).collect())
}
