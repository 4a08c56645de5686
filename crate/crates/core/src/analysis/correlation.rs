use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::metrics::{mean_tie_ranks, Metric, ScoreTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationMethod {
    Pearson,
    Spearman,
}

impl fmt::Display for CorrelationMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CorrelationMethod::Pearson => "pearson",
            CorrelationMethod::Spearman => "spearman",
        })
    }
}

impl FromStr for CorrelationMethod {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "pearson" => Ok(CorrelationMethod::Pearson),
            "spearman" => Ok(CorrelationMethod::Spearman),
            other => Err(format!("unknown correlation method {other:?} (expected pearson or spearman)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub metrics: Vec<Metric>,
    pub method: CorrelationMethod,
    /// Row-major, `metrics.len()` square. Symmetric with a unit diagonal.
    pub values: Vec<Vec<f64>>,
    /// Metrics whose percentile column is constant; their off-diagonal
    /// entries are reported as 0.
    pub constant: Vec<Metric>,
}

impl CorrelationMatrix {
    pub fn get(&self, a: &Metric, b: &Metric) -> Option<f64> {
        let i = self.metrics.iter().position(|m| m == a)?;
        let j = self.metrics.iter().position(|m| m == b)?;
        Some(self.values[i][j])
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["metric".to_string()];
        header.extend(self.metrics.iter().map(|m| m.to_string()));
        w.write_record(&header)?;
        for (m, row) in self.metrics.iter().zip(&self.values) {
            let mut rec = vec![m.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Pearson correlation, or `None` when either input is constant.
///
/// Written as `sxy / sqrt(sxx * syy)` so that `x` against itself or against
/// an exact reflection gives exactly `1` or `-1`.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman correlation: Pearson on mean-tie ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    pearson(&mean_tie_ranks(x), &mean_tie_ranks(y))
}

/// Pairwise correlations of the table's prototypicality percentiles.
pub fn rank_correlations(table: &ScoreTable, method: CorrelationMethod) -> Result<CorrelationMatrix> {
    let metrics = table.metrics();
    ensure!(metrics.len() >= 2, "need ≥ 2 metrics to correlate, table has {}", metrics.len());
    let columns: Vec<Vec<f64>> = match method {
        CorrelationMethod::Pearson => metrics.iter().map(|m| table.require(m).map(<[f64]>::to_vec)).collect::<Result<_>>()?,
        CorrelationMethod::Spearman => {
            metrics.iter().map(|m| table.require(m).map(mean_tie_ranks)).collect::<Result<_>>()?
        }
    };
    let k = metrics.len();
    let mut values = vec![vec![0.0; k]; k];
    let mut constant = Vec::new();
    for i in 0..k {
        values[i][i] = 1.0;
        if pearson(&columns[i], &columns[i]).is_none() {
            constant.push(metrics[i].clone());
        }
        for j in 0..i {
            let r = pearson(&columns[i], &columns[j]).unwrap_or(0.0);
            values[i][j] = r;
            values[j][i] = r;
        }
    }
    if !constant.is_empty() {
        log::warn!("constant percentile columns reported with zero correlation: {constant:?}");
    }
    Ok(CorrelationMatrix { metrics, method, values, constant })
}
