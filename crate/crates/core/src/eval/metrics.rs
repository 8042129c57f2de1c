use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pairwise (cascade) summation.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 8 {
        return values.iter().sum();
    }
    let (lo, hi) = values.split_at(values.len() / 2);
    pairwise_sum(lo) + pairwise_sum(hi)
}

/// Sorts before summing so the result does not depend on input order.
fn ordered_sum(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    pairwise_sum(&values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub solute: String,
    pub solvent: String,
    pub y_exp: f64,
    pub y_pred: f64,
    /// `y_exp - y_pred`.
    pub delta: f64,
}

impl Residual {
    pub fn new(solute: impl Into<String>, solvent: impl Into<String>, y_exp: f64, y_pred: f64) -> Self {
        Self {
            solute: solute.into(),
            solvent: solvent.into(),
            y_exp,
            y_pred,
            delta: y_exp - y_pred,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub mse: f64,
    pub mae_stderr: f64,
    pub mse_stderr: f64,
}

fn mean_and_stderr(values: Vec<f64>) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = ordered_sum(values.clone()) / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss = ordered_sum(values.iter().map(|x| (x - mean) * (x - mean)).collect());
    (mean, (ss / (n - 1.0)).sqrt() / n.sqrt())
}

/// MAE and MSE with standard errors of the means (sample standard
/// deviation over `sqrt(n)`; zero for a single residual).
pub fn metrics(deltas: &[f64]) -> Result<Metrics> {
    if deltas.is_empty() {
        return Err(Error::contract("metrics need at least one residual"));
    }
    let (mae, mae_stderr) = mean_and_stderr(deltas.iter().map(|d| d.abs()).collect());
    let (mse, mse_stderr) = mean_and_stderr(deltas.iter().map(|d| d * d).collect());
    Ok(Metrics {
        mae,
        mse,
        mae_stderr,
        mse_stderr,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub residuals: Vec<Residual>,
    pub mae: f64,
    pub mse: f64,
    pub mae_stderr: f64,
    pub mse_stderr: f64,
    pub n: usize,
}

impl EvalReport {
    pub fn from_residuals(residuals: Vec<Residual>) -> Result<Self> {
        let deltas: Vec<f64> = residuals.iter().map(|r| r.delta).collect();
        let m = metrics(&deltas)?;
        Ok(Self {
            n: residuals.len(),
            residuals,
            mae: m.mae,
            mse: m.mse,
            mae_stderr: m.mae_stderr,
            mse_stderr: m.mse_stderr,
        })
    }

    pub fn deltas(&self) -> Vec<f64> {
        self.residuals.iter().map(|r| r.delta).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `(bin_center, count)` for half-open bins `[lo + m w, lo + (m + 1) w)`.
    pub bins: Vec<(f64, usize)>,
    pub outside: usize,
    /// Share of all deltas that fall inside `[lo, hi)`.
    pub inside_fraction: f64,
}

impl Histogram {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_center,count\n");
        for (c, n) in &self.bins {
            out.push_str(&format!("{c},{n}\n"));
        }
        out
    }
}

pub fn histogram(deltas: &[f64], bin_width: f64, range: (f64, f64)) -> Result<Histogram> {
    let (lo, hi) = range;
    if !(bin_width > 0.0) || !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::contract(format!("invalid histogram width {bin_width} or range ({lo}, {hi})")));
    }
    let ratio = (hi - lo) / bin_width;
    let n_bins = if (ratio - ratio.round()).abs() < 1e-9 {
        ratio.round() as usize
    } else {
        ratio.ceil() as usize
    }
    .max(1);
    let edge = |m: usize| lo + m as f64 * bin_width;
    let mut counts = vec![0usize; n_bins];
    let mut outside = 0;
    for &d in deltas {
        if !(d >= lo && d < hi) {
            outside += 1;
            continue;
        }
        let mut m = (((d - lo) / bin_width).floor() as usize).min(n_bins - 1);
        while m + 1 < n_bins && d >= edge(m + 1) {
            m += 1;
        }
        while m > 0 && d < edge(m) {
            m -= 1;
        }
        counts[m] += 1;
    }
    let inside = deltas.len() - outside;
    Ok(Histogram {
        bins: counts
            .into_iter()
            .enumerate()
            .map(|(m, c)| (lo + (m as f64 + 0.5) * bin_width, c))
            .collect(),
        outside,
        inside_fraction: if deltas.is_empty() { 0.0 } else { inside as f64 / deltas.len() as f64 },
    })
}
