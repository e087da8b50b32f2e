//! Validation metrics on paired prediction and truth fields.

use std::fmt::Write as _;

use crate::error::{Error, Result};

fn check_pair(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!(
            "prediction has {} values, truth has {}",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Shape("empty fields".into()));
    }
    Ok(())
}

fn squared_error(pred: &[f64], truth: &[f64]) -> f64 {
    pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum()
}

pub fn mse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    Ok(squared_error(pred, truth) / pred.len() as f64)
}

pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    Ok(pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t).abs())
        .sum::<f64>()
        / pred.len() as f64)
}

/// Coefficient of determination about the spatial mean of `truth`.
pub fn r2(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean) * (t - mean)).sum();
    if ss_tot == 0.0 {
        return Err(Error::DegenerateVariance);
    }
    Ok(1.0 - squared_error(pred, truth) / ss_tot)
}

pub fn l2_error(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    Ok(squared_error(pred, truth).sqrt())
}

pub fn relative_error(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    let norm2: f64 = truth.iter().map(|t| t * t).sum();
    if norm2 == 0.0 {
        return Err(Error::DegenerateNorm);
    }
    Ok((squared_error(pred, truth) / norm2).sqrt())
}

/// The five metrics for one field pair or an average over many.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
    pub r2: f64,
    pub l2_error: f64,
    pub relative_error: f64,
}

impl Metrics {
    pub fn compute(pred: &[f64], truth: &[f64]) -> Result<Self> {
        Ok(Self {
            mse: mse(pred, truth)?,
            mae: mae(pred, truth)?,
            r2: r2(pred, truth)?,
            l2_error: l2_error(pred, truth)?,
            relative_error: relative_error(pred, truth)?,
        })
    }

    /// Arithmetic mean of each metric.
    pub fn mean(items: &[Metrics]) -> Self {
        let n = items.len().max(1) as f64;
        let sum = |f: fn(&Metrics) -> f64| items.iter().map(f).sum::<f64>() / n;
        Self {
            mse: sum(|m| m.mse),
            mae: sum(|m| m.mae),
            r2: sum(|m| m.r2),
            l2_error: sum(|m| m.l2_error),
            relative_error: sum(|m| m.relative_error),
        }
    }

    fn write_lines(&self, out: &mut String, prefix: &str) {
        for (key, value) in [
            ("mse", self.mse),
            ("mae", self.mae),
            ("r2", self.r2),
            ("l2_error", self.l2_error),
            ("relative_error", self.relative_error),
        ] {
            let _ = writeln!(out, "{prefix}{key} = {value:.17e}");
        }
    }
}

/// Aggregate metrics plus an optional breakdown by snapshot time.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsReport {
    pub space: String,
    pub n_samples: usize,
    pub overall: Metrics,
    pub per_time: Vec<(f64, Metrics)>,
}

impl MetricsReport {
    /// `key = value` lines; per-time entries are keyed `t[<time>].<metric>`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "space = {}", self.space);
        let _ = writeln!(out, "n_samples = {}", self.n_samples);
        self.overall.write_lines(&mut out, "");
        for (t, m) in &self.per_time {
            m.write_lines(&mut out, &format!("t[{t}]."));
        }
        out
    }
}
