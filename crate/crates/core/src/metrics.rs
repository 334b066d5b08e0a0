//! Normalized-RMS FIT scores and their Monte Carlo summaries.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn fit(estimate: &[f64], truth: &[f64], what: &str) -> Result<f64> {
    if estimate.len() != truth.len() || truth.is_empty() {
        return Err(Error::Dimension(format!(
            "{what}: estimate has {} points, truth has {}",
            estimate.len(),
            truth.len()
        )));
    }
    if estimate.iter().chain(truth).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{what} inputs")));
    }
    let n = truth.len() as f64;
    let mean = truth.iter().sum::<f64>() / n;
    let err: f64 = estimate.iter().zip(truth).map(|(e, t)| (t - e) * (t - e)).sum();
    let spread: f64 = truth.iter().map(|t| (t - mean) * (t - mean)).sum();
    if spread == 0.0 {
        return Err(Error::InvalidSignal(format!("{what}: true signal is constant")));
    }
    Ok(100.0 * (1.0 - (err / spread).sqrt()))
}

/// `100·(1 − ‖g₀ − ĝ‖ / ‖g₀ − ḡ₀‖)` on a common grid.
pub fn fit_g(g_hat: &[f64], g_true: &[f64]) -> Result<f64> {
    fit(g_hat, g_true, "FIT_g")
}

/// `100·(1 − ‖y₀ − ŷ‖ / ‖y₀ − ȳ₀‖)` over the validation window.
pub fn fit_y(y_hat: &[f64], y0: &[f64]) -> Result<f64> {
    fit(y_hat, y0, "FIT_y")
}

/// Mean and sample standard deviation (`n − 1`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(v: &[f64]) -> Option<Self> {
        if v.is_empty() {
            return None;
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = if v.len() < 2 {
            0.0
        } else {
            (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Some(Self { mean, std })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialFit {
    pub trial: usize,
    pub fit_g: f64,
    pub fit_y: f64,
}

/// Per-trial FIT values of one Monte Carlo campaign plus trials that
/// produced no score.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub trials: Vec<TrialFit>,
    pub missing: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub trials: usize,
    pub missing: Vec<usize>,
    pub partial: bool,
    pub fit_g: MeanStd,
    pub fit_y: MeanStd,
}

impl FitReport {
    pub fn push(&mut self, row: TrialFit) {
        self.trials.push(row);
    }

    pub fn fit_g(&self) -> Vec<f64> {
        self.trials.iter().map(|t| t.fit_g).collect()
    }

    pub fn fit_y(&self) -> Vec<f64> {
        self.trials.iter().map(|t| t.fit_y).collect()
    }

    pub fn summary(&self) -> Result<FitSummary> {
        let (Some(fit_g), Some(fit_y)) = (MeanStd::of(&self.fit_g()), MeanStd::of(&self.fit_y())) else {
            return Err(Error::Config("no scored trials to summarize".into()));
        };
        Ok(FitSummary {
            trials: self.trials.len(),
            missing: self.missing.clone(),
            partial: !self.missing.is_empty(),
            fit_g,
            fit_y,
        })
    }

    /// Rows `trial,fit_g,fit_y`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for row in &self.trials {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let trials = r.deserialize().collect::<std::result::Result<Vec<TrialFit>, _>>()?;
        Ok(Self { trials, missing: Vec::new() })
    }

    pub fn write_summary_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(&mut f, &self.summary()?)?;
        writeln!(f)?;
        Ok(())
    }
}
