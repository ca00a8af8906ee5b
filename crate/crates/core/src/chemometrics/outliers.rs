use serde::{Deserialize, Serialize};
use std::io::Write;

use super::pca::{pca_fit, ComponentSelector, PcaModel};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Empirical quantile with linear interpolation between order statistics.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Per-spectrum statistics and the thresholds used to reject outliers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierReport {
    pub t2: Vec<f64>,
    pub q: Vec<f64>,
    pub kept: Vec<bool>,
    pub t2_threshold: f64,
    pub q_threshold: f64,
    pub n_components: usize,
    pub confidence: f64,
}

impl OutlierReport {
    pub fn n_rejected(&self) -> usize {
        self.kept.iter().filter(|k| !**k).count()
    }

    pub fn rejected_fraction(&self) -> f64 {
        self.n_rejected() as f64 / self.kept.len().max(1) as f64
    }

    /// CSV with thresholds in a leading comment line.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "# t2_threshold={:e} q_threshold={:e} n_components={} confidence={}",
            self.t2_threshold, self.q_threshold, self.n_components, self.confidence
        )?;
        writeln!(out, "spectrum_index,T2,Q,kept")?;
        for (i, ((t2, q), k)) in self.t2.iter().zip(&self.q).zip(&self.kept).enumerate() {
            writeln!(out, "{i},{t2:e},{q:e},{}", u8::from(*k))?;
        }
        Ok(())
    }
}

/// Result of one rejection pass.
#[derive(Debug, Clone)]
pub struct OutlierOutcome {
    pub kept: Matrix,
    pub report: OutlierReport,
    pub model: PcaModel,
}

impl OutlierOutcome {
    /// Scores `data` against the stored model and thresholds without
    /// refitting; returns the keep flags.
    pub fn reapply(&self, data: &Matrix) -> Result<Vec<bool>> {
        data.iter_rows()
            .map(|row| {
                let p = self.model.project(row)?;
                Ok(p.t2 <= self.report.t2_threshold && p.q <= self.report.q_threshold)
            })
            .collect()
    }
}

/// Hotelling T² vs Q-residual filter with empirical percentile limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutlierFilter {
    pub n_pcs: usize,
    pub confidence: f64,
}

impl Default for OutlierFilter {
    fn default() -> Self {
        Self {
            n_pcs: 10,
            confidence: 0.95,
        }
    }
}

impl OutlierFilter {
    /// Single pass: fit PCA, compute T² and Q for every row, reject rows
    /// above either percentile limit.
    pub fn apply(&self, data: &Matrix) -> Result<OutlierOutcome> {
        if data.rows() <= self.n_pcs {
            return Err(Error::InvalidParameter(format!(
                "outlier removal with {} components needs more than {} spectra",
                self.n_pcs,
                data.rows()
            )));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "confidence {} outside (0, 1)",
                self.confidence
            )));
        }
        let model = pca_fit(data, ComponentSelector::Fixed(self.n_pcs))?;
        let mut t2 = Vec::with_capacity(data.rows());
        let mut q = Vec::with_capacity(data.rows());
        for row in data.iter_rows() {
            let p = model.project(row)?;
            t2.push(p.t2);
            q.push(p.q);
        }
        let t2_threshold = percentile(&t2, self.confidence);
        let q_threshold = percentile(&q, self.confidence);
        let kept: Vec<bool> = t2
            .iter()
            .zip(&q)
            .map(|(&a, &b)| a <= t2_threshold && b <= q_threshold)
            .collect();
        let kept_rows = data.select_rows(&kept);
        if kept_rows.is_empty() {
            return Err(Error::Degenerate(
                "outlier removal rejected every spectrum".into(),
            ));
        }
        Ok(OutlierOutcome {
            kept: kept_rows,
            report: OutlierReport {
                t2,
                q,
                kept,
                t2_threshold,
                q_threshold,
                n_components: model.n_components(),
                confidence: self.confidence,
            },
            model,
        })
    }
}

pub fn remove_outliers(data: &Matrix, n_pcs: usize, confidence: f64) -> Result<OutlierOutcome> {
    OutlierFilter { n_pcs, confidence }.apply(data)
}
