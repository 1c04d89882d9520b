//! Quantile binning of continuous exposures into levels `0..Q-1`.
//!
//! Cut points use the order-statistic (type-1) quantile: the cut at
//! probability `p` is the sorted value at 1-based index `ceil(p * n)`.
//! A value equal to a cut point goes to the lower bin.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinEdges {
    pub q: u32,
    pub edges: Vec<f64>,
}

impl BinEdges {
    pub fn new(q: u32, edges: Vec<f64>) -> Result<Self> {
        if q < 2 {
            return Err(Error::Quantize(format!("Q must be at least 2, got {q}")));
        }
        if edges.len() != q as usize - 1 {
            return Err(Error::Quantize(format!(
                "expected {} cut points for Q = {q}, got {}",
                q - 1,
                edges.len()
            )));
        }
        if edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Quantize("cut points must be finite and strictly increasing".into()));
        }
        Ok(BinEdges { q, edges })
    }

    /// Number of cut points strictly below `v`.
    pub fn level(&self, v: f64) -> u32 {
        self.edges.partition_point(|&e| e < v) as u32
    }
}

pub fn fit_bins(values: &[f64], q: u32) -> Result<BinEdges> {
    if q < 2 {
        return Err(Error::Quantize(format!("Q must be at least 2, got {q}")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Quantize("exposure values must be finite".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let degenerate = || Error::Quantize(format!("cannot form {q} non-degenerate bins"));

    let mut distinct = sorted.clone();
    distinct.dedup();
    if distinct.len() < q as usize {
        return Err(degenerate());
    }

    let q = q as usize;
    let edges: Vec<f64> = (1..q)
        .map(|k| {
            let idx = (k * n).div_ceil(q);
            sorted[idx - 1]
        })
        .collect();
    if edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(degenerate());
    }
    Ok(BinEdges { q: q as u32, edges })
}

pub fn apply_bins(values: &[f64], bins: &BinEdges) -> Vec<u32> {
    values.iter().map(|&v| bins.level(v)).collect()
}

/// Fits and applies bins column by column on a row-major `n x p` matrix.
pub fn quantize_columns(values: &[f64], n_cols: usize, q: u32) -> Result<(Vec<u32>, Vec<BinEdges>)> {
    if n_cols == 0 || !values.len().is_multiple_of(n_cols) {
        return Err(Error::Quantize("matrix shape does not match column count".into()));
    }
    let n = values.len() / n_cols;
    let mut levels = vec![0u32; values.len()];
    let mut all_bins = Vec::with_capacity(n_cols);
    for c in 0..n_cols {
        let col: Vec<f64> = (0..n).map(|i| values[i * n_cols + c]).collect();
        let bins = fit_bins(&col, q).map_err(|e| Error::Quantize(format!("column {c}: {e}")))?;
        for (i, &v) in col.iter().enumerate() {
            levels[i * n_cols + c] = bins.level(v);
        }
        all_bins.push(bins);
    }
    Ok((levels, all_bins))
}
