//! Posterior summaries: local mixture effects, equal-tailed credible
//! intervals, sign flags, weighted pooling, and WAIC.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::PosteriorDraws;
use crate::error::{Error, Result};

/// Per-draw, per-region mixture effect, laid out `[draw][region]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiDraws {
    pub n_draws: usize,
    pub n_regions: usize,
    pub values: Vec<f64>,
}

impl PsiDraws {
    pub fn column(&self, r: usize) -> Vec<f64> {
        (0..self.n_draws).map(|d| self.values[d * self.n_regions + r]).collect()
    }
}

/// `psi(r) = sum_{p >= 1} beta_p(r)` in every draw; the intercept is excluded.
pub fn mixture_effect_draws(draws: &PosteriorDraws) -> PsiDraws {
    let rn = draws.n_regions;
    let mut values = Vec::with_capacity(draws.n_draws * rn);
    for d in 0..draws.n_draws {
        for r in 0..rn {
            let mut s = 0.0;
            for p in 1..draws.n_coef {
                s += draws.beta(d, p, r);
            }
            values.push(s);
        }
    }
    PsiDraws {
        n_draws: draws.n_draws,
        n_regions: rn,
        values,
    }
}

/// Coefficient `p` across draws, laid out like [`PsiDraws`].
pub fn coefficient_draws(draws: &PosteriorDraws, p: usize) -> PsiDraws {
    let rn = draws.n_regions;
    PsiDraws {
        n_draws: draws.n_draws,
        n_regions: rn,
        values: (0..draws.n_draws)
            .flat_map(|d| (0..rn).map(move |r| draws.beta(d, p, r)))
            .collect(),
    }
}

/// Type-7 (linear interpolation) sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "quantile of empty sample");
    let h = (n - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignFlag {
    Negative,
    Positive,
    Indeterminate,
}

impl fmt::Display for SignFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SignFlag::Negative => "negative",
            SignFlag::Positive => "positive",
            SignFlag::Indeterminate => "indeterminate",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalSummary {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
    pub sign: SignFlag,
}

impl IntervalSummary {
    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }
}

/// Mean and equal-tailed interval at `level` of a sample (at least 2 values).
pub fn summarize_sample(values: &[f64], level: f64) -> IntervalSummary {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let tail = 0.5 * (1.0 - level);
    let lower = quantile_sorted(&sorted, tail);
    let upper = quantile_sorted(&sorted, 1.0 - tail);
    let sign = if upper < 0.0 {
        SignFlag::Negative
    } else if lower > 0.0 {
        SignFlag::Positive
    } else {
        SignFlag::Indeterminate
    };
    IntervalSummary {
        mean: values.iter().sum::<f64>() / values.len() as f64,
        lower,
        upper,
        sign,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSummary {
    pub level: f64,
    pub regions: Vec<IntervalSummary>,
}

pub fn summarize(psi: &PsiDraws, level: f64) -> Result<MixtureSummary> {
    if psi.n_draws < 2 {
        return Err(Error::Posterior("need at least 2 draws to summarize".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Posterior(format!("credible level {level} outside (0, 1)")));
    }
    Ok(MixtureSummary {
        level,
        regions: (0..psi.n_regions)
            .map(|r| summarize_sample(&psi.column(r), level))
            .collect(),
    })
}

/// Per-draw weighted average over regions, then summarized. `None` weights
/// every region equally.
pub fn pooled_effect(psi: &PsiDraws, weights: Option<&[f64]>, level: f64) -> Result<IntervalSummary> {
    if psi.n_draws < 2 {
        return Err(Error::Posterior("need at least 2 draws to summarize".into()));
    }
    let uniform;
    let w = match weights {
        Some(w) => {
            if w.len() != psi.n_regions {
                return Err(Error::Posterior(format!(
                    "{} weights for {} regions",
                    w.len(),
                    psi.n_regions
                )));
            }
            w
        }
        None => {
            uniform = vec![1.0; psi.n_regions];
            &uniform
        }
    };
    if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::Posterior("weights must be finite and non-negative".into()));
    }
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Posterior("weights must have a positive sum".into()));
    }
    let norm: Vec<f64> = w.iter().map(|v| v / total).collect();
    let pooled: Vec<f64> = (0..psi.n_draws)
        .map(|d| {
            let row = &psi.values[d * psi.n_regions..(d + 1) * psi.n_regions];
            row.iter().zip(&norm).map(|(v, k)| v * k).sum()
        })
        .collect();
    Ok(summarize_sample(&pooled, level))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waic {
    pub waic: f64,
    pub lppd: f64,
    pub p_waic: f64,
}

/// WAIC from a `[draw][observation]` log-density matrix:
/// `lppd = sum_i log mean_d exp(ll_di)`, `p_waic = sum_i var_d(ll_di)`
/// (divisor `n_draws - 1`), `waic = -2 (lppd - p_waic)`.
pub fn waic(loglik: &[f64], n_draws: usize, n_obs: usize) -> Result<Waic> {
    if n_draws < 2 {
        return Err(Error::Posterior("WAIC needs at least 2 draws".into()));
    }
    if loglik.len() != n_draws * n_obs {
        return Err(Error::Posterior("log-likelihood matrix has the wrong size".into()));
    }
    if loglik.iter().any(|v| !v.is_finite()) {
        return Err(Error::Posterior("log-likelihood contains non-finite values".into()));
    }
    let mut lppd = 0.0;
    let mut p_waic = 0.0;
    let mut col = vec![0.0; n_draws];
    for i in 0..n_obs {
        for d in 0..n_draws {
            col[d] = loglik[d * n_obs + i];
        }
        let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = col.iter().map(|v| (v - max).exp()).sum();
        lppd += max + (sum_exp / n_draws as f64).ln();
        let mean = col.iter().sum::<f64>() / n_draws as f64;
        p_waic += col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n_draws - 1) as f64;
    }
    Ok(Waic {
        waic: -2.0 * (lppd - p_waic),
        lppd,
        p_waic,
    })
}

pub fn waic_of(draws: &PosteriorDraws) -> Result<Waic> {
    let ll = draws
        .loglik
        .as_ref()
        .ok_or_else(|| Error::Posterior("draws were saved without log-likelihoods".into()))?;
    waic(ll, draws.n_draws, draws.n_obs)
}
