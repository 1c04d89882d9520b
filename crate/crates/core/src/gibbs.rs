//! Pieces shared by every coefficient sampler: outcome standardization,
//! region-level sufficient statistics, the fixed-effect and noise-variance
//! full conditionals, and the multi-chain driver.
//!
//! Internally observations are held in a canonical order (sorted by region,
//! then by their values) so that every floating-point reduction is
//! independent of the input row order.

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use statrs::distribution::{ChiSquared as ChiSquaredDist, ContinuousCDF};

use crate::data::{Dataset, ModelSpec, PosteriorDraws};
use crate::error::{Error, Result};
use crate::graph::RegionGraph;
use crate::linalg;
use crate::par;
use crate::rng::{self, Domain, SvRng};

/// Affine map between the user's outcome units and the internal scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scaling {
    pub center: f64,
    pub scale: f64,
}

impl Scaling {
    /// Mean and sample standard deviation; a zero spread falls back to 1.
    pub fn from_values(y: &[f64]) -> Self {
        let n = y.len() as f64;
        let center = y.iter().sum::<f64>() / n;
        let var = if y.len() > 1 {
            y.iter().map(|v| (v - center).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let scale = if var > 1e-24 * center.abs().max(1.0).powi(2) { var.sqrt() } else { 1.0 };
        Scaling { center, scale }
    }
}

/// Immutable per-fit data, shared read-only by all chains.
#[derive(Debug)]
pub struct Problem<'a> {
    pub data: &'a Dataset,
    pub graph: &'a RegionGraph,
    pub scaling: Scaling,
    pub n_coef: usize,
    pub n_regions: usize,
    /// `canonical[k]` is the input row stored at internal position `k`.
    pub canonical: Vec<usize>,
    /// Standardized outcome, canonical order.
    pub ys: Vec<f64>,
    /// Covariates `[k][p]` (intercept column first), canonical order.
    pub xs: Vec<f64>,
    /// Confounders `[k][j]`, canonical order.
    pub ws: Vec<f64>,
    pub region: Vec<usize>,
    /// Region moments `sum x x^T`, laid out `[r][p][q]`.
    pub xtx: Vec<f64>,
    pub counts: Vec<usize>,
    /// Cholesky factor of `W^T W` when there are confounders.
    pub wtw_chol: Option<Vec<f64>>,
    pub nu: f64,
    pub lambda: f64,
}

impl<'a> Problem<'a> {
    pub fn new(data: &'a Dataset, graph: &'a RegionGraph, spec: &ModelSpec) -> Result<Self> {
        let violations = crate::data::validate(data, graph);
        if let Some(v) = violations.first() {
            return Err(Error::Data(format!("invalid dataset: {v}")));
        }
        spec.validate()?;
        let n = data.n();
        let n_coef = data.p_x + 1;
        let n_regions = graph.n_regions();

        let mut canonical: Vec<usize> = (0..n).collect();
        canonical.sort_by(|&a, &b| {
            data.region[a]
                .cmp(&data.region[b])
                .then(data.y[a].total_cmp(&data.y[b]))
                .then_with(|| data.x[a * data.p_x..(a + 1) * data.p_x].cmp(&data.x[b * data.p_x..(b + 1) * data.p_x]))
                .then_with(|| {
                    let (wa, wb) = (&data.w[a * data.p_w..(a + 1) * data.p_w], &data.w[b * data.p_w..(b + 1) * data.p_w]);
                    wa.iter().zip(wb).map(|(u, v)| u.total_cmp(v)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
                })
        });

        let y_sorted: Vec<f64> = canonical.iter().map(|&i| data.y[i]).collect();
        let scaling = Scaling::from_values(&y_sorted);
        let ys: Vec<f64> = y_sorted.iter().map(|v| (v - scaling.center) / scaling.scale).collect();
        let mut xs = Vec::with_capacity(n * n_coef);
        let mut ws = Vec::with_capacity(n * data.p_w);
        let mut region = Vec::with_capacity(n);
        for &i in &canonical {
            xs.extend((0..n_coef).map(|p| data.covariate(i, p)));
            ws.extend((0..data.p_w).map(|j| data.confounder(i, j)));
            region.push(data.region[i]);
        }

        let mut xtx = vec![0.0; n_regions * n_coef * n_coef];
        let mut counts = vec![0; n_regions];
        for k in 0..n {
            let r = region[k];
            counts[r] += 1;
            let row = &xs[k * n_coef..(k + 1) * n_coef];
            let block = &mut xtx[r * n_coef * n_coef..(r + 1) * n_coef * n_coef];
            for p in 0..n_coef {
                for q in 0..n_coef {
                    block[p * n_coef + q] += row[p] * row[q];
                }
            }
        }

        let wtw_chol = if data.p_w > 0 {
            let m = data.p_w;
            let mut wtw = vec![0.0; m * m];
            for k in 0..n {
                let row = &ws[k * m..(k + 1) * m];
                for a in 0..m {
                    for b in 0..m {
                        wtw[a * m + b] += row[a] * row[b];
                    }
                }
            }
            Some(linalg::cholesky(&wtw, m).map_err(|col| {
                let name = data
                    .confounder_names
                    .get(col)
                    .cloned()
                    .unwrap_or_else(|| format!("#{col}"));
                Error::FixedEffects(format!(
                    "W^T W is singular: confounder column `{name}` is collinear with earlier columns"
                ))
            })?)
        } else {
            None
        };

        let nu = spec.sigma_prior.nu;
        let lambda = match spec.sigma_prior.lambda {
            Some(l) => l,
            None => {
                let chi = ChiSquaredDist::new(nu).map_err(|e| Error::Config(e.to_string()))?;
                // the standardized outcome has unit variance
                chi.inverse_cdf(1.0 - spec.sigma_prior.quantile) / nu
            }
        };

        Ok(Problem {
            data,
            graph,
            scaling,
            n_coef,
            n_regions,
            canonical,
            ys,
            xs,
            ws,
            region,
            xtx,
            counts,
            wtw_chol,
            nu,
            lambda,
        })
    }

    pub fn n(&self) -> usize {
        self.ys.len()
    }

    pub fn p_w(&self) -> usize {
        self.data.p_w
    }

    #[inline]
    pub fn xtx(&self, r: usize, p: usize, q: usize) -> f64 {
        self.xtx[(r * self.n_coef + p) * self.n_coef + q]
    }

    /// `sum_{i in r} x_ip (y_i - w_i^T gamma)`, laid out `[r][p]`.
    pub fn region_xty(&self, gamma: &[f64]) -> Vec<f64> {
        let (nc, m) = (self.n_coef, self.p_w());
        let mut out = vec![0.0; self.n_regions * nc];
        for k in 0..self.n() {
            let mut t = self.ys[k];
            for j in 0..m {
                t -= self.ws[k * m + j] * gamma[j];
            }
            let r = self.region[k];
            for p in 0..nc {
                out[r * nc + p] += self.xs[k * nc + p] * t;
            }
        }
        out
    }

    /// `sum_{i in r} x_ip e_i` with `e` the full residual.
    #[inline]
    pub fn residual_moment(&self, xty: &[f64], coef: &[f64], r: usize, p: usize) -> f64 {
        let nc = self.n_coef;
        let mut s = xty[r * nc + p];
        let base = (r * nc + p) * nc;
        for q in 0..nc {
            s -= self.xtx[base + q] * coef[q * self.n_regions + r];
        }
        s
    }

    /// Coefficient part of the fit, `sum_p coef[p][r_i] x_ip`, canonical order.
    pub fn coefficient_fit(&self, coef: &[f64]) -> Vec<f64> {
        let nc = self.n_coef;
        (0..self.n())
            .map(|k| {
                let r = self.region[k];
                (0..nc).map(|p| coef[p * self.n_regions + r] * self.xs[k * nc + p]).sum()
            })
            .collect()
    }

    /// Full standardized fit including confounders, canonical order.
    pub fn fit(&self, coef: &[f64], gamma: &[f64]) -> Vec<f64> {
        let m = self.p_w();
        let mut f = self.coefficient_fit(coef);
        for (k, fk) in f.iter_mut().enumerate() {
            for j in 0..m {
                *fk += self.ws[k * m + j] * gamma[j];
            }
        }
        f
    }

    pub fn ssr(&self, coef: &[f64], gamma: &[f64]) -> f64 {
        self.fit(coef, gamma)
            .iter()
            .zip(&self.ys)
            .map(|(f, y)| (y - f).powi(2))
            .sum()
    }

    /// Least-squares confounder effects with the coefficient fields at `coef`.
    pub fn gamma_least_squares(&self, coef: &[f64]) -> Vec<f64> {
        match &self.wtw_chol {
            None => Vec::new(),
            Some(l) => {
                let mut b = self.wt_residual(coef);
                linalg::forward_solve(l, self.p_w(), &mut b);
                linalg::backward_solve(l, self.p_w(), &mut b);
                b
            }
        }
    }

    fn wt_residual(&self, coef: &[f64]) -> Vec<f64> {
        let m = self.p_w();
        let cf = self.coefficient_fit(coef);
        let mut b = vec![0.0; m];
        for k in 0..self.n() {
            let r = self.ys[k] - cf[k];
            for j in 0..m {
                b[j] += self.ws[k * m + j] * r;
            }
        }
        b
    }
}

/// Mutable state common to all samplers, in standardized units.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedState {
    /// Coefficient fields `[p][r]`.
    pub coef: Vec<f64>,
    pub gamma: Vec<f64>,
    pub sigma2: f64,
}

impl SharedState {
    /// Zero coefficient fields, least-squares `gamma`, residual variance.
    pub fn initial(problem: &Problem) -> Self {
        let coef = vec![0.0; problem.n_coef * problem.n_regions];
        let gamma = problem.gamma_least_squares(&coef);
        let n = problem.n();
        let fit = problem.fit(&coef, &gamma);
        let resid: Vec<f64> = problem.ys.iter().zip(&fit).map(|(y, f)| y - f).collect();
        let mean = resid.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            resid.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)
        } else {
            0.0
        };
        SharedState {
            coef,
            gamma,
            sigma2: var.max(1e-6),
        }
    }
}

/// Draws `gamma ~ N((W^T W)^{-1} W^T r, sigma2 (W^T W)^{-1})`, `r` being the
/// outcome minus the coefficient fit (flat prior). No-op without confounders.
pub fn update_fixed_effects<R: Rng + ?Sized>(problem: &Problem, state: &mut SharedState, rng: &mut R) {
    let Some(l) = &problem.wtw_chol else { return };
    let m = problem.p_w();
    let mut mean = problem.wt_residual(&state.coef);
    linalg::forward_solve(l, m, &mut mean);
    let mut z: Vec<f64> = (0..m).map(|_| rng.sample::<f64, _>(StandardNormal) * state.sigma2.sqrt()).collect();
    // mean: L^T g = L^{-1} b; noise: L^T v = z has covariance (L L^T)^{-1}
    for (a, b) in z.iter_mut().zip(&mean) {
        *a += b;
    }
    linalg::backward_solve(l, m, &mut z);
    state.gamma = z;
}

/// Draws `sigma2` from the scaled-inverse-chi-square full conditional with
/// `nu + n` degrees of freedom and scale `(nu lambda + ssr) / (nu + n)`.
pub fn draw_sigma2<R: Rng + ?Sized>(nu: f64, lambda: f64, n: usize, ssr: f64, rng: &mut R) -> f64 {
    let df = nu + n as f64;
    let chi = ChiSquared::new(df).expect("positive degrees of freedom");
    (nu * lambda + ssr) / chi.sample(rng)
}

pub fn update_sigma2<R: Rng + ?Sized>(problem: &Problem, state: &mut SharedState, rng: &mut R) {
    let ssr = problem.ssr(&state.coef, &state.gamma);
    state.sigma2 = draw_sigma2(problem.nu, problem.lambda, problem.n(), ssr, rng);
}

/// A Markov chain over coefficient fields plus the shared parameters.
pub trait ChainSampler {
    /// One complete Gibbs cycle.
    fn sweep(&mut self, rng: &mut SvRng) -> Result<()>;
    fn state(&self) -> &SharedState;
    /// Called once when burn-in ends (freezes any adaptation).
    fn end_burn_in(&mut self) {}
}

/// Appends the current state to `out` in original outcome units.
pub fn record_draw(problem: &Problem, state: &SharedState, chain: usize, out: &mut PosteriorDraws) {
    let Scaling { center, scale } = problem.scaling;
    let rn = problem.n_regions;
    out.n_draws += 1;
    out.chain.push(chain);
    for p in 0..problem.n_coef {
        for r in 0..rn {
            let v = scale * state.coef[p * rn + r];
            out.beta.push(if p == 0 { center + v } else { v });
        }
    }
    out.gamma.extend(state.gamma.iter().map(|g| g * scale));
    let sigma2 = state.sigma2 * scale * scale;
    out.sigma2.push(sigma2);
    if let Some(ll) = out.loglik.as_mut() {
        let fit = problem.fit(&state.coef, &state.gamma);
        let mut row = vec![0.0; problem.n()];
        let norm = -0.5 * (2.0 * std::f64::consts::PI * sigma2).ln();
        for (k, &i) in problem.canonical.iter().enumerate() {
            let mu = center + scale * fit[k];
            row[i] = norm - (problem.data.y[i] - mu).powi(2) / (2.0 * sigma2);
        }
        ll.extend(row);
    }
}

/// Runs `spec.n_chains` chains (concurrently with the `parallel` feature),
/// each on its own stream derived from `(spec.seed, chain)`, and merges the
/// saved draws in chain order.
pub fn run_chains<'p, S, F>(problem: &'p Problem<'p>, spec: &ModelSpec, make: F) -> Result<PosteriorDraws>
where
    S: ChainSampler,
    F: Fn(&'p Problem<'p>, &mut SvRng) -> Result<S> + Sync,
{
    let per_chain = par::map_indices(spec.n_chains, |c| -> Result<PosteriorDraws> {
        let mut rng = rng::stream(spec.seed, Domain::Chain, &[c as u64]);
        let mut sampler = make(problem, &mut rng)?;
        for _ in 0..spec.n_burn {
            sampler.sweep(&mut rng)?;
        }
        sampler.end_burn_in();
        let mut out = PosteriorDraws::empty(problem.n_coef, problem.n_regions, problem.p_w(), problem.n(), spec.store_loglik);
        for _ in 0..spec.n_save {
            for _ in 0..spec.thin {
                sampler.sweep(&mut rng)?;
            }
            record_draw(problem, sampler.state(), c, &mut out);
        }
        Ok(out)
    });
    let mut chains = per_chain.into_iter();
    let mut all = chains.next().expect("at least one chain")?;
    for c in chains {
        all.append(c?)?;
    }
    all.check()?;
    Ok(all)
}
