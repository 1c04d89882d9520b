//! Simulation laboratory: true coefficient surfaces on a grid, synthetic
//! replicates, and the coverage / error harness over a design grid.
//!
//! Cell `(row, col)` (0-based) is region `row * cols + col` and has surface
//! coordinates `x = col + 1`, `y = row + 1`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::car::CarSpec;
use crate::data::{fmt_f64, Dataset, ModelSpec};
use crate::error::{Error, Result};
use crate::graph::RegionGraph;
use crate::linalg::cholesky;
use crate::model::{fit_model, ModelKind};
use crate::par;
use crate::posterior::{coefficient_draws, mixture_effect_draws, summarize, PsiDraws};
use crate::quantize::quantize_columns;
use crate::rng::{stream, Domain};

/// Exposures in the simulation design.
pub const P_X: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub rows: usize,
    pub cols: usize,
    pub n_per_cell: usize,
    pub rho: f64,
    pub sigma: f64,
    pub q: u32,
    pub replicates: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            rows: 10,
            cols: 10,
            n_per_cell: 10,
            rho: 0.0,
            sigma: 1.0,
            q: 4,
            replicates: 1,
            seed: 1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::Simlab("grid needs at least one row and one column".into()));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::Simlab(format!("rho = {} outside [0, 1)", self.rho)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Simlab(format!("sigma = {} must be > 0", self.sigma)));
        }
        if self.n_per_cell == 0 {
            return Err(Error::Simlab("n_per_cell must be >= 1".into()));
        }
        if self.q < 2 {
            return Err(Error::Simlab("Q must be >= 2".into()));
        }
        Ok(())
    }

    pub fn n_regions(&self) -> usize {
        self.rows * self.cols
    }

    pub fn graph(&self) -> Result<RegionGraph> {
        RegionGraph::grid(self.rows, self.cols)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Surface {
    Beta0,
    Beta1,
    Beta2,
    Beta3,
    Beta4,
    Beta5,
    Beta6,
    Psi,
}

impl Surface {
    /// Coefficient surfaces in coefficient order, then the mixture effect.
    pub const ALL: [Surface; 8] = [
        Surface::Beta0,
        Surface::Beta1,
        Surface::Beta2,
        Surface::Beta3,
        Surface::Beta4,
        Surface::Beta5,
        Surface::Beta6,
        Surface::Psi,
    ];

    pub fn coefficient(p: usize) -> Option<Surface> {
        (p <= P_X).then(|| Surface::ALL[p])
    }

    pub fn name(self) -> &'static str {
        match self {
            Surface::Beta0 => "beta0",
            Surface::Beta1 => "beta1",
            Surface::Beta2 => "beta2",
            Surface::Beta3 => "beta3",
            Surface::Beta4 => "beta4",
            Surface::Beta5 => "beta5",
            Surface::Beta6 => "beta6",
            Surface::Psi => "psi",
        }
    }
}

impl fmt::Display for Surface {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Surface {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Surface::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Simlab(format!("unknown surface `{s}`")))
    }
}

/// Isotropic bivariate normal density with variance `var` per axis.
fn bvn(x: f64, y: f64, mx: f64, my: f64, var: f64) -> f64 {
    let d2 = (x - mx).powi(2) + (y - my).powi(2);
    (-0.5 * d2 / var).exp() / (2.0 * std::f64::consts::PI * var)
}

pub fn true_surface(which: Surface, x: f64, y: f64) -> f64 {
    match which {
        Surface::Beta0 => 100.0 * bvn(x, y, 5.5, 5.5, 20.0),
        Surface::Beta1 => {
            if x > 5.0 {
                0.5
            } else {
                0.0
            }
        }
        Surface::Beta2 => {
            if y > 5.0 {
                -0.25
            } else {
                0.0
            }
        }
        Surface::Beta3 => -(-(x - 5.5).abs()).exp(),
        Surface::Beta4 => (-(y - 5.5).abs()).exp(),
        Surface::Beta5 => 50.0 * bvn(x, y, 1.0, 1.0, 10.0),
        Surface::Beta6 => 4.0 * (bvn(x, y, 7.5, 7.5, 1.0) + bvn(x, y, 2.5, 2.5, 1.0)),
        Surface::Psi => Surface::ALL[1..=P_X]
            .iter()
            .fold(0.0, |acc, s| acc + true_surface(*s, x, y)),
    }
}

/// Surface coordinates of a region.
pub fn cell_coords(region: usize, cols: usize) -> (f64, f64) {
    ((region % cols + 1) as f64, (region / cols + 1) as f64)
}

/// True coefficient maps `[p][region]` and the mixture-effect map.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub beta: Vec<Vec<f64>>,
    pub psi: Vec<f64>,
}

impl Truth {
    pub fn grid(rows: usize, cols: usize) -> Self {
        let rn = rows * cols;
        let beta: Vec<Vec<f64>> = (0..=P_X)
            .map(|p| {
                (0..rn)
                    .map(|r| {
                        let (x, y) = cell_coords(r, cols);
                        true_surface(Surface::ALL[p], x, y)
                    })
                    .collect()
            })
            .collect();
        let psi = (0..rn)
            .map(|r| beta[1..].iter().fold(0.0, |acc, b| acc + b[r]))
            .collect();
        Truth { beta, psi }
    }

    pub fn map(&self, which: Surface) -> &[f64] {
        match which {
            Surface::Psi => &self.psi,
            s => &self.beta[Surface::ALL.iter().position(|v| *v == s).unwrap()],
        }
    }

    pub fn write_csv(&self, path: &Path, cols: usize) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["region".to_string(), "x".into(), "y".into()];
        header.extend(Surface::ALL.iter().map(|s| s.name().to_string()));
        w.write_record(&header)?;
        for r in 0..self.psi.len() {
            let (x, y) = cell_coords(r, cols);
            let mut row = vec![r.to_string(), x.to_string(), y.to_string()];
            row.extend(Surface::ALL.iter().map(|s| fmt_f64(self.map(*s)[r])));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Row-major `n_total x 6` draws, unit variances and pairwise correlation `rho`.
pub fn gen_exposures<R: Rng + ?Sized>(n_total: usize, rho: f64, rng: &mut R) -> Vec<f64> {
    let mut cov = vec![rho; P_X * P_X];
    for i in 0..P_X {
        cov[i * P_X + i] = 1.0;
    }
    let l = cholesky(&cov, P_X).expect("equicorrelation matrix is positive definite for rho in [0, 1)");
    let mut out = Vec::with_capacity(n_total * P_X);
    let mut z = [0.0; P_X];
    for _ in 0..n_total {
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        for i in 0..P_X {
            out.push((0..=i).map(|k| l[i * P_X + k] * z[k]).sum());
        }
    }
    out
}

/// `beta0(r) + sum_p beta_p(r) x_p` for every observation.
pub fn linear_predictor(truth: &Truth, data: &Dataset) -> Vec<f64> {
    (0..data.region.len())
        .map(|i| {
            let r = data.region[i];
            (1..=data.p_x).fold(truth.beta[0][r], |acc, p| acc + truth.beta[p][r] * data.exposure(i, p - 1))
        })
        .collect()
}

/// Replicate `rep` of a design point; deterministic in `(seed, rep)`.
/// Observations are grouped by cell, `n_per_cell` each, in region order.
pub fn gen_dataset(config: &SimConfig, rep: usize) -> Result<(Dataset, Truth)> {
    config.validate()?;
    let rn = config.n_regions();
    let n = rn * config.n_per_cell;
    let mut rng = stream(config.seed, Domain::Replicate, &[rep as u64]);
    let raw = gen_exposures(n, config.rho, &mut rng);
    let (levels, _) = quantize_columns(&raw, P_X, config.q)?;
    let truth = Truth::grid(config.rows, config.cols);
    let mut data = Dataset {
        y: Vec::new(),
        x: levels.into_iter().map(i64::from).collect(),
        p_x: P_X,
        w: Vec::new(),
        p_w: 0,
        region: (0..n).map(|i| i / config.n_per_cell).collect(),
        q: config.q,
        exposure_names: (1..=P_X).map(|p| format!("x{p}")).collect(),
        confounder_names: Vec::new(),
    };
    let mean = linear_predictor(&truth, &data);
    data.y = mean
        .into_iter()
        .map(|m| m + config.sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Ok((data, truth))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub coverage: f64,
    pub mse: f64,
    pub rmse: f64,
    pub bias: f64,
}

/// Coverage of `truth` by `[replicate][cell]` intervals: per-cell fractions
/// and their mean over cells.
pub fn coverage(truth: &[f64], intervals: &[Vec<(f64, f64)>]) -> (f64, Vec<f64>) {
    let b = intervals.len() as f64;
    let cells: Vec<f64> = (0..truth.len())
        .map(|c| {
            intervals
                .iter()
                .filter(|iv| iv[c].0 <= truth[c] && truth[c] <= iv[c].1)
                .count() as f64
                / b
        })
        .collect();
    let global = cells.iter().sum::<f64>() / cells.len() as f64;
    (global, cells)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorStats {
    /// Mean over replicates and cells of squared error.
    pub global_mse: f64,
    /// Square root of `global_mse`.
    pub global_rmse: f64,
    pub global_bias: f64,
    pub cell_mse: Vec<f64>,
    pub cell_rmse: Vec<f64>,
    pub cell_bias: Vec<f64>,
}

/// Squared-error statistics of `[replicate][cell]` estimates.
pub fn rmse(truth: &[f64], estimates: &[Vec<f64>]) -> ErrorStats {
    let b = estimates.len() as f64;
    let cells = truth.len();
    let mut cell_mse = vec![0.0; cells];
    let mut cell_bias = vec![0.0; cells];
    for c in 0..cells {
        for est in estimates {
            let e = est[c] - truth[c];
            cell_mse[c] += e * e;
            cell_bias[c] += e;
        }
        cell_mse[c] /= b;
        cell_bias[c] /= b;
    }
    let global_mse = cell_mse.iter().sum::<f64>() / cells as f64;
    ErrorStats {
        global_mse,
        global_rmse: global_mse.sqrt(),
        global_bias: cell_bias.iter().sum::<f64>() / cells as f64,
        cell_rmse: cell_mse.iter().map(|v| v.sqrt()).collect(),
        cell_mse,
        cell_bias,
    }
}

/// A design point of an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimSetting {
    pub n_per_cell: usize,
    pub rho: f64,
    pub sigma: f64,
}

impl SimSetting {
    pub fn label(&self) -> String {
        format!("n{}_rho{}_sigma{}", self.n_per_cell, self.rho, self.sigma)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub rows: usize,
    pub cols: usize,
    pub n_per_cell: Vec<usize>,
    pub rho: Vec<f64>,
    pub sigma: Vec<f64>,
    pub q: u32,
    pub replicates: usize,
    pub seed: u64,
    pub models: Vec<ModelKind>,
    /// Credible level of the reported intervals.
    pub level: f64,
    pub fit: ModelSpec,
    pub car: CarSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            rows: 10,
            cols: 10,
            n_per_cell: vec![10, 100],
            rho: vec![0.0],
            sigma: vec![1.0],
            q: 4,
            replicates: 20,
            seed: 1,
            models: vec![ModelKind::Vcbart, ModelKind::CarVc],
            level: 0.95,
            fit: ModelSpec::default(),
            car: CarSpec::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn settings(&self) -> Vec<SimSetting> {
        let mut out = Vec::new();
        for &n_per_cell in &self.n_per_cell {
            for &rho in &self.rho {
                for &sigma in &self.sigma {
                    out.push(SimSetting { n_per_cell, rho, sigma });
                }
            }
        }
        out
    }

    pub fn sim_config(&self, s: &SimSetting) -> SimConfig {
        SimConfig {
            rows: self.rows,
            cols: self.cols,
            n_per_cell: s.n_per_cell,
            rho: s.rho,
            sigma: s.sigma,
            q: self.q,
            replicates: self.replicates,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_per_cell.is_empty() || self.rho.is_empty() || self.sigma.is_empty() {
            return Err(Error::Simlab("design lists n_per_cell, rho and sigma must be non-empty".into()));
        }
        if self.models.is_empty() {
            return Err(Error::Simlab("no models requested".into()));
        }
        if self.replicates == 0 {
            return Err(Error::Simlab("replicates must be >= 1".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Simlab(format!("level {} outside (0, 1)", self.level)));
        }
        for s in self.settings() {
            self.sim_config(&s).validate()?;
        }
        self.fit.validate()?;
        self.car.validate()
    }
}

/// Posterior mean and interval maps of one parameter in one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEstimate {
    pub parameter: Surface,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Persisted outcome of one (setting, model, replicate) fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub fingerprint: String,
    pub setting: SimSetting,
    pub model: ModelKind,
    pub replicate: usize,
    pub error: Option<String>,
    pub params: Vec<ParamEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamResult {
    pub parameter: Surface,
    pub global: CellStats,
    pub cells: Vec<CellStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupResult {
    pub setting: SimSetting,
    pub model: ModelKind,
    pub n_ok: usize,
    /// `(replicate, message)` for every failed fit.
    pub failures: Vec<(usize, String)>,
    pub params: Vec<ParamResult>,
}

impl GroupResult {
    pub fn param(&self, which: Surface) -> &ParamResult {
        self.params.iter().find(|p| p.parameter == which).expect("every surface is summarized")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub groups: Vec<GroupResult>,
}

impl ExperimentResult {
    pub fn group(&self, setting: &SimSetting, model: ModelKind) -> Option<&GroupResult> {
        self.groups.iter().find(|g| g.setting == *setting && g.model == model)
    }

    /// Tidy table: one `global` row and one row per cell for every
    /// (setting, model, parameter).
    pub fn write_tidy_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["setting", "model", "parameter", "cell", "coverage", "mse", "rmse", "bias"])?;
        for g in &self.groups {
            for p in &g.params {
                let rows = std::iter::once(("global".to_string(), &p.global))
                    .chain(p.cells.iter().enumerate().map(|(c, s)| (c.to_string(), s)));
                for (cell, s) in rows {
                    w.write_record([
                        g.setting.label(),
                        g.model.to_string(),
                        p.parameter.to_string(),
                        cell,
                        fmt_f64(s.coverage),
                        fmt_f64(s.mse),
                        fmt_f64(s.rmse),
                        fmt_f64(s.bias),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_status_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["setting", "model", "n_ok", "n_failed", "failed_replicates"])?;
        for g in &self.groups {
            let failed: Vec<String> = g.failures.iter().map(|(r, _)| r.to_string()).collect();
            w.write_record([
                g.setting.label(),
                g.model.to_string(),
                g.n_ok.to_string(),
                g.failures.len().to_string(),
                failed.join(";"),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn summarize_param(which: Surface, draws: &PsiDraws, level: f64) -> Result<ParamEstimate> {
    let s = summarize(draws, level)?;
    Ok(ParamEstimate {
        parameter: which,
        mean: s.regions.iter().map(|v| v.mean).collect(),
        lower: s.regions.iter().map(|v| v.lower).collect(),
        upper: s.regions.iter().map(|v| v.upper).collect(),
    })
}

/// Identifies everything that determines a replicate's result.
fn fingerprint(config: &ExperimentConfig, setting: &SimSetting, model: ModelKind) -> String {
    let key = serde_json::json!({
        "sim": config.sim_config(setting),
        "model": model,
        "level": config.level,
        "fit": config.fit,
        "car": config.car,
    });
    hex::encode(Sha256::digest(key.to_string().as_bytes()))
}

fn fit_seed(config: &ExperimentConfig, setting: &SimSetting, model: ModelKind, rep: usize) -> u64 {
    let m = ModelKind::ALL.iter().position(|k| *k == model).unwrap() as u64;
    stream(
        config.seed,
        Domain::ReplicateFit,
        &[setting.n_per_cell as u64, setting.rho.to_bits(), setting.sigma.to_bits(), m, rep as u64],
    )
    .next_u64()
}

/// Generates, fits, and summarizes one replicate. Fit failures become a
/// record with `error` set.
pub fn run_replicate(config: &ExperimentConfig, setting: &SimSetting, model: ModelKind, rep: usize) -> ReplicateRecord {
    let mut record = ReplicateRecord {
        fingerprint: fingerprint(config, setting, model),
        setting: *setting,
        model,
        replicate: rep,
        error: None,
        params: Vec::new(),
    };
    let result = (|| -> Result<Vec<ParamEstimate>> {
        let sim = config.sim_config(setting);
        let graph = sim.graph()?;
        let (data, _) = gen_dataset(&sim, rep)?;
        let mut spec = config.fit.clone();
        spec.seed = fit_seed(config, setting, model, rep);
        spec.store_loglik = false;
        let draws = fit_model(model, &data, &graph, &spec, &config.car)?;
        let mut params = Vec::with_capacity(Surface::ALL.len());
        for p in 0..draws.n_coef {
            params.push(summarize_param(Surface::ALL[p], &coefficient_draws(&draws, p), config.level)?);
        }
        params.push(summarize_param(Surface::Psi, &mixture_effect_draws(&draws), config.level)?);
        Ok(params)
    })();
    match result {
        Ok(params) => record.params = params,
        Err(e) => {
            record.error = Some(format!(
                "setting {} model {} replicate {rep}: {e}",
                setting.label(),
                model
            ))
        }
    }
    record
}

pub fn replicate_path(root: &Path, setting: &SimSetting, model: ModelKind, rep: usize) -> PathBuf {
    root.join("replicates")
        .join(setting.label())
        .join(model.name())
        .join(format!("rep{rep:04}.json"))
}

fn load_record(path: &Path, fingerprint: &str) -> Option<ReplicateRecord> {
    let text = fs::read_to_string(path).ok()?;
    let rec: ReplicateRecord = serde_json::from_str(&text).ok()?;
    (rec.fingerprint == fingerprint).then_some(rec)
}

fn store_record(path: &Path, rec: &ReplicateRecord) -> Result<()> {
    fs::create_dir_all(path.parent().expect("replicate path has a parent"))?;
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, serde_json::to_string(rec)?)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Aggregates replicate records of one (setting, model) group.
pub fn aggregate(truth: &Truth, setting: SimSetting, model: ModelKind, records: &[&ReplicateRecord]) -> GroupResult {
    let ok: Vec<&ReplicateRecord> = records.iter().copied().filter(|r| r.error.is_none()).collect();
    let failures = records
        .iter()
        .filter_map(|r| r.error.as_ref().map(|e| (r.replicate, e.clone())))
        .collect();
    let mut params = Vec::new();
    for which in Surface::ALL {
        let estimates: Vec<&ParamEstimate> = ok
            .iter()
            .filter_map(|r| r.params.iter().find(|p| p.parameter == which))
            .collect();
        if estimates.is_empty() {
            continue;
        }
        let t = truth.map(which);
        let intervals: Vec<Vec<(f64, f64)>> = estimates
            .iter()
            .map(|e| e.lower.iter().copied().zip(e.upper.iter().copied()).collect())
            .collect();
        let means: Vec<Vec<f64>> = estimates.iter().map(|e| e.mean.clone()).collect();
        let (cov, cell_cov) = coverage(t, &intervals);
        let err = rmse(t, &means);
        params.push(ParamResult {
            parameter: which,
            global: CellStats {
                coverage: cov,
                mse: err.global_mse,
                rmse: err.global_rmse,
                bias: err.global_bias,
            },
            cells: (0..t.len())
                .map(|c| CellStats {
                    coverage: cell_cov[c],
                    mse: err.cell_mse[c],
                    rmse: err.cell_rmse[c],
                    bias: err.cell_bias[c],
                })
                .collect(),
        });
    }
    GroupResult {
        setting,
        model,
        n_ok: ok.len(),
        failures,
        params,
    }
}

/// Runs every (setting, model, replicate) in parallel and aggregates in a
/// fixed order. With `out` set, replicate records are persisted under
/// `out/replicates/` and reused on a later run with the same configuration.
pub fn run_experiment(config: &ExperimentConfig, out: Option<&Path>) -> Result<ExperimentResult> {
    config.validate()?;
    let settings = config.settings();
    let (nm, nb) = (config.models.len(), config.replicates);
    let jobs = settings.len() * nm * nb;
    let records: Vec<Result<ReplicateRecord>> = par::map_indices(jobs, |j| {
        let (s, m, b) = (j / (nm * nb), (j / nb) % nm, j % nb);
        let (setting, model) = (&settings[s], config.models[m]);
        let path = out.map(|root| replicate_path(root, setting, model, b));
        if let Some(p) = &path {
            if let Some(rec) = load_record(p, &fingerprint(config, setting, model)) {
                log::debug!("reusing {}", p.display());
                return Ok(rec);
            }
        }
        let rec = run_replicate(config, setting, model, b);
        if let Some(e) = &rec.error {
            log::warn!("{e}");
        }
        if let Some(p) = &path {
            store_record(p, &rec)?;
        }
        Ok(rec)
    });
    let records: Vec<ReplicateRecord> = records.into_iter().collect::<Result<_>>()?;
    let truth = Truth::grid(config.rows, config.cols);
    let groups = (0..settings.len() * nm)
        .map(|g| {
            let group: Vec<&ReplicateRecord> = records[g * nb..(g + 1) * nb].iter().collect();
            aggregate(&truth, settings[g / nm], config.models[g % nm], &group)
        })
        .collect();
    Ok(ExperimentResult { groups })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn surface_examples() {
        assert_eq!(true_surface(Surface::Beta1, 6.0, 3.0), 0.5);
        assert_eq!(true_surface(Surface::Beta1, 5.0, 3.0), 0.0);
        assert_eq!(true_surface(Surface::Beta2, 4.0, 9.0), -0.25);
        let e = -(-0.5f64).exp();
        assert_eq!(true_surface(Surface::Beta3, 5.0, 2.0), e);
        assert_eq!(true_surface(Surface::Beta3, 6.0, 7.0), e);
        let b0 = true_surface(Surface::Beta0, 5.0, 5.0);
        assert!((b0 - 0.78589).abs() < 1e-5, "{b0}");
        assert!("beta9".parse::<Surface>().is_err());
    }

    #[test]
    fn surfaces_match_direct_formulas() {
        use std::f64::consts::PI;
        for x in 1..=10 {
            for y in 1..=10 {
                let (x, y) = (x as f64, y as f64);
                let direct = [
                    100.0 / (2.0 * PI * 20.0) * (-((x - 5.5).powi(2) + (y - 5.5).powi(2)) / 40.0).exp(),
                    50.0 / (2.0 * PI * 10.0) * (-((x - 1.0).powi(2) + (y - 1.0).powi(2)) / 20.0).exp(),
                    4.0 / (2.0 * PI)
                        * ((-((x - 7.5).powi(2) + (y - 7.5).powi(2)) / 2.0).exp()
                            + (-((x - 2.5).powi(2) + (y - 2.5).powi(2)) / 2.0).exp()),
                    (-(y - 5.5).abs()).exp(),
                ];
                let got = [
                    true_surface(Surface::Beta0, x, y),
                    true_surface(Surface::Beta5, x, y),
                    true_surface(Surface::Beta6, x, y),
                    true_surface(Surface::Beta4, x, y),
                ];
                for (a, b) in got.iter().zip(&direct) {
                    assert!((a - b).abs() <= 1e-12 * b.abs(), "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn psi_map_is_sum_of_exposure_maps() {
        let t = Truth::grid(10, 10);
        for r in 0..100 {
            let (x, y) = cell_coords(r, 10);
            let s = (1..=6).fold(0.0, |acc, p| acc + t.beta[p][r]);
            assert_eq!(t.psi[r], s);
            assert_eq!(true_surface(Surface::Psi, x, y), s);
        }
        // region 0 is the bottom-left cell (1, 1); region 9 is (10, 1)
        assert_eq!(cell_coords(0, 10), (1.0, 1.0));
        assert_eq!(cell_coords(9, 10), (10.0, 1.0));
        assert_eq!(cell_coords(10, 10), (1.0, 2.0));
    }

    #[test]
    fn exposure_correlations() {
        let mut rng = stream(3, Domain::Misc, &[]);
        for (rho, n, tol) in [(0.0, 20_000, 4.0 / (20_000f64).sqrt()), (0.8, 100_000, 0.01)] {
            let x = gen_exposures(n, rho, &mut rng);
            for a in 0..P_X {
                for b in 0..a {
                    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
                    for i in 0..n {
                        let (u, v) = (x[i * P_X + a], x[i * P_X + b]);
                        sab += u * v;
                        saa += u * u;
                        sbb += v * v;
                    }
                    let r = sab / (saa * sbb).sqrt();
                    assert!((r - rho).abs() < tol, "rho {rho}: {r}");
                }
            }
        }
    }

    #[test]
    fn dataset_properties() {
        let cfg = SimConfig { n_per_cell: 8, sigma: 1e-300, ..SimConfig::default() };
        let (data, truth) = gen_dataset(&cfg, 3).unwrap();
        assert_eq!(data.n(), 800);
        assert_eq!(data.y, linear_predictor(&truth, &data));
        let (again, _) = gen_dataset(&cfg, 3).unwrap();
        assert_eq!(data, again);
        assert_ne!(gen_dataset(&cfg, 4).unwrap().0.x, data.x);
        for p in 0..P_X {
            for level in 0..4 {
                let c = (0..800).filter(|&i| data.x[i * P_X + p] == level).count();
                assert_eq!(c, 200);
            }
        }
    }

    #[test]
    fn coverage_and_error_examples() {
        let truth = vec![0.0, 1.0];
        let all_in = vec![vec![(-1.0, 1.0), (0.0, 2.0)]; 3];
        assert_eq!(coverage(&truth, &all_in).0, 1.0);
        let all_out = vec![vec![(1.0, 2.0), (2.0, 3.0)]; 3];
        assert_eq!(coverage(&truth, &all_out).0, 0.0);
        let half = vec![vec![(-1.0, 1.0), (2.0, 3.0)], vec![(1.0, 2.0), (0.0, 2.0)]];
        let (g, cells) = coverage(&truth, &half);
        assert_eq!(g, 0.5);
        assert_eq!(cells, vec![0.5, 0.5]);

        let e = rmse(&[0.0], &[vec![2.0]]);
        assert_eq!((e.global_mse, e.global_rmse), (4.0, 2.0));
        let exact = rmse(&truth, &[truth.clone(), truth.clone()]);
        assert_eq!(exact.global_rmse, 0.0);
        let biased = rmse(&truth, &[vec![-0.3, 0.7], vec![-0.3, 0.7]]);
        assert!((biased.global_rmse - 0.3).abs() < 1e-15);
        assert!((biased.global_bias + 0.3).abs() < 1e-15);
    }

    #[test]
    fn aggregates_are_replicate_order_invariant() {
        let truth = Truth::grid(2, 2);
        let setting = SimSetting { n_per_cell: 1, rho: 0.0, sigma: 1.0 };
        let recs: Vec<ReplicateRecord> = (0..4)
            .map(|b| ReplicateRecord {
                fingerprint: String::new(),
                setting,
                model: ModelKind::Vcbart,
                replicate: b,
                error: (b == 2).then(|| "boom".to_string()),
                params: vec![ParamEstimate {
                    parameter: Surface::Psi,
                    mean: (0..4).map(|c| truth.psi[c] + 0.1 * b as f64).collect(),
                    lower: (0..4).map(|c| truth.psi[c] + 0.1 * b as f64 - 0.15).collect(),
                    upper: (0..4).map(|c| truth.psi[c] + 0.1 * b as f64 + 0.15).collect(),
                }],
            })
            .collect();
        let fwd: Vec<&ReplicateRecord> = recs.iter().collect();
        let rev: Vec<&ReplicateRecord> = recs.iter().rev().collect();
        let a = aggregate(&truth, setting, ModelKind::Vcbart, &fwd);
        let b = aggregate(&truth, setting, ModelKind::Vcbart, &rev);
        assert_eq!(a.n_ok, 3);
        assert_eq!(a.failures.len(), 1);
        let (pa, pb) = (a.param(Surface::Psi), b.param(Surface::Psi));
        assert!((pa.global.coverage - 2.0 / 3.0).abs() < 1e-15);
        assert!((pa.global.mse - pb.global.mse).abs() < 1e-15);
        assert_eq!(pa.global.coverage, pb.global.coverage);
    }

    #[test]
    fn experiment_smoke_and_resume() {
        let dir = tempfile::tempdir().unwrap();
        let mut fit = ModelSpec { n_trees: 5, n_burn: 20, n_save: 20, n_chains: 1, ..ModelSpec::default() };
        fit.store_loglik = false;
        let cfg = ExperimentConfig {
            rows: 3,
            cols: 3,
            n_per_cell: vec![4],
            replicates: 1,
            fit,
            ..ExperimentConfig::default()
        };
        let first = run_experiment(&cfg, Some(dir.path())).unwrap();
        assert_eq!(first.groups.len(), 2);
        for g in &first.groups {
            assert_eq!(g.n_ok, 1, "{:?}", g.failures);
            assert_eq!(g.params.len(), 8);
            for p in &g.params {
                assert!((0.0..=1.0).contains(&p.global.coverage));
                assert!(p.global.rmse >= 0.0);
            }
        }
        let again = run_experiment(&cfg, Some(dir.path())).unwrap();
        assert_eq!(first, again);
        let fresh = run_experiment(&cfg, None).unwrap();
        assert_eq!(first, fresh);
    }
}
