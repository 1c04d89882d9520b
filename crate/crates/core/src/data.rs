//! Shared records: the observed dataset, the sampler settings, and the
//! posterior draw arrays, with CSV/JSON persistence.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::RegionGraph;

/// Formats a real with 17 significant digits; parses back bit-exactly.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub y: Vec<f64>,
    /// Row-major `n x p_x` quantized exposure levels.
    pub x: Vec<i64>,
    pub p_x: usize,
    /// Row-major `n x p_w` confounders, passed through untransformed.
    pub w: Vec<f64>,
    pub p_w: usize,
    pub region: Vec<usize>,
    pub q: u32,
    pub exposure_names: Vec<String>,
    pub confounder_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    Empty,
    RowCount { field: &'static str, rows: usize, expected: usize },
    QTooSmall(u32),
    ExposureBelowZero { row: usize, col: usize },
    ExposureAboveMax { row: usize, col: usize },
    RegionOutOfRange { row: usize, region: usize },
    NonFinite { field: &'static str, row: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Empty => write!(f, "dataset has no observations"),
            Violation::RowCount { field, rows, expected } => {
                write!(f, "row count mismatch: {field} has {rows} rows, expected {expected}")
            }
            Violation::QTooSmall(q) => write!(f, "Q below 2 (Q = {q})"),
            Violation::ExposureBelowZero { .. } => write!(f, "exposure level below 0"),
            Violation::ExposureAboveMax { .. } => write!(f, "exposure level above Q-1"),
            Violation::RegionOutOfRange { .. } => write!(f, "region id out of range"),
            Violation::NonFinite { field, row } => write!(f, "non-finite {field} at row {row}"),
        }
    }
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    #[inline]
    pub fn exposure(&self, i: usize, p: usize) -> f64 {
        self.x[i * self.p_x + p] as f64
    }

    #[inline]
    pub fn confounder(&self, i: usize, k: usize) -> f64 {
        self.w[i * self.p_w + k]
    }

    /// Covariate of coefficient `p` at observation `i`: 1 for the intercept,
    /// otherwise exposure `p - 1`.
    #[inline]
    pub fn covariate(&self, i: usize, p: usize) -> f64 {
        if p == 0 {
            1.0
        } else {
            self.exposure(i, p - 1)
        }
    }

    /// Observation counts per region.
    pub fn region_counts(&self, n_regions: usize) -> Vec<usize> {
        let mut c = vec![0; n_regions];
        for &r in &self.region {
            if r < n_regions {
                c[r] += 1;
            }
        }
        c
    }

    /// Checks every dataset invariant against a region count.
    pub fn violations(&self, n_regions: usize) -> Vec<Violation> {
        let n = self.y.len();
        let mut out = Vec::new();
        if n == 0 {
            out.push(Violation::Empty);
        }
        if self.q < 2 {
            out.push(Violation::QTooSmall(self.q));
        }
        let shape = [
            ("exposures", self.x.len().checked_div(self.p_x).unwrap_or(n), self.x.len().is_multiple_of(self.p_x)),
            ("confounders", self.w.len().checked_div(self.p_w).unwrap_or(n), self.w.len().is_multiple_of(self.p_w)),
            ("region", self.region.len(), true),
        ];
        let mut shapes_ok = true;
        for (field, rows, exact) in shape {
            if rows != n || !exact {
                out.push(Violation::RowCount { field, rows, expected: n });
                shapes_ok = false;
            }
        }
        if self.p_x == 0 && !self.x.is_empty() || self.p_w == 0 && !self.w.is_empty() {
            shapes_ok = false;
        }
        for (i, y) in self.y.iter().enumerate() {
            if !y.is_finite() {
                out.push(Violation::NonFinite { field: "outcome", row: i });
            }
        }
        if shapes_ok {
            for i in 0..n {
                for p in 0..self.p_x {
                    let v = self.x[i * self.p_x + p];
                    if v < 0 {
                        out.push(Violation::ExposureBelowZero { row: i, col: p });
                    } else if v >= self.q as i64 {
                        out.push(Violation::ExposureAboveMax { row: i, col: p });
                    }
                }
                for k in 0..self.p_w {
                    if !self.w[i * self.p_w + k].is_finite() {
                        out.push(Violation::NonFinite { field: "confounder", row: i });
                    }
                }
            }
        }
        for (i, &r) in self.region.iter().enumerate() {
            if r >= n_regions {
                out.push(Violation::RegionOutOfRange { row: i, region: r });
            }
        }
        out
    }
}

/// Lists violations of the dataset against the graph's region count.
pub fn validate(dataset: &Dataset, graph: &RegionGraph) -> Vec<Violation> {
    dataset.violations(graph.n_regions())
}

/// File locations for one dataset. The confounder file is optional.
#[derive(Debug, Clone)]
pub struct DatasetPaths {
    pub outcome: PathBuf,
    pub exposures: PathBuf,
    pub confounders: Option<PathBuf>,
    pub region: PathBuf,
}

impl DatasetPaths {
    /// Conventional layout: `y.csv`, `exposures.csv`, `region.csv` and,
    /// when present, `confounders.csv`.
    pub fn in_dir(dir: &Path) -> Self {
        let conf = dir.join("confounders.csv");
        DatasetPaths {
            outcome: dir.join("y.csv"),
            exposures: dir.join("exposures.csv"),
            confounders: conf.exists().then_some(conf),
            region: dir.join("region.csv"),
        }
    }

    pub fn all(&self) -> Vec<&Path> {
        let mut v = vec![self.outcome.as_path(), self.exposures.as_path(), self.region.as_path()];
        if let Some(c) = &self.confounders {
            v.push(c.as_path());
        }
        v
    }
}

struct Table {
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn read_table(path: &Path) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::file(path, format!("cannot open: {e}")))?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::file(path, e.to_string()))?;
        rows.push(rec.iter().map(str::to_owned).collect());
    }
    if rows.is_empty() {
        return Err(Error::file(path, "empty file"));
    }
    Ok(Table { headers, rows })
}

fn parse_real(path: &Path, row: usize, cell: &str) -> Result<f64> {
    let missing = cell.is_empty() || matches!(cell.to_ascii_lowercase().as_str(), "na" | "nan" | "null");
    if missing {
        return Err(Error::file(path, format!("row {}: missing value", row + 1)));
    }
    cell.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::file(path, format!("row {}: non-numeric value `{cell}`", row + 1)))
}

/// Reads an all-numeric CSV: header names and the row-major values.
pub fn read_numeric_csv(path: &Path) -> Result<(Vec<String>, Vec<f64>)> {
    let t = read_table(path)?;
    let mut values = Vec::with_capacity(t.rows.len() * t.headers.len());
    for (i, row) in t.rows.iter().enumerate() {
        if row.len() != t.headers.len() {
            return Err(Error::file(path, format!("row {}: expected {} columns", i + 1, t.headers.len())));
        }
        for cell in row {
            values.push(parse_real(path, i, cell)?);
        }
    }
    Ok((t.headers, values))
}

fn single_column(path: &Path, table: &Table, name: &str) -> Result<usize> {
    table
        .headers
        .iter()
        .position(|h| h == name)
        .or((table.headers.len() == 1).then_some(0))
        .ok_or_else(|| Error::file(path, format!("expected a `{name}` column")))
}

/// Reads and validates a dataset. `q` overrides the inferred bin count
/// (max level + 1) and must be at least that large; `n_regions`, when known,
/// bounds the region ids.
pub fn load_dataset(paths: &DatasetPaths, q: Option<u32>, n_regions: Option<usize>) -> Result<Dataset> {
    let yt = read_table(&paths.outcome)?;
    let yc = single_column(&paths.outcome, &yt, "y")?;
    let y = yt
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| parse_real(&paths.outcome, i, &r[yc]))
        .collect::<Result<Vec<_>>>()?;
    let n = y.len();

    let check_rows = |path: &Path, rows: usize| -> Result<()> {
        if rows != n {
            return Err(Error::file(path, format!("row count mismatch: {rows} rows, outcome has {n}")));
        }
        Ok(())
    };

    let xt = read_table(&paths.exposures)?;
    check_rows(&paths.exposures, xt.rows.len())?;
    let p_x = xt.headers.len();
    let mut x = Vec::with_capacity(n * p_x);
    for (i, row) in xt.rows.iter().enumerate() {
        for cell in row {
            let v = parse_real(&paths.exposures, i, cell)?;
            if v.fract() != 0.0 {
                return Err(Error::file(
                    &paths.exposures,
                    format!("row {}: non-integer quantized exposure `{cell}`", i + 1),
                ));
            }
            if v < 0.0 {
                return Err(Error::file(&paths.exposures, format!("row {}: exposure level below 0", i + 1)));
            }
            x.push(v as i64);
        }
    }

    let (w, p_w, confounder_names) = match &paths.confounders {
        Some(path) => {
            let wt = read_table(path)?;
            check_rows(path, wt.rows.len())?;
            let mut w = Vec::with_capacity(n * wt.headers.len());
            for (i, row) in wt.rows.iter().enumerate() {
                for cell in row {
                    w.push(parse_real(path, i, cell)?);
                }
            }
            (w, wt.headers.len(), wt.headers)
        }
        None => (Vec::new(), 0, Vec::new()),
    };

    let rt = read_table(&paths.region)?;
    check_rows(&paths.region, rt.rows.len())?;
    let rc = single_column(&paths.region, &rt, "region")?;
    let mut region = Vec::with_capacity(n);
    for (i, row) in rt.rows.iter().enumerate() {
        let cell = &row[rc];
        let id = cell
            .parse::<usize>()
            .map_err(|_| Error::file(&paths.region, format!("row {}: bad region id `{cell}`", i + 1)))?;
        if let Some(r) = n_regions {
            if id >= r {
                return Err(Error::file(
                    &paths.region,
                    format!("row {}: region id {id} out of range (R = {r})", i + 1),
                ));
            }
        }
        region.push(id);
    }

    let inferred = (x.iter().copied().max().unwrap_or(0) + 1).max(2) as u32;
    let q = match q {
        Some(q) if q < inferred => {
            return Err(Error::Data(format!(
                "configured Q = {q} is smaller than the observed levels require ({inferred})"
            )))
        }
        Some(q) => q,
        None => inferred,
    };

    let ds = Dataset {
        y,
        x,
        p_x,
        w,
        p_w,
        region,
        q,
        exposure_names: xt.headers,
        confounder_names,
    };
    let bad = ds.violations(n_regions.unwrap_or(usize::MAX));
    if let Some(v) = bad.first() {
        return Err(Error::Data(v.to_string()));
    }
    Ok(ds)
}

/// Writes the conventional four-file layout (confounders only when `p_w > 0`).
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<DatasetPaths> {
    fs::create_dir_all(dir)?;
    let paths = DatasetPaths {
        outcome: dir.join("y.csv"),
        exposures: dir.join("exposures.csv"),
        confounders: (ds.p_w > 0).then(|| dir.join("confounders.csv")),
        region: dir.join("region.csv"),
    };
    let n = ds.n();

    let mut w = csv::Writer::from_path(&paths.outcome)?;
    w.write_record(["y"])?;
    for v in &ds.y {
        w.write_record([fmt_f64(*v)])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(&paths.exposures)?;
    w.write_record(&ds.exposure_names)?;
    for i in 0..n {
        w.write_record((0..ds.p_x).map(|p| ds.x[i * ds.p_x + p].to_string()))?;
    }
    w.flush()?;

    if let Some(path) = &paths.confounders {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&ds.confounder_names)?;
        for i in 0..n {
            w.write_record((0..ds.p_w).map(|k| fmt_f64(ds.w[i * ds.p_w + k])))?;
        }
        w.flush()?;
    }

    let mut w = csv::Writer::from_path(&paths.region)?;
    w.write_record(["region"])?;
    for r in &ds.region {
        w.write_record([r.to_string()])?;
    }
    w.flush()?;
    Ok(paths)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DepthPrior {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for DepthPrior {
    fn default() -> Self {
        DepthPrior { alpha: 0.95, beta: 2.0 }
    }
}

/// Scaled-inverse-chi-square prior on the noise variance. When `lambda` is
/// unset it is chosen so that `P(sigma2 < var(y)) = quantile`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SigmaPrior {
    pub nu: f64,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default = "default_sigma_quantile")]
    pub quantile: f64,
}

fn default_sigma_quantile() -> f64 {
    0.9
}

impl Default for SigmaPrior {
    fn default() -> Self {
        SigmaPrior { nu: 3.0, lambda: None, quantile: 0.9 }
    }
}

/// Settings shared by every sampler. Scale-dependent quantities (`leaf_sd`,
/// `sigma_prior.lambda`) refer to the internally standardized outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub n_trees: usize,
    pub n_burn: usize,
    pub n_save: usize,
    pub thin: usize,
    pub n_chains: usize,
    /// Leaf output prior sd; `None` means `0.5 / (k * sqrt(n_trees))`.
    pub leaf_sd: Option<f64>,
    pub k: f64,
    pub depth_prior: DepthPrior,
    pub sigma_prior: SigmaPrior,
    pub seed: u64,
    pub store_loglik: bool,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            n_trees: 50,
            n_burn: 1000,
            n_save: 1000,
            thin: 1,
            n_chains: 2,
            leaf_sd: None,
            k: 2.0,
            depth_prior: DepthPrior::default(),
            sigma_prior: SigmaPrior::default(),
            seed: 1,
            store_loglik: true,
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_owned()));
        if self.n_trees < 1 {
            return fail("n_trees must be >= 1");
        }
        if !(self.depth_prior.alpha > 0.0 && self.depth_prior.alpha < 1.0) {
            return fail("depth_prior.alpha must lie in (0, 1)");
        }
        if !(self.depth_prior.beta >= 0.0) {
            return fail("depth_prior.beta must be >= 0");
        }
        if let Some(t) = self.leaf_sd {
            if !(t > 0.0) {
                return fail("leaf_sd must be > 0");
            }
        }
        if !(self.k > 0.0) {
            return fail("k must be > 0");
        }
        if !(self.sigma_prior.nu > 0.0) {
            return fail("sigma_prior.nu must be > 0");
        }
        if let Some(l) = self.sigma_prior.lambda {
            if !(l > 0.0) {
                return fail("sigma_prior.lambda must be > 0");
            }
        }
        if !(self.sigma_prior.quantile > 0.0 && self.sigma_prior.quantile < 1.0) {
            return fail("sigma_prior.quantile must lie in (0, 1)");
        }
        if self.n_save < 1 || self.thin < 1 || self.n_chains < 1 {
            return fail("n_save, thin and n_chains must be >= 1");
        }
        Ok(())
    }

    pub fn leaf_sd(&self) -> f64 {
        self.leaf_sd
            .unwrap_or_else(|| 0.5 / (self.k * (self.n_trees as f64).sqrt()))
    }
}

/// Saved posterior draws, in original outcome units.
///
/// `beta` is laid out `[draw][coefficient][region]`, coefficient 0 being the
/// intercept; `loglik` is `[draw][observation]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    pub n_draws: usize,
    pub n_coef: usize,
    pub n_regions: usize,
    pub p_w: usize,
    pub n_obs: usize,
    pub chain: Vec<usize>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub loglik: Option<Vec<f64>>,
}

impl PosteriorDraws {
    pub fn empty(n_coef: usize, n_regions: usize, p_w: usize, n_obs: usize, with_loglik: bool) -> Self {
        PosteriorDraws {
            n_draws: 0,
            n_coef,
            n_regions,
            p_w,
            n_obs,
            chain: Vec::new(),
            beta: Vec::new(),
            gamma: Vec::new(),
            sigma2: Vec::new(),
            loglik: with_loglik.then(Vec::new),
        }
    }

    #[inline]
    pub fn beta(&self, d: usize, p: usize, r: usize) -> f64 {
        self.beta[(d * self.n_coef + p) * self.n_regions + r]
    }

    pub fn beta_draw(&self, d: usize) -> &[f64] {
        let s = self.n_coef * self.n_regions;
        &self.beta[d * s..(d + 1) * s]
    }

    pub fn gamma_draw(&self, d: usize) -> &[f64] {
        &self.gamma[d * self.p_w..(d + 1) * self.p_w]
    }

    pub fn loglik_draw(&self, d: usize) -> Option<&[f64]> {
        self.loglik
            .as_ref()
            .map(|l| &l[d * self.n_obs..(d + 1) * self.n_obs])
    }

    pub fn n_chains(&self) -> usize {
        self.chain.iter().max().map_or(0, |c| c + 1)
    }

    /// Appends another chain's draws (dimensions must agree).
    pub fn append(&mut self, other: PosteriorDraws) -> Result<()> {
        if (self.n_coef, self.n_regions, self.p_w, self.n_obs) != (other.n_coef, other.n_regions, other.p_w, other.n_obs)
            || self.loglik.is_some() != other.loglik.is_some()
        {
            return Err(Error::Posterior("cannot merge draws with different dimensions".into()));
        }
        self.n_draws += other.n_draws;
        self.chain.extend(other.chain);
        self.beta.extend(other.beta);
        self.gamma.extend(other.gamma);
        self.sigma2.extend(other.sigma2);
        if let (Some(a), Some(b)) = (self.loglik.as_mut(), other.loglik) {
            a.extend(b);
        }
        Ok(())
    }

    pub fn check(&self) -> Result<()> {
        let d = self.n_draws;
        let ok = self.chain.len() == d
            && self.beta.len() == d * self.n_coef * self.n_regions
            && self.gamma.len() == d * self.p_w
            && self.sigma2.len() == d
            && self.loglik.as_ref().is_none_or(|l| l.len() == d * self.n_obs);
        if !ok {
            return Err(Error::Posterior("draw arrays have inconsistent dimensions".into()));
        }
        if self.sigma2.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Posterior("non-positive sigma2 draw".into()));
        }
        Ok(())
    }

    /// One CSV per parameter block plus `draws.json` describing dimensions.
    pub fn write_dir(&self, dir: &Path, extra: serde_json::Value) -> Result<Vec<PathBuf>> {
        self.check()?;
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();

        let block = |name: &str, cols: Vec<String>, row: &dyn Fn(usize) -> Vec<f64>| -> Result<PathBuf> {
            let path = dir.join(name);
            let mut w = csv::Writer::from_path(&path)?;
            let mut header = vec!["draw".to_owned(), "chain".to_owned()];
            header.extend(cols);
            w.write_record(&header)?;
            for d in 0..self.n_draws {
                let mut rec = vec![d.to_string(), self.chain[d].to_string()];
                rec.extend(row(d).into_iter().map(fmt_f64));
                w.write_record(&rec)?;
            }
            w.flush()?;
            Ok(path)
        };

        let beta_cols = (0..self.n_coef)
            .flat_map(|p| (0..self.n_regions).map(move |r| format!("beta{p}_r{r}")))
            .collect();
        written.push(block("beta.csv", beta_cols, &|d| self.beta_draw(d).to_vec())?);
        let gamma_cols = (0..self.p_w).map(|k| format!("gamma{k}")).collect();
        written.push(block("gamma.csv", gamma_cols, &|d| self.gamma_draw(d).to_vec())?);
        written.push(block("sigma2.csv", vec!["sigma2".into()], &|d| vec![self.sigma2[d]])?);
        if self.loglik.is_some() {
            let cols = (0..self.n_obs).map(|i| format!("obs{i}")).collect();
            written.push(block("loglik.csv", cols, &|d| {
                self.loglik_draw(d).map(<[f64]>::to_vec).unwrap_or_default()
            })?);
        }

        let meta = DrawsMeta {
            n_draws: self.n_draws,
            n_coef: self.n_coef,
            n_regions: self.n_regions,
            p_w: self.p_w,
            n_obs: self.n_obs,
            has_loglik: self.loglik.is_some(),
            extra,
        };
        let path = dir.join("draws.json");
        fs::write(&path, serde_json::to_string_pretty(&meta)? + "\n")?;
        written.push(path);
        Ok(written)
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("draws.json");
        let meta: DrawsMeta = serde_json::from_str(
            &fs::read_to_string(&meta_path).map_err(|e| Error::file(&meta_path, e.to_string()))?,
        )?;
        let mut out = PosteriorDraws::empty(meta.n_coef, meta.n_regions, meta.p_w, meta.n_obs, meta.has_loglik);
        out.n_draws = meta.n_draws;

        let read_block = |name: &str, width: usize, chain: Option<&mut Vec<usize>>| -> Result<Vec<f64>> {
            let path = dir.join(name);
            let t = read_table(&path).or_else(|e| if meta.n_draws == 0 { Ok(Table { headers: vec![], rows: vec![] }) } else { Err(e) })?;
            if t.rows.len() != meta.n_draws {
                return Err(Error::file(&path, "draw count does not match draws.json"));
            }
            let mut values = Vec::with_capacity(meta.n_draws * width);
            let mut chains = Vec::with_capacity(meta.n_draws);
            for (i, row) in t.rows.iter().enumerate() {
                if row.len() != width + 2 {
                    return Err(Error::file(&path, format!("row {}: expected {} columns", i + 1, width + 2)));
                }
                chains.push(row[1].parse::<usize>().map_err(|_| Error::file(&path, "bad chain id"))?);
                for cell in &row[2..] {
                    values.push(parse_real(&path, i, cell)?);
                }
            }
            if let Some(c) = chain {
                *c = chains;
            }
            Ok(values)
        };

        out.beta = read_block("beta.csv", meta.n_coef * meta.n_regions, Some(&mut out.chain))?;
        out.gamma = read_block("gamma.csv", meta.p_w, None)?;
        out.sigma2 = read_block("sigma2.csv", 1, None)?;
        if meta.has_loglik {
            out.loglik = Some(read_block("loglik.csv", meta.n_obs, None)?);
        }
        out.check()?;
        Ok(out)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DrawsMeta {
    n_draws: usize,
    n_coef: usize,
    n_regions: usize,
    p_w: usize,
    n_obs: usize,
    has_loglik: bool,
    #[serde(default)]
    extra: serde_json::Value,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    fn fixture(dir: &Path, exposures: &str) -> DatasetPaths {
        DatasetPaths {
            outcome: write(dir, "y.csv", "y\n1.5\n2\n-0.25\n3\n"),
            exposures: write(dir, "exposures.csv", exposures),
            confounders: None,
            region: write(dir, "region.csv", "region\n0\n1\n0\n1\n"),
        }
    }

    #[test]
    fn load_small_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let paths = fixture(dir.path(), "a,b\n0,3\n1,2\n2,1\n3,0\n");
        let ds = load_dataset(&paths, None, Some(2)).unwrap();
        assert_eq!((ds.n(), ds.p_x, ds.p_w, ds.q), (4, 2, 0, 4));
        assert_eq!(ds.exposure(1, 1), 2.0);
        assert_eq!(ds.covariate(1, 0), 1.0);
        assert!(load_dataset(&paths, Some(3), Some(2)).is_err());
        assert_eq!(load_dataset(&paths, Some(10), Some(2)).unwrap().q, 10);
    }

    #[test]
    fn load_rejects_bad_cells() {
        let dir = tempfile::tempdir().unwrap();
        let paths = fixture(dir.path(), "a\n0\n2.5\n1\n1\n");
        let err = load_dataset(&paths, None, None).unwrap_err().to_string();
        assert!(err.contains("non-integer quantized exposure"), "{err}");

        let paths = fixture(dir.path(), "a\n0\n1\n1\n");
        assert!(load_dataset(&paths, None, None).unwrap_err().to_string().contains("row count mismatch"));

        let paths = fixture(dir.path(), "a\n0\nNA\n1\n1\n");
        assert!(load_dataset(&paths, None, None).unwrap_err().to_string().contains("missing value"));

        let paths = fixture(dir.path(), "a\n0\n1\n1\n1\n");
        assert!(load_dataset(&paths, None, Some(1)).unwrap_err().to_string().contains("out of range"));

        write(dir.path(), "y.csv", "y\n");
        assert!(load_dataset(&paths, None, None).unwrap_err().to_string().contains("empty file"));
    }

    fn tiny(q: u32) -> Dataset {
        Dataset {
            y: vec![1.0, 2.0],
            x: vec![0, 1, 2, 3],
            p_x: 2,
            w: vec![],
            p_w: 0,
            region: vec![0, 4],
            q,
            exposure_names: vec!["a".into(), "b".into()],
            confounder_names: vec![],
        }
    }

    #[test]
    fn validate_examples() {
        let g5 = RegionGraph::grid(1, 5).unwrap();
        assert!(validate(&tiny(4), &g5).is_empty());
        let mut ds = tiny(4);
        ds.region[1] = 5;
        let v: Vec<String> = validate(&ds, &g5).iter().map(ToString::to_string).collect();
        assert_eq!(v, vec!["region id out of range"]);
        let mut ds = tiny(4);
        ds.x[0] = -1;
        let v: Vec<String> = validate(&ds, &g5).iter().map(ToString::to_string).collect();
        assert_eq!(v, vec!["exposure level below 0"]);
        assert!(!validate(&tiny(3), &g5).is_empty());
    }

    #[test]
    fn model_spec_bounds() {
        let spec = ModelSpec::default();
        spec.validate().unwrap();
        assert!((spec.leaf_sd() - 0.25 / 50f64.sqrt()).abs() < 1e-15);
        let bad = ModelSpec { depth_prior: DepthPrior { alpha: 1.0, beta: 2.0 }, ..ModelSpec::default() };
        assert!(bad.validate().is_err());
        let bad = ModelSpec { n_trees: 0, ..ModelSpec::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn draws_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut d = PosteriorDraws::empty(2, 3, 1, 2, true);
        for k in 0..4 {
            d.n_draws += 1;
            d.chain.push(k / 2);
            d.beta.extend((0..6).map(|j| (k * 6 + j) as f64 / 7.0));
            d.gamma.push(k as f64 * 0.1);
            d.sigma2.push(1.0 + k as f64);
            d.loglik.as_mut().unwrap().extend([-1.0 / 3.0, -2.5]);
        }
        d.write_dir(dir.path(), serde_json::json!({"seed": 3})).unwrap();
        assert_eq!(PosteriorDraws::read_dir(dir.path()).unwrap(), d);
        assert_eq!(d.n_chains(), 2);
    }

    proptest! {
        #[test]
        fn dataset_round_trip(
            rows in proptest::collection::vec((-1e6f64..1e6, 0i64..5, 0i64..5, -1e3f64..1e3, 0usize..7), 1..30)
        ) {
            let dir = tempfile::tempdir().unwrap();
            let ds = Dataset {
                y: rows.iter().map(|r| r.0).collect(),
                x: rows.iter().flat_map(|r| [r.1, r.2]).collect(),
                p_x: 2,
                w: rows.iter().map(|r| r.3).collect(),
                p_w: 1,
                region: rows.iter().map(|r| r.4).collect(),
                q: 5,
                exposure_names: vec!["e1".into(), "e2".into()],
                confounder_names: vec!["w1".into()],
            };
            let paths = save_dataset(&ds, dir.path()).unwrap();
            let back = load_dataset(&paths, Some(5), Some(7)).unwrap();
            prop_assert_eq!(back, ds);
        }

        #[test]
        fn validate_matches_direct_check(
            xs in proptest::collection::vec(-1i64..5, 4),
            regions in proptest::collection::vec(0usize..4, 2),
            q in 1u32..5,
        ) {
            let ds = Dataset {
                y: vec![0.0, 1.0],
                x: xs.clone(),
                p_x: 2,
                w: vec![],
                p_w: 0,
                region: regions.clone(),
                q,
                exposure_names: vec![],
                confounder_names: vec![],
            };
            let ok = q >= 2 && xs.iter().all(|&v| v >= 0 && v < q as i64) && regions.iter().all(|&r| r < 3);
            prop_assert_eq!(ds.violations(3).is_empty(), ok);
        }
    }
}
