//! Command-line front end: argument parsing, versioned JSON configs, and one
//! run manifest per invocation.
//!
//! Exit codes: 0 success, 1 runtime or validation failure, 2 usage error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use clap::{ArgAction, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::car::CarSpec;
use crate::data::{fmt_f64, load_dataset, read_numeric_csv, save_dataset, DatasetPaths, ModelSpec, PosteriorDraws};
use crate::diagnostics::split_rhat;
use crate::error::{Error, Result};
use crate::graph::RegionGraph;
use crate::model::{fit_model, ModelKind};
use crate::par;
use crate::posterior::{mixture_effect_draws, pooled_effect, quantile_sorted, summarize, waic_of};
use crate::quantize::quantize_columns;
use crate::simlab::{gen_dataset, replicate_path, run_experiment, ExperimentConfig, SimConfig, Truth};

/// Version every config file must declare.
pub const SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Parser)]
#[command(name = "svqgc", version, about = "Spatially varying quantile g-computation")]
pub struct Cli {
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Progress messages on standard error (repeat for more).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Recode continuous exposures to quantile levels 0..Q-1.
    Quantize {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        q: u32,
        #[arg(long)]
        output: PathBuf,
        /// Cut points per exposure, as JSON.
        #[arg(long)]
        edges: PathBuf,
    },
    /// Rook-adjacency grid as an `i,j` edge list.
    MakeGrid {
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        cols: usize,
        /// Output file; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate simulation replicates and their true surfaces.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a model and save posterior draws.
    Fit {
        #[arg(long)]
        model: ModelKind,
        /// Directory with y.csv, exposures.csv, region.csv and optional confounders.csv.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-region mixture-effect summaries from saved draws.
    Summarize {
        #[arg(long)]
        draws: PathBuf,
        /// CSV of `region,weight` for the pooled effect.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write per-region draw quantiles for plotting.
        #[arg(long)]
        plot_data: bool,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
    },
    /// Coverage / error study over a simulation design.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// WAIC of one or more saved fits.
    Waic {
        #[arg(long, required = true, num_args = 1..)]
        draws: Vec<PathBuf>,
        /// Output CSV; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Settings of `svqgc fit`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub model: ModelSpec,
    pub car: CarSpec,
    /// Bin count of the quantized exposures; inferred from the data if absent.
    pub q: Option<u32>,
}

/// Parses a config file: a JSON object with `schema_version` plus the
/// fields of `T`. Unknown keys are errors. Returns the value and its full
/// echo with defaults filled in.
pub fn load_config<T: DeserializeOwned + Serialize>(path: &Path) -> Result<(T, Value)> {
    let text = fs::read_to_string(path).map_err(|e| cfg_err(path, format!("cannot read: {e}")))?;
    let mut value: Value =
        serde_json::from_str(&text).map_err(|e| cfg_err(path, format!("invalid JSON: {e}")))?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| cfg_err(path, "expected a JSON object"))?;
    match obj.remove("schema_version") {
        None => return Err(cfg_err(path, "missing schema_version")),
        Some(v) if v.as_u64() == Some(SCHEMA_VERSION) => {}
        Some(v) => {
            return Err(cfg_err(
                path,
                format!("incompatible schema_version {v} (this build reads version {SCHEMA_VERSION})"),
            ))
        }
    }
    let parsed: T = serde_json::from_value(value).map_err(|e| cfg_err(path, e))?;
    let mut echo = serde_json::to_value(&parsed)?;
    if let Some(o) = echo.as_object_mut() {
        o.insert("schema_version".into(), json!(SCHEMA_VERSION));
    }
    Ok((parsed, echo))
}

fn cfg_err(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{}: {msg}", path.display()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

pub fn digest(path: &Path) -> Result<FileDigest> {
    let body = fs::read(path).map_err(|e| Error::file(path, e.to_string()))?;
    Ok(FileDigest {
        path: path.display().to_string(),
        bytes: body.len() as u64,
        sha256: hex::encode(Sha256::digest(&body)),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub status: String,
    pub error: Option<String>,
    pub software: String,
    pub version: String,
    pub arguments: Vec<String>,
    pub threads: usize,
    pub seed: Option<u64>,
    pub config: Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub started_at: String,
    pub finished_at: String,
    #[serde(default)]
    pub results: Value,
}

/// Collects manifest fields while a subcommand runs.
struct Run {
    manifest: RunManifest,
    manifest_path: Option<PathBuf>,
}

impl Run {
    fn new(subcommand: &str, arguments: &[String], threads: usize) -> Self {
        Run {
            manifest: RunManifest {
                subcommand: subcommand.into(),
                status: "running".into(),
                error: None,
                software: env!("CARGO_PKG_NAME").into(),
                version: env!("CARGO_PKG_VERSION").into(),
                arguments: arguments.to_vec(),
                threads,
                seed: None,
                config: Value::Null,
                inputs: Vec::new(),
                outputs: Vec::new(),
                started_at: now(),
                finished_at: String::new(),
                results: Value::Null,
            },
            manifest_path: None,
        }
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        self.manifest.inputs.push(digest(path)?);
        Ok(())
    }

    fn output(&mut self, path: &Path) -> Result<()> {
        self.manifest.outputs.push(digest(path)?);
        Ok(())
    }

    fn finish(mut self, outcome: &Result<()>) -> Result<()> {
        let Some(path) = self.manifest_path.take() else {
            return Ok(());
        };
        self.manifest.finished_at = now();
        match outcome {
            Ok(()) => self.manifest.status = "ok".into(),
            Err(e) => {
                self.manifest.status = "failed".into();
                self.manifest.error = Some(e.to_string());
            }
        }
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, serde_json::to_string_pretty(&self.manifest)? + "\n")?;
        Ok(())
    }
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// `summary.csv` -> `summary.<suffix>`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    path.with_extension(suffix)
}

struct StderrLogger;

static LOGGER: StderrLogger = StderrLogger;

impl log::Log for StderrLogger {
    fn enabled(&self, m: &log::Metadata) -> bool {
        m.level() <= log::max_level()
    }

    fn log(&self, r: &log::Record) {
        if self.enabled(r.metadata()) {
            eprintln!("[{}] {}", r.level().as_str().to_lowercase(), r.args());
        }
    }

    fn flush(&self) {}
}

fn init_logger(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    if log::set_logger(&LOGGER).is_ok() {
        log::set_max_level(level);
    }
}

/// Parses `args` (program name first), runs the subcommand, and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    init_logger(cli.verbose);
    let arguments: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match par::with_threads(cli.threads, || execute(&cli, &arguments)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn execute(cli: &Cli, arguments: &[String]) -> Result<()> {
    let name = match &cli.command {
        Command::Quantize { .. } => "quantize",
        Command::MakeGrid { .. } => "make-grid",
        Command::Simulate { .. } => "simulate",
        Command::Fit { .. } => "fit",
        Command::Summarize { .. } => "summarize",
        Command::Experiment { .. } => "experiment",
        Command::Waic { .. } => "waic",
    };
    let mut run = Run::new(name, arguments, cli.threads);
    let outcome = match &cli.command {
        Command::Quantize { input, q, output, edges } => cmd_quantize(&mut run, input, *q, output, edges),
        Command::MakeGrid { rows, cols, out } => cmd_make_grid(&mut run, *rows, *cols, out.as_deref()),
        Command::Simulate { config, out } => cmd_simulate(&mut run, config, out),
        Command::Fit { model, data, graph, config, out } => {
            cmd_fit(&mut run, *model, data, graph, config.as_deref(), out)
        }
        Command::Summarize { draws, weights, out, plot_data, level } => {
            cmd_summarize(&mut run, draws, weights.as_deref(), out, *plot_data, *level)
        }
        Command::Experiment { config, out } => cmd_experiment(&mut run, config, out),
        Command::Waic { draws, out } => cmd_waic(&mut run, draws, out.as_deref()),
    };
    run.finish(&outcome)?;
    outcome
}

fn cmd_quantize(run: &mut Run, input: &Path, q: u32, output: &Path, edges_path: &Path) -> Result<()> {
    run.manifest_path = Some(sibling(output, "manifest.json"));
    run.manifest.config = json!({ "q": q });
    run.input(input)?;
    let (names, values) = read_numeric_csv(input)?;
    let (levels, edges) = quantize_columns(&values, names.len(), q)
        .map_err(|e| Error::file(input, e.to_string()))?;
    let p = names.len();

    let mut w = csv::Writer::from_path(output)?;
    w.write_record(&names)?;
    for row in levels.chunks(p) {
        w.write_record(row.iter().map(u32::to_string))?;
    }
    w.flush()?;
    run.output(output)?;

    let cuts: Vec<Value> = names
        .iter()
        .zip(&edges)
        .map(|(n, e)| json!({ "exposure": n, "q": e.q, "edges": e.edges }))
        .collect();
    fs::write(edges_path, serde_json::to_string_pretty(&cuts)? + "\n")?;
    run.output(edges_path)
}

fn cmd_make_grid(run: &mut Run, rows: usize, cols: usize, out: Option<&Path>) -> Result<()> {
    let g = RegionGraph::grid(rows, cols)?;
    run.manifest.config = json!({ "rows": rows, "cols": cols });
    match out {
        Some(path) => {
            run.manifest_path = Some(sibling(path, "manifest.json"));
            g.write_csv(path)?;
            run.output(path)?;
        }
        None => {
            let mut w = csv::Writer::from_writer(std::io::stdout().lock());
            w.write_record(["i", "j"])?;
            for &(a, b) in g.edges() {
                w.write_record([a.to_string(), b.to_string()])?;
            }
            w.flush()?;
        }
    }
    eprintln!("{} regions, {} edges", g.n_regions(), g.edges().len());
    Ok(())
}

fn cmd_simulate(run: &mut Run, config: &Path, out: &Path) -> Result<()> {
    run.manifest_path = Some(out.join("manifest.json"));
    run.input(config)?;
    let (cfg, echo): (SimConfig, Value) = load_config(config)?;
    run.manifest.config = echo;
    run.manifest.seed = Some(cfg.seed);
    cfg.validate()?;
    fs::create_dir_all(out)?;

    let graph_path = out.join("graph.csv");
    cfg.graph()?.write_csv(&graph_path)?;
    run.output(&graph_path)?;
    let truth_path = out.join("truth.csv");
    Truth::grid(cfg.rows, cfg.cols).write_csv(&truth_path, cfg.cols)?;
    run.output(&truth_path)?;

    let datasets = par::map_indices(cfg.replicates, |b| gen_dataset(&cfg, b));
    for (b, ds) in datasets.into_iter().enumerate() {
        let (data, _) = ds?;
        let paths = save_dataset(&data, &out.join(format!("rep_{b:04}")))?;
        for p in paths.all() {
            run.output(p)?;
        }
    }
    Ok(())
}

/// Split R-hat of `sigma2` and the largest one over all `beta` entries.
fn convergence(draws: &PosteriorDraws) -> Value {
    let nc = draws.n_chains();
    let by_chain = |f: &dyn Fn(usize) -> f64| -> Vec<Vec<f64>> {
        let mut chains = vec![Vec::new(); nc];
        for d in 0..draws.n_draws {
            chains[draws.chain[d]].push(f(d));
        }
        chains
    };
    let sigma2 = split_rhat(&by_chain(&|d| draws.sigma2[d]));
    let mut beta_max: Option<f64> = None;
    for p in 0..draws.n_coef {
        for r in 0..draws.n_regions {
            if let Some(v) = split_rhat(&by_chain(&|d| draws.beta(d, p, r))) {
                beta_max = Some(beta_max.map_or(v, |m| m.max(v)));
            }
        }
    }
    json!({ "split_rhat_sigma2": sigma2, "split_rhat_beta_max": beta_max })
}

fn cmd_fit(
    run: &mut Run,
    model: ModelKind,
    data_dir: &Path,
    graph_path: &Path,
    config: Option<&Path>,
    out: &Path,
) -> Result<()> {
    run.manifest_path = Some(out.join("manifest.json"));
    let cfg: FitConfig = match config {
        Some(path) => {
            run.input(path)?;
            let (cfg, echo) = load_config(path)?;
            run.manifest.config = echo;
            cfg
        }
        None => {
            let cfg = FitConfig::default();
            let mut echo = serde_json::to_value(&cfg)?;
            echo["schema_version"] = json!(SCHEMA_VERSION);
            run.manifest.config = echo;
            cfg
        }
    };
    run.manifest.config["model_kind"] = json!(model);
    run.manifest.seed = Some(cfg.model.seed);

    run.input(graph_path)?;
    let graph = RegionGraph::read_csv(graph_path, None)?;
    let paths = DatasetPaths::in_dir(data_dir);
    for p in paths.all() {
        run.input(p)?;
    }
    let data = load_dataset(&paths, cfg.q, Some(graph.n_regions()))?;
    let draws = fit_model(model, &data, &graph, &cfg.model, &cfg.car)?;

    let diagnostics = convergence(&draws);
    let extra = json!({
        "model": model,
        "seed": cfg.model.seed,
        "spec": run.manifest.config.clone(),
        "exposures": data.exposure_names,
        "confounders": data.confounder_names,
        "diagnostics": diagnostics,
    });
    for p in draws.write_dir(out, extra)? {
        run.output(&p)?;
    }
    run.manifest.results = diagnostics;
    Ok(())
}

/// Reads `region,weight` rows covering every region exactly once.
fn read_weights(path: &Path, n_regions: usize) -> Result<Vec<f64>> {
    let (names, values) = read_numeric_csv(path)?;
    if names.len() != 2 {
        return Err(Error::file(path, "expected two columns: region, weight"));
    }
    let mut w = vec![f64::NAN; n_regions];
    for (i, row) in values.chunks(2).enumerate() {
        let r = row[0];
        if r.fract() != 0.0 || r < 0.0 || r as usize >= n_regions {
            return Err(Error::file(path, format!("row {}: region id {r} out of range", i + 1)));
        }
        if !w[r as usize].is_nan() {
            return Err(Error::file(path, format!("row {}: region {r} listed twice", i + 1)));
        }
        w[r as usize] = row[1];
    }
    if let Some(r) = w.iter().position(|v| v.is_nan()) {
        return Err(Error::file(path, format!("no weight for region {r}")));
    }
    Ok(w)
}

const PLOT_PROBS: [f64; 9] = [0.025, 0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95, 0.975];

fn cmd_summarize(
    run: &mut Run,
    draws_dir: &Path,
    weights: Option<&Path>,
    out: &Path,
    plot_data: bool,
    level: f64,
) -> Result<()> {
    run.manifest_path = Some(sibling(out, "manifest.json"));
    run.manifest.config = json!({ "level": level, "weights": weights, "plot_data": plot_data });
    for name in ["draws.json", "beta.csv", "gamma.csv", "sigma2.csv"] {
        run.input(&draws_dir.join(name))?;
    }
    let draws = PosteriorDraws::read_dir(draws_dir)?;
    let psi = mixture_effect_draws(&draws);
    let summary = summarize(&psi, level)?;

    let mut w = csv::Writer::from_path(out)?;
    w.write_record(["region", "psi_mean", "psi_lo", "psi_hi", "sign_flag"])?;
    for (r, s) in summary.regions.iter().enumerate() {
        w.write_record([r.to_string(), fmt_f64(s.mean), fmt_f64(s.lower), fmt_f64(s.upper), s.sign.to_string()])?;
    }
    w.flush()?;
    run.output(out)?;

    let pooled_path = sibling(out, "pooled.csv");
    let mut w = csv::Writer::from_path(&pooled_path)?;
    w.write_record(["weighting", "psi_mean", "psi_lo", "psi_hi", "sign_flag"])?;
    let mut rows = vec![("equal", pooled_effect(&psi, None, level)?)];
    if let Some(path) = weights {
        run.input(path)?;
        let wt = read_weights(path, draws.n_regions)?;
        rows.push(("weighted", pooled_effect(&psi, Some(&wt), level)?));
    }
    for (name, s) in rows {
        w.write_record([name.to_string(), fmt_f64(s.mean), fmt_f64(s.lower), fmt_f64(s.upper), s.sign.to_string()])?;
    }
    w.flush()?;
    run.output(&pooled_path)?;

    if plot_data {
        let path = sibling(out, "quantiles.csv");
        let mut w = csv::Writer::from_path(&path)?;
        let mut header = vec!["region".to_string()];
        header.extend(PLOT_PROBS.iter().map(|p| format!("q{p}")));
        w.write_record(&header)?;
        for r in 0..psi.n_regions {
            let mut col = psi.column(r);
            col.sort_by(f64::total_cmp);
            let mut row = vec![r.to_string()];
            row.extend(PLOT_PROBS.iter().map(|&p| fmt_f64(quantile_sorted(&col, p))));
            w.write_record(&row)?;
        }
        w.flush()?;
        run.output(&path)?;
    }
    Ok(())
}

fn cmd_experiment(run: &mut Run, config: &Path, out: &Path) -> Result<()> {
    run.manifest_path = Some(out.join("manifest.json"));
    run.input(config)?;
    let (cfg, echo): (ExperimentConfig, Value) = load_config(config)?;
    run.manifest.config = echo;
    run.manifest.seed = Some(cfg.seed);
    fs::create_dir_all(out)?;

    let result = run_experiment(&cfg, Some(out))?;
    let results = out.join("results.csv");
    result.write_tidy_csv(&results)?;
    run.output(&results)?;
    let status = out.join("status.csv");
    result.write_status_csv(&status)?;
    run.output(&status)?;
    for s in cfg.settings() {
        for &m in &cfg.models {
            for b in 0..cfg.replicates {
                run.output(&replicate_path(out, &s, m, b))?;
            }
        }
    }
    let failures: Vec<Value> = result
        .groups
        .iter()
        .flat_map(|g| g.failures.iter().map(|(_, e)| json!(e)))
        .collect();
    run.manifest.results = json!({ "failed_replicates": failures });
    Ok(())
}

fn cmd_waic(run: &mut Run, dirs: &[PathBuf], out: Option<&Path>) -> Result<()> {
    let mut rows = Vec::new();
    for dir in dirs {
        for name in ["draws.json", "loglik.csv"] {
            let p = dir.join(name);
            if p.exists() {
                run.input(&p)?;
            }
        }
        let draws = PosteriorDraws::read_dir(dir)?;
        let w = waic_of(&draws).map_err(|e| Error::file(dir, e.to_string()))?;
        rows.push([dir.display().to_string(), fmt_f64(w.waic), fmt_f64(w.lppd), fmt_f64(w.p_waic)]);
    }
    let header = ["draws", "waic", "lppd", "p_waic"];
    match out {
        Some(path) => {
            run.manifest_path = Some(sibling(path, "manifest.json"));
            let mut w = csv::Writer::from_path(path)?;
            w.write_record(header)?;
            for r in &rows {
                w.write_record(r)?;
            }
            w.flush()?;
            run.output(path)?;
        }
        None => {
            let mut w = csv::Writer::from_writer(std::io::stdout().lock());
            w.write_record(header)?;
            for r in &rows {
                w.write_record(r)?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn config_defaults_and_rejections() {
        let dir = tempfile::tempdir().unwrap();
        let ok = write(dir.path(), "ok.json", r#"{"schema_version": 1, "model": {"n_trees": 7}}"#);
        let (cfg, echo): (FitConfig, Value) = load_config(&ok).unwrap();
        assert_eq!(cfg.model.n_trees, 7);
        assert_eq!(cfg.model.n_burn, ModelSpec::default().n_burn);
        assert_eq!(echo["model"]["n_save"], json!(1000));
        assert_eq!(echo["schema_version"], json!(1));

        let typo = write(dir.path(), "typo.json", r#"{"schema_version": 1, "model": {"ntrees": 7}}"#);
        let e = load_config::<FitConfig>(&typo).unwrap_err().to_string();
        assert!(e.contains("ntrees"), "{e}");

        let top = write(dir.path(), "top.json", r#"{"schema_version": 1, "ntrees": 7}"#);
        assert!(load_config::<FitConfig>(&top).unwrap_err().to_string().contains("ntrees"));

        let v2 = write(dir.path(), "v2.json", r#"{"schema_version": 2}"#);
        assert!(load_config::<FitConfig>(&v2).unwrap_err().to_string().contains("incompatible schema_version"));
        let none = write(dir.path(), "none.json", r#"{}"#);
        assert!(load_config::<FitConfig>(&none).unwrap_err().to_string().contains("missing schema_version"));
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["svqgc", "make-grid", "--rows", "2", "--bogus"]), 2);
        assert_eq!(run(["svqgc"]), 2);
        assert_eq!(run(["svqgc", "fit", "--model", "glm", "--data", "d", "--graph", "g", "--out", "o"]), 2);
    }

    #[test]
    fn weights_must_cover_regions() {
        let dir = tempfile::tempdir().unwrap();
        let ok = write(dir.path(), "w.csv", "region,weight\n1,3\n0,1\n");
        assert_eq!(read_weights(&ok, 2).unwrap(), vec![1.0, 3.0]);
        let missing = write(dir.path(), "m.csv", "region,weight\n0,1\n");
        assert!(read_weights(&missing, 2).is_err());
        let dup = write(dir.path(), "d.csv", "region,weight\n0,1\n0,2\n");
        assert!(read_weights(&dup, 2).is_err());
    }
}
