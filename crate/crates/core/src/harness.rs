//! Config-driven experiment runner behind the `amr` binary.
//!
//! A run config is one JSON document; unknown keys anywhere are rejected.
//! Every command validates the whole config (and every sweep point) before
//! training anything. Output files are written to a temporary name and then
//! renamed into place.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    gen_permuted_classification, gen_rotated_regression, load_manifest, PermutedClassificationSpec,
    RotatedRegressionSpec, TaskDataset,
};
use crate::error::{Error, Result};
use crate::metrics::{self, ExperimentResult, RESULT_SCHEMA_VERSION};
use crate::trainer::{pretrained_model, run_from_pretrained, StrategyKind, TrainConfig};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Overrides the config's `output_dir` when set.
pub const OUTPUT_DIR_ENV: &str = "AMR_OUTPUT_DIR";

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    RotatedRegression(RotatedRegressionSpec),
    PermutedClassification(PermutedClassificationSpec),
    Manifest { path: PathBuf },
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

fn default_schema_version() -> u32 {
    CONFIG_SCHEMA_VERSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    pub dataset: DatasetSpec,
    /// Fixed generator seed; when absent each run seed also seeds the data.
    #[serde(default)]
    pub dataset_seed: Option<u64>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Run seeds and strategies on the rayon pool.
    #[serde(default)]
    pub parallel: bool,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)
            .map_err(|e| Error::config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file. Relative manifest paths resolve
    /// against the config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)
            .map_err(|e| Error::config(format!("{}: {}", path.display(), strip_prefix(&e))))?;
        if let DatasetSpec::Manifest { path: m } = &mut cfg.dataset {
            if m.is_relative() {
                if let Some(dir) = path.parent() {
                    *m = dir.join(&*m);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::config(format!(
                "unsupported schema_version {} (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds must not be empty"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::config("seeds must be distinct"));
        }
        self.train.validate()?;
        match &self.dataset {
            DatasetSpec::RotatedRegression(s) if s.num_tasks < 2 => {
                Err(Error::config("dataset needs at least 2 tasks"))
            }
            DatasetSpec::PermutedClassification(s) if s.num_tasks < 2 => {
                Err(Error::config("dataset needs at least 2 tasks"))
            }
            _ => Ok(()),
        }
    }

    /// Applies the output-directory environment override.
    pub fn apply_env(&mut self) {
        if let Ok(dir) = std::env::var(OUTPUT_DIR_ENV) {
            if !dir.is_empty() {
                self.output_dir = PathBuf::from(dir);
            }
        }
    }

    fn train_for(&self, strategy: StrategyKind, seed: u64) -> TrainConfig {
        TrainConfig {
            strategy,
            seed,
            ..self.train.clone()
        }
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}

/// The task sequence used for `seed`.
pub fn build_tasks(cfg: &RunConfig, seed: u64) -> Result<Vec<TaskDataset>> {
    let data_seed = cfg.dataset_seed.unwrap_or(seed);
    match &cfg.dataset {
        DatasetSpec::RotatedRegression(s) => gen_rotated_regression(s, data_seed),
        DatasetSpec::PermutedClassification(s) => gen_permuted_classification(s, data_seed),
        DatasetSpec::Manifest { path } => load_manifest(path),
    }
}

/// Maps an error to the process exit code.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Usage(_) | Error::Load { .. } => EXIT_CONFIG,
        Error::Numeric { .. } | Error::Divergence { .. } => EXIT_NUMERIC,
        Error::Io { .. } | Error::Internal(_) => EXIT_FAILURE,
    }
}

fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("results serialize");
    s.push('\n');
    s.into_bytes()
}

fn map_jobs<J, T, F>(jobs: Vec<J>, parallel: bool, f: F) -> Result<Vec<T>>
where
    J: Send + Sync,
    T: Send,
    F: Fn(&J) -> Result<T> + Send + Sync,
{
    if parallel {
        jobs.par_iter().map(&f).collect()
    } else {
        jobs.iter().map(f).collect()
    }
}

/// All six strategies on one seed's tasks, normalized against that seed's
/// Oracle and Base rows. Results come back in [`StrategyKind::ALL`] order.
pub fn compare_seed(
    tasks: &[TaskDataset],
    train: &TrainConfig,
    seed: u64,
    parallel: bool,
) -> Result<Vec<ExperimentResult>> {
    let base_cfg = TrainConfig {
        seed,
        ..train.clone()
    };
    let pretrained = pretrained_model(tasks, &base_cfg)?;
    let mut results = map_jobs(StrategyKind::ALL.to_vec(), parallel, |s| {
        let cfg = TrainConfig {
            strategy: *s,
            ..base_cfg.clone()
        };
        run_from_pretrained(tasks, &cfg, &pretrained)
    })?;
    let oracle = results[0].clone();
    let base = results[1].clone();
    for r in &mut results {
        metrics::normalize_result(r, &oracle, &base)?;
    }
    Ok(results)
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub results: Vec<ExperimentResult>,
    pub files: Vec<PathBuf>,
}

/// Runs the configured strategy once per seed.
pub fn cmd_run(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let strategy = cfg.train.strategy;
    let datasets = cfg
        .seeds
        .iter()
        .map(|s| build_tasks(cfg, *s))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(u64, &Vec<TaskDataset>)> = cfg.seeds.iter().copied().zip(&datasets).collect();
    let results = map_jobs(jobs, cfg.parallel, |(seed, tasks)| {
        crate::trainer::run_sequence(tasks, &cfg.train_for(strategy, *seed))
    })?;

    let mut files = Vec::new();
    for r in &results {
        let p = cfg
            .output_dir
            .join(format!("run_{}_seed{}.json", strategy, r.seed));
        write_atomic(&p, &to_json(r))?;
        files.push(p);
    }
    let p = cfg.output_dir.join(format!("run_{strategy}_summary.csv"));
    write_atomic(&p, run_summary_csv(&results).as_bytes())?;
    files.push(p);
    Ok(RunOutput { results, files })
}

fn run_summary_csv(results: &[ExperimentResult]) -> String {
    let mut out = String::from(
        "schema_version,strategy,seed,final_loss_raw,forgetting_raw,total_passes,selecting_passes,training_passes\n",
    );
    for r in results {
        let _ = writeln!(
            out,
            "{},{},{},{:.6},{:.6},{},{},{}",
            RESULT_SCHEMA_VERSION,
            r.strategy,
            r.seed,
            r.final_loss_raw,
            r.forgetting_raw,
            r.ledger.total(),
            r.ledger.selecting_passes,
            r.ledger.training_passes
        );
    }
    let n = results.len() as f64;
    let mean = |f: &dyn Fn(&ExperimentResult) -> f64| results.iter().map(f).sum::<f64>() / n;
    if let Some(first) = results.first() {
        let _ = writeln!(
            out,
            "{},{},mean,{:.6},{:.6},{:.1},{:.1},{:.1}",
            RESULT_SCHEMA_VERSION,
            first.strategy,
            mean(&|r| r.final_loss_raw),
            mean(&|r| r.forgetting_raw),
            mean(&|r| r.ledger.total() as f64),
            mean(&|r| r.ledger.selecting_passes as f64),
            mean(&|r| r.ledger.training_passes as f64),
        );
    }
    out
}

/// One row of the comparison table (per seed, or averaged over seeds).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub strategy: StrategyKind,
    /// `None` for the mean over seeds.
    pub seed: Option<u64>,
    pub final_loss_pct: f64,
    pub forgetting_pct: f64,
    pub time_total_pct: f64,
    pub time_selecting_pct: f64,
    pub time_training_pct: f64,
    pub final_loss_raw: f64,
    pub forgetting_raw: f64,
    pub selecting_passes: f64,
    pub training_passes: f64,
}

impl TableRow {
    fn from_result(r: &ExperimentResult) -> Self {
        let n = r.normalized.expect("compare results are normalized");
        Self {
            strategy: r.strategy,
            seed: Some(r.seed),
            final_loss_pct: n.final_loss_pct,
            forgetting_pct: n.forgetting_pct,
            time_total_pct: n.time_pct.total,
            time_selecting_pct: n.time_pct.selecting,
            time_training_pct: n.time_pct.training,
            final_loss_raw: r.final_loss_raw,
            forgetting_raw: r.forgetting_raw,
            selecting_passes: r.ledger.selecting_passes as f64,
            training_passes: r.ledger.training_passes as f64,
        }
    }

    fn mean(rows: &[TableRow]) -> Self {
        let n = rows.len() as f64;
        let avg = |f: fn(&TableRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        let selecting = avg(|r| r.time_selecting_pct);
        let training = avg(|r| r.time_training_pct);
        Self {
            strategy: rows[0].strategy,
            seed: None,
            final_loss_pct: avg(|r| r.final_loss_pct),
            forgetting_pct: avg(|r| r.forgetting_pct),
            time_total_pct: selecting + training,
            time_selecting_pct: selecting,
            time_training_pct: training,
            final_loss_raw: avg(|r| r.final_loss_raw),
            forgetting_raw: avg(|r| r.forgetting_raw),
            selecting_passes: avg(|r| r.selecting_passes),
            training_passes: avg(|r| r.training_passes),
        }
    }

    fn csv_fields(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.1},{:.1}",
            self.strategy,
            self.final_loss_pct,
            self.forgetting_pct,
            self.time_total_pct,
            self.time_selecting_pct,
            self.time_training_pct,
            self.final_loss_raw,
            self.forgetting_raw,
            self.selecting_passes,
            self.training_passes
        )
    }
}

const TABLE_COLUMNS: &str = "strategy,final_loss_pct,forgetting_pct,time_total_pct,time_selecting_pct,time_training_pct,final_loss_raw,forgetting_raw,selecting_passes,training_passes";

fn table_csv(rows: &[TableRow]) -> String {
    let mut out = format!("schema_version,seed,{TABLE_COLUMNS}\n");
    for r in rows {
        let seed = r.seed.map_or_else(|| "mean".to_string(), |s| s.to_string());
        let _ = writeln!(out, "{RESULT_SCHEMA_VERSION},{seed},{}", r.csv_fields());
    }
    out
}

/// Human-readable table of the mean rows.
pub fn render_table(rows: &[TableRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<20} {:>11} {:>11} {:>9} {:>10} {:>9}",
        "approach", "final loss", "forgetting", "time", "selecting", "training"
    );
    for r in rows.iter().filter(|r| r.seed.is_none()) {
        let _ = writeln!(
            out,
            "{:<20} {:>10.2}% {:>10.2}% {:>8.2}% {:>9.2}% {:>8.2}%",
            r.strategy.name(),
            r.final_loss_pct,
            r.forgetting_pct,
            r.time_total_pct,
            r.time_selecting_pct,
            r.time_training_pct
        );
    }
    out
}

#[derive(Debug, Clone)]
pub struct CompareOutput {
    /// `results[i]` holds the six strategies for `seeds[i]`.
    pub results: Vec<Vec<ExperimentResult>>,
    /// Per-seed rows followed by one mean row per strategy.
    pub rows: Vec<TableRow>,
    pub files: Vec<PathBuf>,
}

fn compare_all(cfg: &RunConfig, train: &TrainConfig) -> Result<Vec<Vec<ExperimentResult>>> {
    let datasets = cfg
        .seeds
        .iter()
        .map(|s| build_tasks(cfg, *s))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(u64, &Vec<TaskDataset>)> = cfg.seeds.iter().copied().zip(&datasets).collect();
    map_jobs(jobs, cfg.parallel, |(seed, tasks)| {
        compare_seed(tasks, train, *seed, cfg.parallel)
    })
}

fn table_rows(per_seed: &[Vec<ExperimentResult>]) -> Vec<TableRow> {
    let mut rows: Vec<TableRow> = per_seed
        .iter()
        .flat_map(|rs| rs.iter().map(TableRow::from_result))
        .collect();
    for s in StrategyKind::ALL {
        let of: Vec<TableRow> = rows.iter().filter(|r| r.strategy == s).cloned().collect();
        rows.push(TableRow::mean(&of));
    }
    rows
}

/// Runs all six strategies on every seed and writes the comparison table.
pub fn cmd_compare(cfg: &RunConfig) -> Result<CompareOutput> {
    cfg.validate()?;
    let results = compare_all(cfg, &cfg.train)?;
    let rows = table_rows(&results);
    let mut files = Vec::new();
    for (seed, rs) in cfg.seeds.iter().zip(&results) {
        let p = cfg.output_dir.join(format!("compare_seed{seed}.json"));
        write_atomic(&p, &to_json(rs))?;
        files.push(p);
    }
    let p = cfg.output_dir.join("compare_table.csv");
    write_atomic(&p, table_csv(&rows).as_bytes())?;
    files.push(p);
    Ok(CompareOutput {
        results,
        rows,
        files,
    })
}

/// Hyperparameter grid; omitted axes keep the config's value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    #[serde(default)]
    pub replay_fraction: Option<Vec<f64>>,
    #[serde(default)]
    pub probes_per_cluster: Option<Vec<usize>>,
    #[serde(default)]
    pub probe_every: Option<Vec<usize>>,
    #[serde(default)]
    pub temperature: Option<Vec<f64>>,
    #[serde(default)]
    pub beta: Option<Vec<f64>>,
}

impl SweepGrid {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read grid {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::config(format!("{}: invalid grid: {e}", path.display())))
    }

    /// Cartesian product of the axes applied to `base`.
    pub fn points(&self, base: &TrainConfig) -> Result<Vec<TrainConfig>> {
        fn axis<T: Copy>(values: &Option<Vec<T>>, current: T, name: &str) -> Result<Vec<T>> {
            match values {
                Some(v) if v.is_empty() => Err(Error::config(format!("grid axis {name} is empty"))),
                Some(v) => Ok(v.clone()),
                None => Ok(vec![current]),
            }
        }
        let rf = axis(
            &self.replay_fraction,
            base.replay_fraction,
            "replay_fraction",
        )?;
        let pc = axis(
            &self.probes_per_cluster,
            base.probes_per_cluster,
            "probes_per_cluster",
        )?;
        let pe = axis(&self.probe_every, base.probe_every, "probe_every")?;
        let tt = axis(&self.temperature, base.temperature, "temperature")?;
        let bb = axis(&self.beta, base.beta, "beta")?;
        let mut out = Vec::new();
        for &replay_fraction in &rf {
            for &probes_per_cluster in &pc {
                for &probe_every in &pe {
                    for &temperature in &tt {
                        for &beta in &bb {
                            let point = TrainConfig {
                                replay_fraction,
                                probes_per_cluster,
                                probe_every,
                                temperature,
                                beta,
                                ..base.clone()
                            };
                            for s in StrategyKind::ALL {
                                TrainConfig {
                                    strategy: s,
                                    ..point.clone()
                                }
                                .validate()?;
                            }
                            out.push(point);
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub points: Vec<TrainConfig>,
    /// `results[p][s]` holds the six strategies of grid point `p`, seed index `s`.
    pub results: Vec<Vec<Vec<ExperimentResult>>>,
    pub rows: usize,
    pub file: PathBuf,
}

/// One compare run per grid point, flattened into a long-format CSV.
pub fn cmd_sweep(cfg: &RunConfig, grid: &SweepGrid) -> Result<SweepOutput> {
    cfg.validate()?;
    let points = grid.points(&cfg.train)?;
    let mut results = Vec::with_capacity(points.len());
    for p in &points {
        results.push(compare_all(cfg, p)?);
    }

    let mut csv = format!(
        "schema_version,point,replay_fraction,probes_per_cluster,probe_every,temperature,beta,seed,{TABLE_COLUMNS},iterations,training_passes_per_iteration\n"
    );
    let mut rows = 0;
    for (i, (p, per_seed)) in points.iter().zip(&results).enumerate() {
        for rs in per_seed {
            for r in rs {
                let row = TableRow::from_result(r);
                let iterations: usize = r.task_reports.iter().map(|t| t.iterations).sum();
                let per_iter = if iterations == 0 {
                    0.0
                } else {
                    r.ledger.training_passes as f64 / iterations as f64
                };
                let _ = writeln!(
                    csv,
                    "{RESULT_SCHEMA_VERSION},{i},{},{},{},{},{},{},{},{iterations},{per_iter:.1}",
                    p.replay_fraction,
                    p.probes_per_cluster,
                    p.probe_every,
                    p.temperature,
                    p.beta,
                    r.seed,
                    row.csv_fields()
                );
                rows += 1;
            }
        }
    }
    let file = cfg.output_dir.join("sweep.csv");
    write_atomic(&file, csv.as_bytes())?;
    Ok(SweepOutput {
        points,
        results,
        rows,
        file,
    })
}
