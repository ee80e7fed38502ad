//! Repeated hold-out experiments over embedding dimensions.
//!
//! For every number of added dimensions `p` and every repetition the driver
//! splits the data, samples an embedding, selects hyperparameters on the
//! training part and reports the test error of the selected model.
//! Regression labels are standardized once up front, so errors are on the
//! standardized scale and the naive error is 1.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{self, naive_error, scale_to_unit_box, Dataset, SplitSpec, Standardizer, Task};
use crate::embedding::sample_embedding;
use crate::error::{Error, Result};
use crate::local_model::CellPolicy;
use crate::model_selection::{kfold_cv, make_grids, train_validate, HyperGrid, SelectionResult};
use crate::partition::{estimate_dimension, DimensionEstimate};
use crate::rng;
use crate::solvers::{rmse, zero_one_error, SolverConfig};
use crate::synthetic::SyntheticKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Csv { path: PathBuf, has_header: bool },
    Synthetic { kind: SyntheticKind, n: usize, seed: u64 },
}

impl DataSource {
    pub fn load(&self, task: Task) -> Result<Dataset> {
        match self {
            DataSource::Csv { path, has_header } => dataset::load_csv(path, task, *has_header),
            DataSource::Synthetic { kind, n, seed } => {
                if kind.task() != task {
                    return Err(Error::invalid(format!(
                        "synthetic {kind:?} data is a {:?} task",
                        kind.task()
                    )));
                }
                kind.generate(*n, *seed)
            }
        }
    }

    /// Stable name used to derive embedding seeds.
    pub fn name(&self) -> String {
        match self {
            DataSource::Csv { path, .. } => path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            DataSource::Synthetic { kind, n, seed } => format!("synthetic-{kind:?}-{n}-{seed}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridPolicy {
    /// `Γ_n`, `Λ_n` from the `1/ln n` exponent nets.
    ExponentNets,
    /// 10 log-spaced bandwidths in `[0.05·s, 2·s]`, with `s` the RMS distance
    /// of the training inputs to their mean, and 10 log-spaced regularizers
    /// in `[10⁻³/n, 10⁻²]`.
    Geometric10x10,
}

impl GridPolicy {
    pub fn grid_for(&self, train: &Dataset, sigma: f64) -> Result<HyperGrid> {
        match self {
            GridPolicy::ExponentNets => make_grids(train.len() as f64, train.dim(), sigma),
            GridPolicy::Geometric10x10 => {
                let x = train.features();
                let s = (0..x.dim())
                    .map(|c| dataset::mean_std(x.rows().map(|r| r[c])).1.powi(2))
                    .sum::<f64>()
                    .sqrt()
                    .max(1e-12);
                let n = train.len() as f64;
                HyperGrid::geometric((0.05 * s, 2.0 * s), (1e-3 / n, 1e-2), 10)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionPolicy {
    TrainValidate,
    Cv(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub task: Task,
    pub p_max: usize,
    /// Evaluate `p = 0, step, 2·step, …, p_max`.
    pub p_step: usize,
    pub repetitions: usize,
    pub test_fraction: f64,
    pub cells: CellPolicy,
    pub grid: GridPolicy,
    pub selection: SelectionPolicy,
    pub seed: u64,
    /// Standardize embedded features with training-set statistics.
    pub standardize: bool,
    /// Reuse one embedding per `p` across repetitions.
    pub share_embedding: bool,
    /// Worker threads; 0 means the rayon default.
    pub threads: usize,
    pub solver: SolverConfig,
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(data: DataSource, task: Task) -> Self {
        Self {
            data,
            task,
            p_max: 50,
            p_step: 1,
            repetitions: 10,
            test_fraction: 0.2,
            cells: CellPolicy::Cap(4000),
            grid: GridPolicy::Geometric10x10,
            selection: SelectionPolicy::Cv(5),
            seed: 0,
            standardize: true,
            share_embedding: false,
            threads: 0,
            solver: SolverConfig::default(),
            output: None,
        }
    }

    pub fn p_values(&self) -> Vec<usize> {
        (0..=self.p_max).step_by(self.p_step.max(1)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub p: usize,
    pub mean_error: f64,
    pub std_error: f64,
    pub naive_error: f64,
    pub base_error: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub m_cells: usize,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub p: usize,
    pub rep: usize,
    pub error: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub m_cells: usize,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedRun {
    pub p: usize,
    pub rep: usize,
    pub cause: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
    pub runs: Vec<RunRecord>,
    pub failures: Vec<FailedRun>,
    pub config: Option<ExperimentConfig>,
}

impl ExperimentReport {
    pub fn is_partial(&self) -> bool {
        !self.failures.is_empty()
    }
}

/// Labels standardized for regression; features mapped onto `[-1, 1]^d`.
pub fn prepare(ds: &Dataset) -> Result<Dataset> {
    let ds = scale_to_unit_box(ds)?;
    if ds.task() == Task::Regression && ds.len() >= 2 {
        let s = Standardizer::fit(&ds)?;
        Dataset::new(ds.features().clone(), s.transform_labels(ds.labels()), ds.task())
    } else {
        Ok(ds)
    }
}

fn name_tag(name: &str) -> u64 {
    // FNV-1a
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub fn embedding_seed(master: u64, dataset: &str, p: usize, rep: Option<usize>) -> u64 {
    match rep {
        Some(r) => rng::derive_seed(master, &[name_tag(dataset), p as u64, r as u64]),
        None => rng::derive_seed(master, &[name_tag(dataset), p as u64]),
    }
}

fn run_one(cfg: &ExperimentConfig, ds: &Dataset, name: &str, split: &SplitSpec, p: usize, rep: usize) -> Result<RunRecord> {
    let start = Instant::now();
    let (train_idx, test_idx) = dataset::split_indices(ds.len(), split, rep)?;
    let emb_seed = embedding_seed(cfg.seed, name, p, (!cfg.share_embedding).then_some(rep));
    let spec = sample_embedding(ds.dim(), p, emb_seed)?;
    let mut train = spec.embed_dataset(&ds.subset(&train_idx))?;
    let mut test = spec.embed_dataset(&ds.subset(&test_idx))?;
    if cfg.standardize && train.len() >= 2 {
        let s = Standardizer::fit(&train)?;
        train = train.with_features(s.transform_features(train.features())?)?;
        test = test.with_features(s.transform_features(test.features())?)?;
    }
    let grid = cfg.grid.grid_for(&train, cfg.cells.sigma())?;
    let task_seed = rng::derive_seed(cfg.seed, &[0x5e1, p as u64, rep as u64]);
    let solver = SolverConfig {
        seed: task_seed,
        ..cfg.solver
    };
    let selected: SelectionResult = match cfg.selection {
        SelectionPolicy::TrainValidate => train_validate(&train, cfg.cells, &grid, &solver, task_seed)?,
        SelectionPolicy::Cv(k) => kfold_cv(&train, cfg.cells, &grid, k, &solver, task_seed)?,
    };
    let preds = selected.model.predict_batch(test.features());
    let error = match ds.task() {
        Task::Regression => rmse(&preds, test.labels()),
        Task::Classification => zero_one_error(&preds, test.labels()),
    };
    Ok(RunRecord {
        p,
        rep,
        error,
        n_train: train.len(),
        n_test: test.len(),
        m_cells: selected.model.num_cells(),
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Runs the full protocol on an already loaded dataset.
pub fn run_on_dataset(cfg: &ExperimentConfig, raw: &Dataset, name: &str) -> Result<ExperimentReport> {
    if raw.task() != cfg.task {
        return Err(Error::invalid("dataset task does not match the configuration"));
    }
    let ds = prepare(raw)?;
    let split = SplitSpec {
        test_fraction: cfg.test_fraction,
        repetitions: cfg.repetitions,
        seed: cfg.seed,
    };
    split.validate(ds.len())?;
    if let SelectionPolicy::Cv(k) = cfg.selection {
        if k < 2 {
            return Err(Error::invalid("cross-validation needs at least 2 folds"));
        }
    }
    let p_values = cfg.p_values();
    let tasks: Vec<(usize, usize)> = p_values
        .iter()
        .flat_map(|&p| (0..cfg.repetitions).map(move |r| (p, r)))
        .collect();

    let execute = || {
        tasks
            .par_iter()
            .map(|&(p, rep)| (p, rep, run_one(cfg, &ds, name, &split, p, rep)))
            .collect::<Vec<_>>()
    };
    let outcomes = if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build()
            .map_err(|e| Error::invalid(e.to_string()))?
            .install(execute)
    } else {
        execute()
    };

    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (p, rep, r) in outcomes {
        match r {
            Ok(rec) => runs.push(rec),
            Err(e) => {
                log::error!("p = {p}, repetition {rep} failed: {e}");
                failures.push(FailedRun {
                    p,
                    rep,
                    cause: e.to_string(),
                });
            }
        }
    }

    let naive = naive_error(&ds);
    let mut rows: Vec<ReportRow> = p_values
        .iter()
        .map(|&p| aggregate(p, runs.iter().filter(|r| r.p == p), naive))
        .collect();
    let base = rows.first().map(|r| r.mean_error).unwrap_or(f64::NAN);
    for r in &mut rows {
        r.base_error = base;
    }
    Ok(ExperimentReport {
        rows,
        runs,
        failures,
        config: Some(cfg.clone()),
    })
}

fn aggregate<'a>(p: usize, runs: impl Iterator<Item = &'a RunRecord> + Clone, naive: f64) -> ReportRow {
    let (mean, std) = dataset::mean_std(runs.clone().map(|r| r.error));
    let count = runs.clone().count();
    let first = runs.clone().next();
    let wall = runs.clone().fold(0.0, |acc, r| acc + r.wall_seconds) / count.max(1) as f64;
    ReportRow {
        p,
        mean_error: if count == 0 { f64::NAN } else { mean },
        std_error: if count == 0 { f64::NAN } else { std },
        naive_error: naive,
        base_error: f64::NAN,
        n_train: first.map_or(0, |r| r.n_train),
        n_test: first.map_or(0, |r| r.n_test),
        m_cells: runs.map(|r| r.m_cells).max().unwrap_or(0),
        wall_seconds: wall,
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let ds = cfg.data.load(cfg.task)?;
    run_on_dataset(cfg, &ds, &cfg.data.name())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Json,
}

pub const CSV_HEADER: [&str; 9] = [
    "p",
    "mean_error",
    "std_error",
    "naive_error",
    "base_error",
    "n_train",
    "n_test",
    "m_cells",
    "wall_seconds",
];

pub fn write_report<W: Write>(report: &ExperimentReport, format: ReportFormat, mut w: W) -> Result<()> {
    match format {
        ReportFormat::Csv => {
            let mut wtr = csv::Writer::from_writer(w);
            wtr.write_record(CSV_HEADER)?;
            for r in &report.rows {
                wtr.write_record([
                    r.p.to_string(),
                    r.mean_error.to_string(),
                    r.std_error.to_string(),
                    r.naive_error.to_string(),
                    r.base_error.to_string(),
                    r.n_train.to_string(),
                    r.n_test.to_string(),
                    r.m_cells.to_string(),
                    r.wall_seconds.to_string(),
                ])?;
            }
            wtr.flush()?;
        }
        ReportFormat::Json => {
            serde_json::to_writer_pretty(&mut w, report)?;
            w.flush()?;
        }
    }
    Ok(())
}

pub fn emit_report(report: &ExperimentReport, format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_report(report, format, std::io::BufWriter::new(f))
}

/// Parses the rows of a CSV report written by [`write_report`].
pub fn read_report_csv<R: std::io::Read>(r: R) -> Result<Vec<ReportRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::Format(format!("unexpected report header {header:?}")));
    }
    rdr.records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec?;
            let f = |k: usize| -> Result<f64> {
                rec[k].parse().map_err(|_| Error::Parse {
                    row: i + 1,
                    msg: format!("bad number {:?}", &rec[k]),
                })
            };
            let u = |k: usize| -> Result<usize> {
                rec[k].parse().map_err(|_| Error::Parse {
                    row: i + 1,
                    msg: format!("bad integer {:?}", &rec[k]),
                })
            };
            Ok(ReportRow {
                p: u(0)?,
                mean_error: f(1)?,
                std_error: f(2)?,
                naive_error: f(3)?,
                base_error: f(4)?,
                n_train: u(5)?,
                n_test: u(6)?,
                m_cells: u(7)?,
                wall_seconds: f(8)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionReport {
    pub entries: Vec<(usize, DimensionEstimate)>,
}

impl DimensionReport {
    /// Long-format CSV: `p,m,epsilon,dimension`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["p", "m", "epsilon", "dimension"])?;
        for (p, est) in &self.entries {
            for &(m, e) in &est.curve {
                wtr.write_record([
                    p.to_string(),
                    m.to_string(),
                    e.to_string(),
                    est.dimension.to_string(),
                ])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Embeds `ds` (after mapping it onto `[-1, 1]^d`) for each `p` and
/// estimates the scaling dimension of the resulting point cloud.
pub fn diagnose_dataset(ds: &Dataset, name: &str, p_values: &[usize], seed: u64) -> Result<DimensionReport> {
    let ds = scale_to_unit_box(ds)?;
    let entries = p_values
        .iter()
        .map(|&p| {
            let spec = sample_embedding(ds.dim(), p, embedding_seed(seed, name, p, Some(0)))?;
            let pts = spec.embed_points(ds.features())?;
            Ok((p, estimate_dimension(&pts)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DimensionReport { entries })
}

pub fn diagnose(data: &DataSource, task: Task, p_values: &[usize], seed: u64) -> Result<DimensionReport> {
    let ds = data.load(task)?;
    diagnose_dataset(&ds, &data.name(), p_values, seed)
}
