use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use localkernel::experiment::{
    self, emit_report, DataSource, ExperimentConfig, GridPolicy, ReportFormat, SelectionPolicy,
};
use localkernel::local_model::CellPolicy;
use localkernel::model_selection::{kfold_cv, train_validate};
use localkernel::synthetic::SyntheticKind;
use localkernel::{dataset, Error, LocalModel, Result, SolverConfig, Task};

#[derive(Parser)]
#[command(name = "localkernel", version, about = "Localized kernel machines on farthest-first Voronoi partitions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep embedding dimensions over repeated hold-out splits.
    Run(RunArgs),
    /// Estimate intrinsic dimension of the (embedded) inputs.
    Diagnose(DiagnoseArgs),
    /// Write a synthetic dataset as CSV.
    Generate(GenerateArgs),
    /// Select hyperparameters on a dataset and save the model.
    Fit(FitArgs),
    /// Predict with a saved model.
    Predict(PredictArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Regression,
    Classification,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Regression => Task::Regression,
            TaskArg::Classification => Task::Classification,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SyntheticArg {
    Square,
    Moons,
}

impl From<SyntheticArg> for SyntheticKind {
    fn from(s: SyntheticArg) -> Self {
        match s {
            SyntheticArg::Square => SyntheticKind::Square,
            SyntheticArg::Moons => SyntheticKind::Moons,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum GridArg {
    ExponentNets,
    #[value(name = "geometric-10x10")]
    Geometric10x10,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Args)]
struct DataArgs {
    /// CSV file, last column is the label.
    #[arg(long, conflicts_with = "synthetic")]
    data: Option<PathBuf>,
    /// The CSV file has a header line.
    #[arg(long)]
    header: bool,
    /// Use a built-in synthetic dataset instead of a file.
    #[arg(long, value_enum)]
    synthetic: Option<SyntheticArg>,
    /// Number of synthetic points.
    #[arg(long, default_value_t = 5000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
    /// Task kind; defaults to the synthetic dataset's task.
    #[arg(long, value_enum)]
    task: Option<TaskArg>,
}

impl DataArgs {
    fn source(&self) -> Result<(DataSource, Task)> {
        match (&self.data, self.synthetic) {
            (Some(path), _) => {
                let task = self
                    .task
                    .ok_or_else(|| Error::InvalidArgument("--task is required with --data".into()))?;
                Ok((
                    DataSource::Csv {
                        path: path.clone(),
                        has_header: self.header,
                    },
                    task.into(),
                ))
            }
            (None, Some(kind)) => {
                let kind = SyntheticKind::from(kind);
                Ok((
                    DataSource::Synthetic {
                        kind,
                        n: self.n,
                        seed: self.data_seed,
                    },
                    self.task.map(Task::from).unwrap_or(kind.task()),
                ))
            }
            (None, None) => Err(Error::InvalidArgument(
                "one of --data or --synthetic is required".into(),
            )),
        }
    }
}

#[derive(Args)]
struct SelectArgs {
    /// Cell policy: global, cap:N, sigma:S or fixed:M.
    #[arg(long, default_value = "cap:4000", value_parser = parse_cells)]
    cells: CellPolicy,
    #[arg(long, value_enum, default_value = "geometric-10x10")]
    grid: GridArg,
    /// Hyperparameter selection: train-validate or cv:K.
    #[arg(long, default_value = "cv:5", value_parser = parse_selection)]
    selection: SelectionPolicy,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-6)]
    kkt_tolerance: f64,
    #[arg(long, default_value_t = 1e-9)]
    cg_tolerance: f64,
    #[arg(long, default_value_t = 10_000)]
    max_passes: usize,
}

impl SelectArgs {
    fn solver(&self) -> SolverConfig {
        SolverConfig {
            kkt_tolerance: self.kkt_tolerance,
            cg_tolerance: self.cg_tolerance,
            max_passes: self.max_passes,
            seed: self.seed,
            ..SolverConfig::default()
        }
    }

    fn grid_policy(&self) -> GridPolicy {
        match self.grid {
            GridArg::ExponentNets => GridPolicy::ExponentNets,
            GridArg::Geometric10x10 => GridPolicy::Geometric10x10,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    select: SelectArgs,
    /// Largest number of added dimensions.
    #[arg(long, default_value_t = 50)]
    p_max: usize,
    #[arg(long, default_value_t = 1)]
    p_step: usize,
    #[arg(long, default_value_t = 10)]
    repetitions: usize,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    /// Skip standardizing embedded features.
    #[arg(long)]
    no_standardize: bool,
    /// Use one embedding per p for all repetitions.
    #[arg(long)]
    share_embedding: bool,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    threads: usize,
    #[arg(long, short)]
    output: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Comma-separated numbers of added dimensions.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    p: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the (m, epsilon) curves as CSV.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_enum)]
    synthetic: SyntheticArg,
    #[arg(long, default_value_t = 5000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    select: SelectArgs,
    /// Model file to write.
    #[arg(long)]
    model: PathBuf,
    /// Selection trace CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// CSV of inputs; a trailing label column is ignored when --labeled is set.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    header: bool,
    #[arg(long)]
    labeled: bool,
    #[arg(long, short)]
    output: PathBuf,
}

fn parse_cells(s: &str) -> std::result::Result<CellPolicy, String> {
    let (kind, value) = s.split_once(':').unwrap_or((s, ""));
    let bad = |_| format!("invalid cell policy {s:?}");
    match kind {
        "global" => Ok(CellPolicy::Global),
        "cap" => Ok(CellPolicy::Cap(value.parse().map_err(bad)?)),
        "fixed" => Ok(CellPolicy::Fixed(value.parse().map_err(bad)?)),
        "sigma" => Ok(CellPolicy::Sigma(
            value.parse().map_err(|_| format!("invalid cell policy {s:?}"))?,
        )),
        _ => Err(format!("unknown cell policy {s:?}")),
    }
}

fn parse_selection(s: &str) -> std::result::Result<SelectionPolicy, String> {
    match s.split_once(':') {
        None if s == "train-validate" => Ok(SelectionPolicy::TrainValidate),
        Some(("cv", k)) => k
            .parse()
            .map(SelectionPolicy::Cv)
            .map_err(|_| format!("invalid fold count in {s:?}")),
        _ => Err(format!("unknown selection {s:?}")),
    }
}

fn run(args: RunArgs) -> Result<ExitCode> {
    let (data, task) = args.data.source()?;
    let cfg = ExperimentConfig {
        p_max: args.p_max,
        p_step: args.p_step,
        repetitions: args.repetitions,
        test_fraction: args.test_fraction,
        cells: args.select.cells,
        grid: args.select.grid_policy(),
        selection: args.select.selection,
        seed: args.select.seed,
        standardize: !args.no_standardize,
        share_embedding: args.share_embedding,
        threads: args.threads,
        solver: args.select.solver(),
        output: Some(args.output.clone()),
        ..ExperimentConfig::new(data, task)
    };
    let report = experiment::run_experiment(&cfg)?;
    let format = match args.format {
        FormatArg::Csv => ReportFormat::Csv,
        FormatArg::Json => ReportFormat::Json,
    };
    emit_report(&report, format, &args.output)?;
    if report.is_partial() {
        for f in &report.failures {
            eprintln!("p = {}, repetition {}: {}", f.p, f.rep, f.cause);
        }
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn diagnose(args: DiagnoseArgs) -> Result<ExitCode> {
    let (data, task) = args.data.source()?;
    let report = experiment::diagnose(&data, task, &args.p, args.seed)?;
    for (p, est) in &report.entries {
        println!("p = {p}: dimension {:.4} (slope {:.4})", est.dimension, est.slope);
    }
    if let Some(path) = args.output {
        report.write_csv(std::fs::File::create(path)?)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn generate(args: GenerateArgs) -> Result<ExitCode> {
    let ds = SyntheticKind::from(args.synthetic).generate(args.n, args.seed)?;
    let mut wtr = csv::Writer::from_path(&args.output)?;
    for (x, y) in ds.features().rows().zip(ds.labels()) {
        wtr.write_record(x.iter().chain(std::iter::once(y)).map(|v| v.to_string()))?;
    }
    wtr.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn fit(args: FitArgs) -> Result<ExitCode> {
    let (data, task) = args.data.source()?;
    let ds = data.load(task)?;
    let s = &args.select;
    let grid = s.grid_policy().grid_for(&ds, s.cells.sigma())?;
    let result = match s.selection {
        SelectionPolicy::TrainValidate => train_validate(&ds, s.cells, &grid, &s.solver(), s.seed)?,
        SelectionPolicy::Cv(k) => kfold_cv(&ds, s.cells, &grid, k, &s.solver(), s.seed)?,
    };
    result.model.save(&args.model)?;
    if let Some(path) = args.trace {
        result.write_trace_csv(std::fs::File::create(path)?)?;
    }
    eprintln!(
        "{} cells, {} training runs",
        result.model.num_cells(),
        result.training_runs
    );
    Ok(ExitCode::SUCCESS)
}

fn predict(args: PredictArgs) -> Result<ExitCode> {
    let model = LocalModel::load(&args.model)?;
    let x = if args.labeled {
        dataset::load_csv(&args.data, Task::Regression, args.header)?
            .features()
            .clone()
    } else {
        let file = std::fs::File::open(&args.data)?;
        let mut text = String::new();
        std::io::Read::read_to_string(&mut std::io::BufReader::new(file), &mut text)?;
        // Reuse the CSV loader by appending a dummy label column.
        let padded: String = text
            .lines()
            .enumerate()
            .map(|(i, l)| {
                if i == 0 && args.header {
                    format!("{l},label\n")
                } else if l.trim().is_empty() {
                    String::new()
                } else {
                    format!("{l},0\n")
                }
            })
            .collect();
        dataset::read_csv(padded.as_bytes(), Task::Regression, args.header)?
            .features()
            .clone()
    };
    if x.dim() != model.dim() {
        return Err(Error::InvalidArgument(format!(
            "model expects {} features, data has {}",
            model.dim(),
            x.dim()
        )));
    }
    let mut wtr = csv::Writer::from_path(&args.output)?;
    wtr.write_record(["prediction"])?;
    for v in model.predict_batch(&x) {
        wtr.write_record([v.to_string()])?;
    }
    wtr.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // Usage errors are fatal (exit 1); 2 is reserved for partial reports.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = match cli.command {
        Command::Run(a) => run(a),
        Command::Diagnose(a) => diagnose(a),
        Command::Generate(a) => generate(a),
        Command::Fit(a) => fit(a),
        Command::Predict(a) => predict(a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
