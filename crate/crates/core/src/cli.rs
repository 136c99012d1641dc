//! Command-line front end. Every command writes its result to `--out` or
//! stdout; diagnostics go to stderr.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::aggregation::{
    audit_quality, audit_sample, completion_time_stats, consensus_by_task, dataset_scores,
    phase_by_justification, score_by_system, AggregationError, RatingId, ScoreReport, Verdict,
};
use crate::agreement::{
    agreement_report, expert_agreement, simulate_raters, AgreementError, AgreementReport,
    Dimension, DimensionAgreement, ExpertLabel, ItemTruth, RatingMatrix, SimulationConfig,
    DEFAULT_PERMUTATIONS,
};
use crate::ingestion::{self, IngestError};
use crate::model::{RatingRecord, Task, TaskKind};
use crate::reporting::{
    agreement_csv, completion_time_csv, render_report, scores_csv, ReportError,
    SignificanceConfig, DEFAULT_THRESHOLD,
};
use crate::workflow::{Engine, QuestionTemplates, TemplateError, WorkflowConfig, WorkflowError};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Workflow(#[from] WorkflowError),
    #[error(transparent)]
    Aggregation(#[from] AggregationError),
    #[error(transparent)]
    Agreement(#[from] AgreementError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("cannot open {}: {source}", path.display())]
    Open { path: PathBuf, source: io::Error },
    #[error("{}:{line}: {message}", path.display())]
    Input {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{0}")]
    Usage(String),
}

#[derive(Debug, Parser)]
#[command(name = "ais", version, about = "Two-stage attribution rating platform")]
pub struct Cli {
    /// Store directory holding imported tasks, assignments and ratings.
    #[arg(long, global = true, default_value = "ais-store")]
    pub store: PathBuf,
    /// Write the result here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Import a task corpus into the store and print the import summary.
    Import {
        file: PathBuf,
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        kind: TaskKind,
    },
    /// Assign every unassigned task of a dataset to the annotator pool.
    Assign {
        #[arg(long)]
        dataset: String,
        /// Annotator ids, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        pool: Vec<String>,
        #[arg(long, default_value_t = crate::workflow::DEFAULT_REPLICATION)]
        replication: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Serve the annotation endpoints over HTTP.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[arg(long, default_value_t = crate::workflow::DEFAULT_REPLICATION)]
        replication: usize,
        /// Require written justifications for every answer.
        #[arg(long)]
        pilot: bool,
        /// TOML file overriding question wording per task kind.
        #[arg(long)]
        templates: Option<PathBuf>,
    },
    /// Write a dataset's ratings as rating lines.
    Export {
        #[arg(long)]
        dataset: String,
    },
    /// Flag/Int/AIS scores per system as CSV.
    Score(ScoreArgs),
    /// Agreement statistics as CSV.
    Agree {
        #[command(flatten)]
        input: RatingInput,
        #[arg(long, value_enum, default_value_t = DimensionArg::Both)]
        dimension: DimensionArg,
        /// Expert labels (`{"task_id", "label": "yes"|"no"|"either"}` per
        /// line) to compare individual ratings against instead.
        #[arg(long)]
        experts: Option<PathBuf>,
    },
    /// Score table with significance markers.
    Report {
        #[command(flatten)]
        score: ScoreArgs,
        #[arg(long)]
        title: Option<String>,
        #[arg(long, value_enum, default_value_t = Format::Markdown)]
        format: Format,
        #[arg(long, default_value_t = DEFAULT_PERMUTATIONS)]
        iterations: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
    },
    /// Generate ratings from noisy simulated raters.
    Simulate {
        #[arg(long, default_value_t = 100)]
        items: usize,
        #[arg(long, default_value_t = 5)]
        raters: usize,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long, default_value_t = 0.0)]
        flag_prob: f64,
        /// Share of items that are truly interpretable.
        #[arg(long, default_value_t = 0.9)]
        int_rate: f64,
        /// Share of interpretable items that are truly attributable.
        #[arg(long, default_value_t = 0.7)]
        ais_rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Quality audits of individual ratings.
    #[command(subcommand)]
    Audit(AuditCommand),
    /// Average completion times per task kind and phase as CSV.
    Act {
        #[command(flatten)]
        input: RatingInput,
        /// Task file giving each rating's task kind.
        #[arg(long, requires = "kind")]
        tasks: Option<PathBuf>,
        /// Kind of the tasks file, or of every rating when no tasks are given.
        #[arg(long)]
        kind: Option<TaskKind>,
    },
}

#[derive(Debug, Subcommand)]
pub enum AuditCommand {
    /// Draw a seeded sample of rating ids.
    Sample {
        #[command(flatten)]
        input: RatingInput,
        #[arg(long)]
        fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also sample flag ratings.
        #[arg(long)]
        include_flags: bool,
    },
    /// Share of approved verdicts (`{"verdict": "approved"|"rejected"}` per line).
    Quality { verdicts: PathBuf },
}

/// Ratings come from `--ratings` when given, else from the store.
#[derive(Debug, Args)]
pub struct RatingInput {
    #[arg(long)]
    ratings: Option<PathBuf>,
    /// Restrict to one dataset (required when reading the store).
    #[arg(long)]
    dataset: Option<String>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    input: RatingInput,
    /// Task file mapping tasks to systems. Without it (and without a store
    /// dataset) all ratings are scored as one system.
    #[arg(long, requires = "kind")]
    tasks: Option<PathBuf>,
    #[arg(long)]
    kind: Option<TaskKind>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DimensionArg {
    Int,
    Ais,
    Both,
}

impl DimensionArg {
    fn dimensions(self) -> Vec<Dimension> {
        match self {
            DimensionArg::Int => vec![Dimension::Interpretability],
            DimensionArg::Ais => vec![Dimension::Ais],
            DimensionArg::Both => vec![Dimension::Interpretability, Dimension::Ais],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Markdown,
    Csv,
}

/// Name used for the single system when tasks are unknown.
pub const ALL_SYSTEMS: &str = "all";

pub fn run(cli: Cli) -> Result<(), CliError> {
    let output = execute(&cli)?;
    match &cli.out {
        Some(path) => fs::write(path, output)?,
        None => io::stdout().lock().write_all(output.as_bytes())?,
    }
    Ok(())
}

fn execute(cli: &Cli) -> Result<String, CliError> {
    let store = cli.store.as_path();
    match &cli.command {
        Command::Import {
            file,
            dataset,
            kind,
        } => {
            let engine = Engine::open(store, WorkflowConfig::default())?;
            let summary = engine.import_reader(open(file)?, dataset, *kind)?;
            for v in &summary.violations {
                eprintln!("{}:{}: rejected: {}", file.display(), v.line, v.code);
            }
            Ok(json_line(&summary))
        }
        Command::Assign {
            dataset,
            pool,
            replication,
            seed,
        } => {
            let engine = Engine::open(store, WorkflowConfig::with_replication(*replication))?;
            let created = engine.create_assignments(dataset, pool, *seed)?;
            Ok(json_line(&serde_json::json!({ "created": created })))
        }
        Command::Serve {
            addr,
            replication,
            pilot,
            templates,
        } => {
            let mut config = WorkflowConfig::with_replication(*replication).pilot(*pilot);
            if let Some(path) = templates {
                config.templates = QuestionTemplates::from_toml(&fs::read_to_string(path)?)?;
            }
            let engine = Arc::new(Engine::open(store, config)?);
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(async {
                let listener = tokio::net::TcpListener::bind(addr).await?;
                eprintln!("listening on http://{}", listener.local_addr()?);
                crate::service::serve(engine, listener).await
            })?;
            Ok(String::new())
        }
        Command::Export { dataset } => {
            let engine = Engine::open(store, WorkflowConfig::default())?;
            let mut out = Vec::new();
            engine.export_ratings(dataset, &mut out)?;
            Ok(String::from_utf8(out).expect("rating lines are utf-8"))
        }
        Command::Score(args) => Ok(scores_csv(&scores(store, args)?)?),
        Command::Agree {
            input,
            dimension,
            experts,
        } => {
            let ratings = load_ratings(store, input)?;
            let report = match experts {
                None => agreement_report(&ratings, &dimension.dimensions()),
                Some(path) => expert_report(&ratings, dimension.dimensions(), path)?,
            };
            Ok(agreement_csv(&report)?)
        }
        Command::Report {
            score,
            title,
            format,
            iterations,
            seed,
            threshold,
        } => {
            let reports = scores(store, score)?;
            let title = title
                .clone()
                .or_else(|| score.input.dataset.clone())
                .unwrap_or_else(|| "Scores".to_string());
            let cfg = SignificanceConfig {
                iterations: *iterations,
                seed: *seed,
                threshold: *threshold,
            };
            let table = render_report(&title, &reports, &cfg)?;
            Ok(match format {
                Format::Markdown => table.to_markdown(),
                Format::Csv => table.to_csv()?,
            })
        }
        Command::Simulate {
            items,
            raters,
            noise,
            flag_prob,
            int_rate,
            ais_rate,
            seed,
        } => {
            for (name, p) in [
                ("noise", noise),
                ("flag-prob", flag_prob),
                ("int-rate", int_rate),
                ("ais-rate", ais_rate),
            ] {
                if !(0.0..=1.0).contains(p) {
                    return Err(CliError::Usage(format!("--{name} must be in [0, 1]")));
                }
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let truth: Vec<ItemTruth> = (0..*items)
                .map(|i| {
                    let interpretable = rng.random_bool(*int_rate);
                    ItemTruth {
                        task_id: format!("sim-{i:06}"),
                        interpretable,
                        ais: interpretable && rng.random_bool(*ais_rate),
                    }
                })
                .collect();
            let config = SimulationConfig {
                n_raters: *raters,
                noise: *noise,
                flag_prob: *flag_prob,
                seed: seed.wrapping_add(1),
            };
            let mut out = Vec::new();
            ingestion::write_ratings(&mut out, &simulate_raters(&truth, &config))?;
            Ok(String::from_utf8(out).expect("rating lines are utf-8"))
        }
        Command::Audit(AuditCommand::Sample {
            input,
            fraction,
            seed,
            include_flags,
        }) => {
            let ratings = load_ratings(store, input)?;
            let ids: Vec<RatingId> = ratings
                .iter()
                .filter(|r| *include_flags || !r.response.is_flag())
                .map(RatingId::from)
                .collect();
            let sample = audit_sample(&ids, *fraction, *seed)?;
            Ok(sample.iter().map(json_line).collect())
        }
        Command::Audit(AuditCommand::Quality { verdicts }) => {
            #[derive(Deserialize)]
            struct Line {
                verdict: Verdict,
            }
            let verdicts: Vec<Verdict> = read_json_lines::<Line>(verdicts)?
                .into_iter()
                .map(|l| l.verdict)
                .collect();
            let quality = audit_quality(&verdicts)?;
            Ok(format!("{quality:.4}\n"))
        }
        Command::Act { input, tasks, kind } => {
            let ratings = load_ratings(store, input)?;
            let kinds: HashMap<String, TaskKind> = match (tasks, kind, &input.ratings) {
                (Some(path), Some(k), _) => read_tasks(path, input.dataset.as_deref(), *k)?
                    .into_iter()
                    .map(|t| (t.task_id, t.kind))
                    .collect(),
                (None, _, None) => store_tasks(store, input)?
                    .into_iter()
                    .map(|t| (t.task_id, t.kind))
                    .collect(),
                _ => HashMap::new(),
            };
            let fallback = if tasks.is_none() { *kind } else { None };
            let rows = completion_time_stats(
                &ratings,
                |r| kinds.get(&r.task_id).copied().or(fallback),
                phase_by_justification,
            );
            Ok(completion_time_csv(&rows)?)
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(|source| CliError::Open {
        path: path.to_path_buf(),
        source,
    })
}

fn json_line<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string(value).expect("serializable");
    s.push('\n');
    s
}

fn read_json_lines<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let reader = open(path)?;
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| CliError::Input {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

fn require_dataset(input: &RatingInput) -> Result<&str, CliError> {
    input.dataset.as_deref().ok_or_else(|| {
        CliError::Usage("--dataset is required when reading ratings from the store".into())
    })
}

fn store_tasks(store: &Path, input: &RatingInput) -> Result<Vec<Task>, CliError> {
    let dataset = require_dataset(input)?;
    Ok(open_existing(store)?.tasks(dataset)?)
}

fn open_existing(store: &Path) -> Result<Engine, CliError> {
    if !store.is_dir() {
        return Err(CliError::Usage(format!(
            "store `{}` does not exist; pass --ratings or --store",
            store.display()
        )));
    }
    Ok(Engine::open(store, WorkflowConfig::default())?)
}

fn load_ratings(store: &Path, input: &RatingInput) -> Result<Vec<RatingRecord>, CliError> {
    match &input.ratings {
        Some(path) => Ok(ingestion::read_ratings(open(path)?)?),
        None => {
            let dataset = require_dataset(input)?;
            Ok(open_existing(store)?.ratings(dataset)?)
        }
    }
}

fn read_tasks(path: &Path, dataset: Option<&str>, kind: TaskKind) -> Result<Vec<Task>, CliError> {
    let dataset = dataset.ok_or_else(|| CliError::Usage("--tasks needs --dataset".into()))?;
    let (tasks, summary) = ingestion::read_dataset(open(path)?, dataset, kind)?;
    if let Some(v) = summary.violations.first() {
        return Err(CliError::Input {
            path: path.to_path_buf(),
            line: v.line,
            message: v.code.clone(),
        });
    }
    Ok(tasks)
}

fn scores(store: &Path, args: &ScoreArgs) -> Result<Vec<ScoreReport>, CliError> {
    let ratings = load_ratings(store, &args.input)?;
    let dataset = args.input.dataset.clone().unwrap_or_default();
    let tasks = match (&args.tasks, args.kind, &args.input.ratings) {
        (Some(path), Some(kind), _) => Some(read_tasks(path, Some(&dataset), kind)?),
        (None, _, None) => Some(store_tasks(store, &args.input)?),
        _ => None,
    };
    match tasks {
        Some(tasks) => Ok(score_by_system(&dataset, &tasks, &ratings)),
        None => {
            let results = consensus_by_task(&ratings);
            match dataset_scores(&dataset, ALL_SYSTEMS, &results) {
                Ok(r) => Ok(vec![r]),
                Err(AggregationError::AllFlagged(r)) => Ok(vec![*r]),
                Err(e) => Err(e.into()),
            }
        }
    }
}

fn expert_report(
    ratings: &[RatingRecord],
    dimensions: Vec<Dimension>,
    path: &Path,
) -> Result<AgreementReport, CliError> {
    #[derive(Deserialize)]
    struct Line {
        task_id: String,
        label: ExpertLabel,
    }
    let experts: HashMap<String, ExpertLabel> = read_json_lines::<Line>(path)?
        .into_iter()
        .map(|l| (l.task_id, l.label))
        .collect();
    let mut rows = Vec::new();
    for dimension in dimensions {
        let matrix = RatingMatrix::from_ratings(dimension, ratings);
        let e = expert_agreement(&matrix, &experts)?;
        rows.push(DimensionAgreement {
            dimension,
            f1: e.f1,
            pa: Some(e.pa),
            alpha: e.alpha,
            n_items: e.items_used,
            n_pairs: e.pairs_used,
        });
    }
    Ok(AgreementReport { rows })
}

/// Entry point of the `ais` binary: parses arguments, runs, and maps
/// failures to a message on stderr and exit status 1.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            let mut stderr = BufWriter::new(io::stderr().lock());
            let _ = writeln!(stderr, "error: {e}");
            1
        }
    }
}
