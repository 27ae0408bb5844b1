//! `dqops`: batch entry points. JSON goes to stdout (one document per line),
//! human-readable summaries to stderr.
//!
//! Exit codes: 0 success/pass, 1 CI fail, 2 refresh required,
//! 3 usage error, 4 data error.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dqops_core::ci::{CiLedger, IllDefinedPolicy, ReuseMode, ReusePolicy};
use dqops_core::cpclean::{CleaningPolicy, RepairGenerator, StopCondition, DEFAULT_WORLD_CAP};
use dqops_core::jobs::{
    init_ledger, run_ci_commit, run_ci_plan, run_clean_simulation, run_feasibility, run_pick_simulation,
    CandidateSource, CiCommitRequest, CiStatus, CleanSimRequest, ErrorClass, FeasibilityRequest, JobError,
    PickSimRequest,
};
use dqops_core::knn::{KnnConfig, Normalization};
use dqops_core::snoopy::EmbeddingSpec;
use dqops_core::Seed;
use dqops_service::ServiceConfig;

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Job(#[from] JobError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Job(e) if e.class() == ErrorClass::Usage => 3,
            CliError::Usage(_) => 3,
            _ => 4,
        }
    }
}

#[derive(Parser)]
#[command(name = "dqops", version, about = "Data-quality operations toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cleaning prioritization over incomplete training data.
    #[command(subcommand)]
    Clean(CleanCommand),
    /// Bayes-error bounds for a target task.
    Feasibility(FeasibilityArgs),
    /// Continuous-integration tests with test-set reuse budgeting.
    #[command(subcommand)]
    Ci(CiCommand),
    /// Label-efficient online model selection.
    #[command(subcommand)]
    Pick(PickCommand),
    /// Run the HTTP service (data directory from DQOPS_DATA_DIR).
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
    },
}

#[derive(Args, Clone, Copy)]
struct KnnArgs {
    /// Neighbours (positive, odd).
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long, value_enum, default_value_t = NormArg::MinmaxPerFeature)]
    normalization: NormArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum NormArg {
    None,
    MinmaxPerFeature,
}

impl KnnArgs {
    fn config(self) -> Result<KnnConfig, CliError> {
        if self.k == 0 || self.k % 2 == 0 {
            return Err(CliError::Usage(format!("k must be a positive odd integer, got {}", self.k)));
        }
        Ok(KnnConfig {
            k: self.k,
            normalization: match self.normalization {
                NormArg::None => Normalization::None,
                NormArg::MinmaxPerFeature => Normalization::MinmaxPerFeature,
            },
            ..KnnConfig::default()
        })
    }
}

#[derive(Subcommand)]
enum CleanCommand {
    /// Replay a cleaning loop with ground truth standing in for the human.
    Simulate(CleanSimArgs),
}

#[derive(Args)]
struct CleanSimArgs {
    /// Incomplete training CSV (empty cells are missing).
    #[arg(long)]
    data: PathBuf,
    /// Candidate repairs JSON.
    #[arg(long, conflicts_with = "generators", required_unless_present = "generators")]
    candidates: Option<PathBuf>,
    /// Generate candidates instead: mean, median, class-mean, frequent-K.
    #[arg(long, value_delimiter = ',')]
    generators: Vec<String>,
    /// Validation feature CSV.
    #[arg(long)]
    validation: PathBuf,
    /// Ground-truth values per dirty cell (JSON).
    #[arg(long)]
    truth: PathBuf,
    #[arg(long, value_enum, default_value_t = PolicyArg::Cpclean)]
    policy: PolicyArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = StopArg::AllCertain)]
    stop: StopArg,
    #[arg(long, default_value_t = DEFAULT_WORLD_CAP)]
    world_cap: u64,
    #[command(flatten)]
    knn: KnnArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Cpclean,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum StopArg {
    AllCertain,
    AllClean,
}

#[derive(Args)]
struct FeasibilityArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    validation: PathBuf,
    /// `identity` or `NAME=PATH` (rows: train, then validation).
    #[arg(long, num_args = 1.., required = true)]
    embeddings: Vec<String>,
    /// Label-noise rates to inject, e.g. 0,0.1,0.2.
    #[arg(long, value_delimiter = ',')]
    noise_sweep: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    knn: KnnArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    NonAdaptive,
    AdaptiveBinary,
}

impl From<ModeArg> for ReuseMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::NonAdaptive => ReuseMode::NonAdaptive,
            ModeArg::AdaptiveBinary => ReuseMode::AdaptiveBinary,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum IllDefinedArg {
    ForceAccept,
    ForceReject,
}

#[derive(Subcommand)]
enum CiCommand {
    /// Largest reuse budget H a test set of the given size supports.
    Plan {
        #[arg(long)]
        condition: String,
        #[arg(long)]
        delta: f64,
        #[arg(long, value_enum, default_value_t = ModeArg::NonAdaptive)]
        mode: ModeArg,
        #[arg(long)]
        test_size: u64,
        /// Print the full plan as JSON instead of H alone.
        #[arg(long)]
        json: bool,
    },
    /// Create a ledger bound to a test set.
    Init {
        #[arg(long)]
        ledger: PathBuf,
        /// Labeled test set.
        #[arg(long, alias = "test-set")]
        truth: PathBuf,
        /// Reuse budget H.
        #[arg(long = "reuses", short = 'H')]
        reuses: u64,
        #[arg(long)]
        delta: f64,
        #[arg(long, value_enum, default_value_t = ModeArg::NonAdaptive)]
        mode: ModeArg,
        #[arg(long, value_enum, default_value_t = IllDefinedArg::ForceReject)]
        ill_defined: IllDefinedArg,
        /// Overwrite an existing ledger.
        #[arg(long)]
        force: bool,
    },
    /// Evaluate one commit and update the ledger.
    Commit {
        #[arg(long)]
        ledger: PathBuf,
        #[arg(long)]
        old: PathBuf,
        #[arg(long)]
        new: PathBuf,
        /// Labeled test set the ledger is bound to.
        #[arg(long, alias = "test-set")]
        truth: PathBuf,
        #[arg(long)]
        condition: String,
        /// Print the full report as JSON instead of pass/fail.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Subcommand)]
enum PickCommand {
    /// Run the picker over a labeled prediction stream.
    Simulate {
        #[arg(long)]
        stream: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        budget: u64,
        /// Learning rate; defaults to sqrt(2 min(B, n) ln m) / n.
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long, default_value_t = 0.0)]
        q_floor: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn print_json(value: &impl serde::Serialize) {
    println!("{}", serde_json::to_string(value).expect("reports serialize"));
}

fn clean_simulate(a: CleanSimArgs) -> Result<u8, CliError> {
    let candidates = match a.candidates {
        Some(p) => CandidateSource::File(p),
        None => CandidateSource::Generators(
            a.generators
                .iter()
                .map(|g| g.parse::<RepairGenerator>().map_err(CliError::Usage))
                .collect::<Result<_, _>>()?,
        ),
    };
    let req = CleanSimRequest {
        data: a.data,
        candidates,
        validation: a.validation,
        truth: a.truth,
        policy: match a.policy {
            PolicyArg::Cpclean => CleaningPolicy::Cpclean,
            PolicyArg::Random => CleaningPolicy::Random,
        },
        seed: Seed(a.seed),
        stop: match a.stop {
            StopArg::AllCertain => StopCondition::AllCertain,
            StopArg::AllClean => StopCondition::AllClean,
        },
        knn: a.knn.config()?,
        world_cap: a.world_cap,
    };
    let report = run_clean_simulation(&req)?;
    for step in &report.trace {
        print_json(step);
    }
    let s = &report.summary;
    eprintln!(
        "{} repairs; entropy {:.4} -> {:.4} bits; {}/{} certain; steps to all certain: {}",
        s.steps,
        s.initial_entropy,
        s.final_entropy,
        s.certain,
        s.validation,
        s.steps_to_all_certain.map_or("not reached".to_string(), |n| n.to_string()),
    );
    Ok(0)
}

fn feasibility(a: FeasibilityArgs) -> Result<u8, CliError> {
    let embeddings = a
        .embeddings
        .iter()
        .map(|s| EmbeddingSpec::parse(s).map_err(JobError::from))
        .collect::<Result<_, _>>()?;
    let req = FeasibilityRequest {
        train: a.train,
        validation: a.validation,
        embeddings,
        noise_sweep: a.noise_sweep,
        seed: Seed(a.seed),
        knn: a.knn.config()?,
    };
    let report = run_feasibility(&req)?;
    print_json(&report);
    let o = &report.overall;
    eprintln!(
        "best embedding `{}`: 1-NN error {:.4}, Bayes error in [{:.4}, {:.4}], max accuracy {:.4}",
        o.embedding, o.knn_error, o.ber_lower, o.ber_upper, o.max_accuracy
    );
    Ok(0)
}

fn read_ledger(path: &Path) -> Result<CiLedger, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(CiLedger::from_json(&text).map_err(JobError::from)?)
}

fn write_ledger(path: &Path, ledger: &CiLedger) -> Result<(), CliError> {
    std::fs::write(path, ledger.to_json()).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn ci(cmd: CiCommand) -> Result<u8, CliError> {
    match cmd {
        CiCommand::Plan {
            condition,
            delta,
            mode,
            test_size,
            json,
        } => {
            let plan = run_ci_plan(&condition, delta, mode.into(), test_size)?;
            if json {
                print_json(&plan);
            } else {
                println!("{}", plan.reuses);
            }
            eprintln!(
                "`{}`: one use needs {} samples; {} samples support H = {}",
                plan.condition, plan.required_single, plan.test_size, plan.reuses
            );
            Ok(0)
        }
        CiCommand::Init {
            ledger,
            truth,
            reuses,
            delta,
            mode,
            ill_defined,
            force,
        } => {
            if ledger.exists() && !force {
                return Err(CliError::Usage(format!(
                    "{} already exists (use --force to overwrite)",
                    ledger.display()
                )));
            }
            let policy = ReusePolicy::new(
                reuses,
                delta,
                mode.into(),
                match ill_defined {
                    IllDefinedArg::ForceAccept => IllDefinedPolicy::ForceAccept,
                    IllDefinedArg::ForceReject => IllDefinedPolicy::ForceReject,
                },
            )
            .map_err(JobError::from)?;
            let l = init_ledger(&truth, policy)?;
            write_ledger(&ledger, &l)?;
            eprintln!("ledger {} bound to test set {}", ledger.display(), l.fingerprint);
            Ok(0)
        }
        CiCommand::Commit {
            ledger: path,
            old,
            new,
            truth,
            condition,
            json,
        } => {
            let mut ledger = read_ledger(&path)?;
            let req = CiCommitRequest {
                test_set: truth,
                old,
                new,
                condition,
            };
            let report = run_ci_commit(&mut ledger, &req)?;
            if report.status == CiStatus::RefreshRequired {
                if json {
                    print_json(&report);
                }
                eprintln!(
                    "test set refresh required ({} of {} evaluations used)",
                    report.used, report.reuses
                );
                return Ok(2);
            }
            write_ledger(&path, &ledger)?;
            let pass = report.status == CiStatus::Pass;
            if json {
                print_json(&report);
            } else {
                println!("{}", if pass { "pass" } else { "fail" });
            }
            eprintln!(
                "score {:.6} ({:?} decision); {} of {} evaluations used",
                report.score.unwrap_or(f64::NAN),
                report.resolution.expect("set on decisions"),
                report.used,
                report.reuses
            );
            Ok(if pass { 0 } else { 1 })
        }
    }
}

fn pick(cmd: PickCommand) -> Result<u8, CliError> {
    let PickCommand::Simulate {
        stream,
        truth,
        budget,
        eta,
        q_floor,
        seed,
    } = cmd;
    let report = run_pick_simulation(&PickSimRequest {
        stream,
        truth,
        budget,
        eta,
        q_floor,
        seed: Seed(seed),
    })?;
    for step in &report.trace {
        print_json(step);
    }
    print_json(&serde_json::json!({
        "final_pick": report.final_pick,
        "queries": report.queries,
        "eta": report.eta,
        "weights": report.weights,
    }));
    eprintln!(
        "final pick: model {} of {} after {} queries (eta {:.5}); final regret {}",
        report.final_pick,
        report.models,
        report.queries,
        report.eta,
        report.trace.last().map_or(0.0, |s| s.regret)
    );
    Ok(0)
}

fn serve(host: std::net::IpAddr, port: u16) -> Result<u8, CliError> {
    let dir = std::env::var_os("DQOPS_DATA_DIR").map_or_else(|| PathBuf::from("dqops-data"), PathBuf::from);
    let runtime = tokio::runtime::Runtime::new().map_err(|source| CliError::Io {
        path: dir.clone(),
        source,
    })?;
    runtime
        .block_on(dqops_service::serve(ServiceConfig::new(&dir), SocketAddr::new(host, port)))
        .map_err(|source| CliError::Io { path: dir, source })?;
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Clean(CleanCommand::Simulate(a)) => clean_simulate(a),
        Command::Feasibility(a) => feasibility(a),
        Command::Ci(c) => ci(c),
        Command::Pick(p) => pick(p),
        Command::Serve { port, host } => serve(host, port),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
