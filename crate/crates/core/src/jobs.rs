//! File-based entry points shared by the command line and the HTTP service,
//! so both produce identical reports for identical inputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ci::{
    max_reuses, parse_condition, required_sample_size, CiError, CiLedger, Decision, ReuseMode,
    ReusePolicy, Resolution, ScoreEstimates,
};
use crate::cpclean::{
    generate_candidates, load_candidates, load_ground_truth, load_incomplete, simulate_cleaning,
    CleanError, CleaningPolicy, CleaningSession, IncompleteDataset, RepairGenerator,
    SimulationSummary, StopCondition, TraceStep,
};
use crate::knn::KnnConfig;
use crate::model::{
    load_dataset, load_dataset_with_classes, load_features, load_predictions, DataError,
    DataFormat, LabeledDataset, Seed,
};
use crate::picker::{
    default_eta, load_stream, load_truths, simulate, stream_matrix, PickerError, PickerState,
    PickerTraceStep,
};
use crate::snoopy::{
    feasibility, noise_sweep, BerEstimate, EmbeddingSpec, SnoopyError, SweepPoint, INVERSION,
};

#[derive(Debug, Error)]
pub enum JobError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Clean(#[from] CleanError),
    #[error(transparent)]
    Snoopy(#[from] SnoopyError),
    #[error(transparent)]
    Ci(#[from] CiError),
    #[error(transparent)]
    Picker(#[from] PickerError),
    #[error("{0}")]
    Invalid(String),
}

/// Coarse error class, for exit codes and HTTP statuses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad arguments or parameters.
    Usage,
    /// Unreadable, malformed or inconsistent input files.
    Data,
    /// Instance too large to process.
    TooLarge,
}

impl JobError {
    pub fn class(&self) -> ErrorClass {
        match self {
            JobError::Clean(CleanError::WorldCapExceeded { .. } | CleanError::WorldCountOverflow) => {
                ErrorClass::TooLarge
            }
            JobError::Ci(
                CiError::Parse(_)
                | CiError::ZeroEpsilon
                | CiError::InvalidDelta(_)
                | CiError::InvalidReuses
                | CiError::InvalidSimulation(_),
            )
            | JobError::Picker(
                PickerError::TooFewModels(_) | PickerError::InvalidEta(_) | PickerError::InvalidFloor(_),
            )
            | JobError::Snoopy(SnoopyError::BadSpec(_) | SnoopyError::InvalidRho { .. })
            | JobError::Invalid(_) => ErrorClass::Usage,
            _ => ErrorClass::Data,
        }
    }
}

/// Loads a train/validation pair, giving validation the training class table.
pub fn load_splits(train: &Path, validation: &Path) -> Result<(LabeledDataset, LabeledDataset), DataError> {
    let train = load_dataset(train, DataFormat::from_path(train))?;
    let validation = load_dataset_with_classes(validation, DataFormat::from_path(validation), train.classes())?;
    Ok((train, validation))
}

// ---- feasibility ----------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityRequest {
    pub train: PathBuf,
    pub validation: PathBuf,
    pub embeddings: Vec<EmbeddingSpec>,
    #[serde(default)]
    pub noise_sweep: Vec<f64>,
    #[serde(default)]
    pub seed: Seed,
    #[serde(default)]
    pub knn: KnnConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSweepReport {
    /// Embedding the sweep ran on (the overall best).
    pub embedding: String,
    pub injected_into: String,
    pub seed: Seed,
    pub points: Vec<SweepPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub class_count: usize,
    pub n_train: usize,
    pub n_validation: usize,
    pub inversion: String,
    pub estimates: Vec<BerEstimate>,
    pub overall: BerEstimate,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_sweep: Option<NoiseSweepReport>,
}

pub fn run_feasibility(req: &FeasibilityRequest) -> Result<FeasibilityReport, JobError> {
    let (train, validation) = load_splits(&req.train, &req.validation)?;
    let embeddings = req
        .embeddings
        .iter()
        .map(EmbeddingSpec::load)
        .collect::<Result<Vec<_>, _>>()?;
    let result = feasibility(&train, &validation, &embeddings, &req.knn)?;
    let noise = if req.noise_sweep.is_empty() {
        None
    } else {
        let best = embeddings
            .iter()
            .find(|e| e.name() == result.overall.embedding)
            .expect("overall comes from the list");
        let points = noise_sweep(&train, &validation, best, &req.noise_sweep, &req.knn, req.seed)?;
        Some(NoiseSweepReport {
            embedding: best.name().to_string(),
            injected_into: "train+validation".into(),
            seed: req.seed,
            points,
        })
    };
    Ok(FeasibilityReport {
        class_count: train.class_count(),
        n_train: train.len(),
        n_validation: validation.len(),
        inversion: INVERSION.into(),
        estimates: result.estimates,
        overall: result.overall,
        noise_sweep: noise,
    })
}

// ---- ci -------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CiPlanReport {
    pub condition: String,
    pub delta: f64,
    pub mode: ReuseMode,
    pub test_size: u64,
    /// Samples needed for a single use.
    pub required_single: u64,
    /// Largest reuse budget the test set supports.
    pub reuses: u64,
}

pub fn run_ci_plan(condition: &str, delta: f64, mode: ReuseMode, test_size: u64) -> Result<CiPlanReport, JobError> {
    let cond = parse_condition(condition).map_err(CiError::from)?;
    Ok(CiPlanReport {
        condition: cond.to_string(),
        delta,
        mode,
        test_size,
        required_single: required_sample_size(&cond, delta)?,
        reuses: max_reuses(test_size, &cond, delta, mode)?,
    })
}

/// New ledger bound to the test set stored at `test_set`.
pub fn init_ledger(test_set: &Path, policy: ReusePolicy) -> Result<CiLedger, JobError> {
    let data = load_dataset(test_set, DataFormat::from_path(test_set))?;
    Ok(CiLedger::for_test_set(policy, &data)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CiCommitRequest {
    pub test_set: PathBuf,
    pub old: PathBuf,
    pub new: PathBuf,
    pub condition: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiStatus {
    Pass,
    Fail,
    RefreshRequired,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CiCommitReport {
    pub status: CiStatus,
    pub condition: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resolution: Option<Resolution>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimates: Option<ScoreEstimates>,
    pub used: u64,
    pub reuses: u64,
}

fn single_column(path: &Path, data: &LabeledDataset) -> Result<Vec<usize>, JobError> {
    let m = load_predictions(path, Some(data.classes()))?;
    if m.models() != 1 {
        return Err(JobError::Data(DataError::Invalid(format!(
            "{}: expected one prediction column, found {}",
            path.display(),
            m.models()
        ))));
    }
    Ok(m.column(0))
}

/// Evaluates one commit and updates `ledger` in place. An exhausted budget
/// is reported as status `refresh_required`, leaving the ledger unchanged.
pub fn run_ci_commit(ledger: &mut CiLedger, req: &CiCommitRequest) -> Result<CiCommitReport, JobError> {
    let cond = parse_condition(&req.condition).map_err(CiError::from)?;
    let data = load_dataset(&req.test_set, DataFormat::from_path(&req.test_set))?;
    let old = single_column(&req.old, &data)?;
    let new = single_column(&req.new, &data)?;
    let base = CiCommitReport {
        status: CiStatus::RefreshRequired,
        condition: cond.to_string(),
        resolution: None,
        score: None,
        estimates: None,
        used: ledger.used,
        reuses: ledger.policy.reuses,
    };
    match ledger.commit(&data.fingerprint(), data.labels(), &old, &new, &cond) {
        Ok(out) => Ok(CiCommitReport {
            status: match out.decision {
                Decision::Pass => CiStatus::Pass,
                Decision::Fail => CiStatus::Fail,
            },
            resolution: Some(out.resolution),
            score: Some(out.score),
            estimates: Some(out.estimates),
            used: out.used,
            ..base
        }),
        Err(CiError::RefreshRequired { .. }) => Ok(base),
        Err(e) => Err(e.into()),
    }
}

// ---- cleaning -------------------------------------------------------------

/// Where candidate repairs come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateSource {
    File(PathBuf),
    Generators(Vec<RepairGenerator>),
}

/// Builds a cleaning session from an incomplete CSV, candidate repairs and a
/// validation feature file.
pub fn open_cleaning_session(
    data: &Path,
    candidates: &CandidateSource,
    validation: &Path,
    knn: KnnConfig,
    world_cap: u64,
) -> Result<CleaningSession, JobError> {
    let table = load_incomplete(data)?;
    let map = match candidates {
        CandidateSource::File(p) => load_candidates(p)?,
        CandidateSource::Generators(g) => generate_candidates(&table, g)?,
    };
    let data = IncompleteDataset::new(table, map)?;
    let validation = load_features(validation)?;
    Ok(CleaningSession::with_cap(data, validation, knn, world_cap)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CleanSimRequest {
    pub data: PathBuf,
    pub candidates: CandidateSource,
    pub validation: PathBuf,
    pub truth: PathBuf,
    pub policy: CleaningPolicy,
    pub seed: Seed,
    pub stop: StopCondition,
    pub knn: KnnConfig,
    pub world_cap: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CleanSimReport {
    pub trace: Vec<TraceStep>,
    pub summary: SimulationSummary,
}

pub fn run_clean_simulation(req: &CleanSimRequest) -> Result<CleanSimReport, JobError> {
    let mut session = open_cleaning_session(&req.data, &req.candidates, &req.validation, req.knn, req.world_cap)?;
    let truth = load_ground_truth(&req.truth)?;
    let initial = session.metrics()?;
    let trace = simulate_cleaning(&mut session, &truth, req.policy, req.seed, req.stop)?;
    let summary = SimulationSummary::new(&initial, &trace, session.validation().len());
    Ok(CleanSimReport { trace, summary })
}

// ---- model picking --------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PickSimRequest {
    pub stream: PathBuf,
    pub truth: PathBuf,
    pub budget: u64,
    pub eta: Option<f64>,
    #[serde(default)]
    pub q_floor: f64,
    pub seed: Seed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PickSimReport {
    pub models: usize,
    pub eta: f64,
    pub final_pick: usize,
    pub queries: u64,
    pub weights: Vec<f64>,
    pub trace: Vec<PickerTraceStep>,
}

pub fn run_pick_simulation(req: &PickSimRequest) -> Result<PickSimReport, JobError> {
    let items = load_stream(&req.stream)?;
    let truths = load_truths(&req.truth)?;
    let matrix = stream_matrix(&items)?;
    let m = matrix.models();
    let eta = req.eta.unwrap_or_else(|| default_eta(m, req.budget, items.len() as u64));
    let state = PickerState::init(m, req.budget, eta, req.seed)?.with_floor(req.q_floor)?;
    let run = simulate(&matrix, &truths, state)?;
    Ok(PickSimReport {
        models: m,
        eta,
        final_pick: run.final_pick,
        queries: run.queries,
        weights: run.weights,
        trace: run.trace,
    })
}
