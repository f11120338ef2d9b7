//! Experiment orchestration: run configuration, cell execution, judge-based
//! feedback analysis, and synthetic pipeline validation.

mod config;
mod judge;
mod run;
mod simulate;

pub use config::{BackendSpec, DatasetEntry, RunConfig, CACHE_DIR_ENV};
pub use judge::{
    judge_pair, judge_role, quality_summary, role_summary, FeedbackRole, JudgeOutcome,
    JudgeResult, QualityKind, QualitySummary, RoleSummary, Winner,
};
pub use run::{
    execute, load_records, overlap_from_records, recompute_reports, resolve, run, CellPlan,
    CellReport, CellStamp, Manifest, ResolvedRun, RunOutcome,
};
pub use simulate::{simulate, SimulateScenario, SimulateSpec};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("backend error: {0}")]
    Backend(String),
    #[error("judgment for item {0} was unparseable")]
    UnparseableJudgment(String),
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
    #[error(transparent)]
    Strategy(#[from] crate::strategies::StrategyError),
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
}
