//! Evaluation protocol: data ingestion, held-out questionnaire cases,
//! EduRank-vs-NCF comparison, hyperparameter sweeps and reports.

mod compare;
mod ingest;
mod protocol;
mod report;
mod sweep;

use thiserror::Error;

use crate::difficulty::WeightsError;
use crate::edurank::EduRankError;
use crate::model::ModelError;
use crate::ncf::NcfError;

pub use compare::{
    run_comparison, AlgorithmSummary, CaseScores, ComparisonOptions, EduRankRanker, EvalReport, EvalRow,
    FitRecord, FitSummary, MetricTest, NcfRanker, Ranker, TestOutcome,
};
pub use ingest::{
    generate_synthetic, ingest, read_kdd, synthetic_question, synthetic_student, DatasetSource, DatasetSpec, IngestSummary, Ingested, KddOptions,
    SyntheticData, SyntheticSpec,
};
pub use protocol::{make_cases, EvalCase, Fold, Protocol};
pub use report::{read_report_csv, summary_text, write_attempts_csv, write_bench_outputs, write_report_csv, write_sweep_outputs};
pub use sweep::{sweep, PanelRow, SweepGrid, SweepMetrics, SweepOptions, SweepReport, SweepRow};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("{malformed} of {total} rows are malformed, above the {threshold} tolerance")]
    TooManyMalformed {
        malformed: usize,
        total: usize,
        threshold: f64,
    },
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("invalid dataset parameters: {0}")]
    InvalidSpec(String),
    #[error("report: {0}")]
    Report(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Weights(#[from] WeightsError),
    #[error(transparent)]
    Ncf(#[from] NcfError),
    #[error(transparent)]
    EduRank(#[from] EduRankError),
}

impl HarnessError {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
