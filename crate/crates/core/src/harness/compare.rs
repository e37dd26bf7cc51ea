use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::time::Instant;

use super::protocol::{Fold, Protocol};
use super::HarnessError;
use crate::difficulty::{orders_from_log, scores_from_log, DifficultyWeights};
use crate::edurank;
use crate::exec::{self, Parallelism};
use crate::metrics::{ap_correlation, ndpm, paired_t_test, spearman_rho, MetricError, TTestResult};
use crate::model::{PartialOrder, QuestionId, StudentId};
use crate::ncf::{derive_seed, NcfConfig, NcfModel, TrainingRecord};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FitSummary {
    pub wall_ms: f64,
    /// Final training MSE for trained models.
    pub final_mse: Option<f64>,
}

/// A question-sequencing algorithm under evaluation. `fit` is called once
/// per fold before any `rank` call on that fold's cases; `rank` may be
/// called concurrently.
pub trait Ranker: Send + Sync {
    fn name(&self) -> &str;

    fn fit(&mut self, fold: &Fold, weights: &DifficultyWeights, mode: Parallelism) -> Result<FitSummary, HarnessError>;

    fn rank(
        &self,
        student: &StudentId,
        candidates: &BTreeSet<QuestionId>,
        mode: Parallelism,
    ) -> Result<PartialOrder, HarnessError>;
}

pub struct EduRankRanker {
    memory_size: usize,
    orders: BTreeMap<StudentId, PartialOrder>,
}

impl EduRankRanker {
    pub fn new(memory_size: usize) -> Self {
        EduRankRanker {
            memory_size,
            orders: BTreeMap::new(),
        }
    }
}

impl Ranker for EduRankRanker {
    fn name(&self) -> &str {
        "EduRank"
    }

    fn fit(&mut self, fold: &Fold, weights: &DifficultyWeights, _mode: Parallelism) -> Result<FitSummary, HarnessError> {
        let start = Instant::now();
        self.orders = orders_from_log(&fold.training, weights).orders;
        Ok(FitSummary {
            wall_ms: elapsed_ms(start),
            final_mse: None,
        })
    }

    fn rank(
        &self,
        student: &StudentId,
        candidates: &BTreeSet<QuestionId>,
        mode: Parallelism,
    ) -> Result<PartialOrder, HarnessError> {
        Ok(edurank::rank(student, candidates, &self.orders, self.memory_size, mode)?)
    }
}

pub struct NcfRanker {
    config: NcfConfig,
    checkpoint_dir: Option<PathBuf>,
    model: Option<NcfModel>,
}

impl NcfRanker {
    pub fn new(config: NcfConfig) -> Self {
        NcfRanker {
            config,
            checkpoint_dir: None,
            model: None,
        }
    }

    /// Saves each fold's trained model as `ncf-fold<N>.json` under `dir`.
    pub fn with_checkpoints(mut self, dir: impl Into<PathBuf>) -> Self {
        self.checkpoint_dir = Some(dir.into());
        self
    }

    pub fn model(&self) -> Option<&NcfModel> {
        self.model.as_ref()
    }
}

impl Ranker for NcfRanker {
    fn name(&self) -> &str {
        "NCF"
    }

    fn fit(&mut self, fold: &Fold, weights: &DifficultyWeights, mode: Parallelism) -> Result<FitSummary, HarnessError> {
        self.model = None;
        let start = Instant::now();
        let scored = scores_from_log(&fold.training, weights);
        let students: Vec<StudentId> = scored.scores.keys().cloned().collect();
        let questions: Vec<QuestionId> = scored
            .scores
            .values()
            .flat_map(|m| m.keys().cloned())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let records: Vec<TrainingRecord> = scored
            .scores
            .into_iter()
            .flat_map(|(student, per)| {
                per.into_iter().map(move |(question, target)| TrainingRecord {
                    student: student.clone(),
                    question,
                    target,
                })
            })
            .collect();
        let config = NcfConfig {
            seed: derive_seed(self.config.seed, fold.index as u64),
            ..self.config
        };
        let mut model = NcfModel::init(config, students, questions)?;
        let log = model.train(&records, mode)?;
        let wall_ms = elapsed_ms(start);
        if let Some(dir) = &self.checkpoint_dir {
            std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
            model.save(dir.join(format!("ncf-fold{}.json", fold.index)))?;
        }
        self.model = Some(model);
        Ok(FitSummary {
            wall_ms,
            final_mse: log.final_mse(),
        })
    }

    fn rank(
        &self,
        student: &StudentId,
        candidates: &BTreeSet<QuestionId>,
        mode: Parallelism,
    ) -> Result<PartialOrder, HarnessError> {
        let model = self
            .model
            .as_ref()
            .ok_or_else(|| HarnessError::Protocol("NCF ranker used before fit".into()))?;
        Ok(model.rank(student, candidates, mode)?)
    }
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaseScores {
    pub sap: f64,
    pub sr: f64,
    pub ndpm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub algorithm: String,
    pub fold: usize,
    pub student: StudentId,
    pub questionnaire: String,
    pub outcome: Result<CaseScores, String>,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitRecord {
    pub fold: usize,
    pub algorithm: String,
    pub outcome: Result<FitSummary, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlgorithmSummary {
    pub algorithm: String,
    pub cases_ok: usize,
    pub cases_failed: usize,
    /// Means over successful rows; `None` when every row failed.
    pub mean_sap: Option<f64>,
    pub mean_sr: Option<f64>,
    pub mean_ndpm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TestOutcome {
    Computed(TTestResult),
    /// Every paired difference was identical.
    NoDifference,
    NotRun(String),
}

/// Paired t-test of `first − second` on one metric.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricTest {
    pub metric: &'static str,
    pub first: String,
    pub second: String,
    pub pairs: usize,
    pub outcome: TestOutcome,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub algorithms: Vec<String>,
    pub rows: Vec<EvalRow>,
    pub summaries: Vec<AlgorithmSummary>,
    pub tests: Vec<MetricTest>,
    pub fits: Vec<FitRecord>,
    pub alpha: f64,
}

impl EvalReport {
    /// Builds aggregates and t-tests from per-case rows.
    pub fn from_rows(algorithms: Vec<String>, rows: Vec<EvalRow>, fits: Vec<FitRecord>, alpha: f64) -> Self {
        let summaries = algorithms.iter().map(|a| summarize(a, &rows)).collect();
        let mut tests = Vec::new();
        for (i, first) in algorithms.iter().enumerate() {
            for second in &algorithms[i + 1..] {
                for metric in ["SAP", "SR"] {
                    tests.push(test_metric(metric, first, second, &rows, alpha));
                }
            }
        }
        EvalReport {
            algorithms,
            rows,
            summaries,
            tests,
            fits,
            alpha,
        }
    }

    pub fn summary(&self, algorithm: &str) -> Option<&AlgorithmSummary> {
        self.summaries.iter().find(|s| s.algorithm == algorithm)
    }

    pub fn test(&self, metric: &str) -> Option<&MetricTest> {
        self.tests.iter().find(|t| t.metric == metric)
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn summarize(algorithm: &str, rows: &[EvalRow]) -> AlgorithmSummary {
    let mine: Vec<&EvalRow> = rows.iter().filter(|r| r.algorithm == algorithm).collect();
    let ok: Vec<CaseScores> = mine.iter().filter_map(|r| r.outcome.as_ref().ok().copied()).collect();
    AlgorithmSummary {
        algorithm: algorithm.to_string(),
        cases_ok: ok.len(),
        cases_failed: mine.len() - ok.len(),
        mean_sap: mean(ok.iter().map(|s| s.sap)),
        mean_sr: mean(ok.iter().map(|s| s.sr)),
        mean_ndpm: mean(ok.iter().map(|s| s.ndpm)),
    }
}

fn test_metric(metric: &'static str, first: &str, second: &str, rows: &[EvalRow], alpha: f64) -> MetricTest {
    let pick = |s: &CaseScores| if metric == "SAP" { s.sap } else { s.sr };
    let by_case = |algorithm: &str| -> BTreeMap<(usize, &StudentId, &str), f64> {
        rows.iter()
            .filter(|r| r.algorithm == algorithm)
            .filter_map(|r| {
                let s = r.outcome.as_ref().ok()?;
                Some(((r.fold, &r.student, r.questionnaire.as_str()), pick(s)))
            })
            .collect()
    };
    let a = by_case(first);
    let b = by_case(second);
    let pairs: Vec<(f64, f64)> = a
        .iter()
        .filter_map(|(case, &x)| b.get(case).map(|&y| (x, y)))
        .collect();
    let outcome = match paired_t_test(&pairs, alpha) {
        Ok(t) => TestOutcome::Computed(t),
        Err(MetricError::Degenerate) => TestOutcome::NoDifference,
        Err(e) => TestOutcome::NotRun(e.to_string()),
    };
    MetricTest {
        metric,
        first: first.to_string(),
        second: second.to_string(),
        pairs: pairs.len(),
        outcome,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonOptions {
    pub weights: DifficultyWeights,
    pub alpha: f64,
    pub parallelism: Parallelism,
}

impl Default for ComparisonOptions {
    fn default() -> Self {
        ComparisonOptions {
            weights: DifficultyWeights::default(),
            alpha: 0.05,
            parallelism: Parallelism::default(),
        }
    }
}

fn score_case(reference: &PartialOrder, predicted: &PartialOrder) -> Result<CaseScores, MetricError> {
    let predicted = predicted.to_total();
    Ok(CaseScores {
        sap: ap_correlation(reference, &predicted)?.value(),
        sr: spearman_rho(reference, &predicted)?.value(),
        ndpm: ndpm(reference, &predicted)?,
    })
}

/// Fits every ranker on each fold, ranks that fold's cases and scores the
/// linearized predictions against the references. Failures are kept as
/// failed rows.
pub fn run_comparison(
    protocol: &Protocol,
    rankers: &mut [&mut dyn Ranker],
    options: &ComparisonOptions,
) -> EvalReport {
    let algorithms: Vec<String> = rankers.iter().map(|r| r.name().to_string()).collect();
    let mut rows = Vec::with_capacity(protocol.case_count() * rankers.len());
    let mut fits = Vec::new();
    for fold in &protocol.folds {
        let mut fitted: Vec<Result<(), String>> = Vec::with_capacity(rankers.len());
        for ranker in rankers.iter_mut() {
            let outcome = ranker.fit(fold, &options.weights, options.parallelism);
            if let Err(e) = &outcome {
                log::warn!("{} failed to fit fold {}: {e}", ranker.name(), fold.index);
            }
            fitted.push(outcome.as_ref().map(|_| ()).map_err(|e| format!("fit failed: {e}")));
            fits.push(FitRecord {
                fold: fold.index,
                algorithm: ranker.name().to_string(),
                outcome: outcome.map_err(|e| e.to_string()),
            });
        }
        let shared: Vec<&dyn Ranker> = rankers.iter().map(|r| &**r).collect();
        let per_case = exec::map_slice(options.parallelism, &fold.cases, |case| {
            shared
                .iter()
                .zip(&fitted)
                .map(|(ranker, fit)| {
                    let start = Instant::now();
                    let outcome = fit.clone().and_then(|()| {
                        let predicted = ranker
                            .rank(&case.student, &case.candidates, Parallelism::Sequential)
                            .map_err(|e| e.to_string())?;
                        score_case(&case.reference, &predicted).map_err(|e| e.to_string())
                    });
                    EvalRow {
                        algorithm: ranker.name().to_string(),
                        fold: fold.index,
                        student: case.student.clone(),
                        questionnaire: case.questionnaire.clone(),
                        outcome,
                        wall_ms: elapsed_ms(start),
                    }
                })
                .collect::<Vec<_>>()
        });
        rows.extend(per_case.into_iter().flatten());
    }
    EvalReport::from_rows(algorithms, rows, fits, options.alpha)
}
