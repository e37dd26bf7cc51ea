//! Personalized difficulty scores derived from raw answer attempts.

use std::collections::{BTreeMap, HashSet};

use thiserror::Error;

use crate::model::{order_from_scores, AnswerAttempt, DifficultyScore, PartialOrder, QuestionId, StudentId};

#[derive(Debug, Error, PartialEq)]
pub enum WeightsError {
    #[error("weights must be finite and non-negative")]
    NegativeWeight,
    #[error("weights must sum to 1, got {0}")]
    NotNormalized(f64),
    #[error("caps must be positive")]
    NonPositiveCap,
}

/// Blend of the three difficulty signals.
///
/// Each signal is normalized to `[0, 1]` (retries and duration are capped
/// before normalizing) and the weights sum to one, so the blended score
/// stays in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DifficultyWeights {
    w_grade: f64,
    w_retries: f64,
    w_duration: f64,
    retry_cap: u32,
    duration_cap: f64,
}

impl DifficultyWeights {
    pub fn new(
        w_grade: f64,
        w_retries: f64,
        w_duration: f64,
        retry_cap: u32,
        duration_cap: f64,
    ) -> Result<Self, WeightsError> {
        let weights = [w_grade, w_retries, w_duration];
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(WeightsError::NegativeWeight);
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(WeightsError::NotNormalized(sum));
        }
        if retry_cap == 0 || !(duration_cap.is_finite() && duration_cap > 0.0) {
            return Err(WeightsError::NonPositiveCap);
        }
        Ok(DifficultyWeights {
            w_grade,
            w_retries,
            w_duration,
            retry_cap,
            duration_cap,
        })
    }

    pub fn w_grade(&self) -> f64 {
        self.w_grade
    }

    pub fn w_retries(&self) -> f64 {
        self.w_retries
    }

    pub fn w_duration(&self) -> f64 {
        self.w_duration
    }

    pub fn retry_cap(&self) -> u32 {
        self.retry_cap
    }

    pub fn duration_cap(&self) -> f64 {
        self.duration_cap
    }
}

impl Default for DifficultyWeights {
    /// Grade 0.5, retries 0.3, duration 0.2; five retries and 300 s saturate.
    fn default() -> Self {
        DifficultyWeights {
            w_grade: 0.5,
            w_retries: 0.3,
            w_duration: 0.2,
            retry_cap: 5,
            duration_cap: 300.0,
        }
    }
}

pub fn difficulty_of(attempt: &AnswerAttempt, weights: &DifficultyWeights) -> DifficultyScore {
    let grade_term = 1.0 - attempt.first_attempt_grade.clamp(0.0, 1.0);
    let retry_term = attempt.retries.min(weights.retry_cap) as f64 / weights.retry_cap as f64;
    let duration_term = attempt.duration.clamp(0.0, weights.duration_cap) / weights.duration_cap;
    let value = weights.w_grade * grade_term
        + weights.w_retries * retry_term
        + weights.w_duration * duration_term;
    // weights only sum to 1 within 1e-9
    DifficultyScore::new(value.clamp(0.0, 1.0)).expect("clamped into range")
}

/// Per-student difficulty scores with duplicate (student, question) pairs
/// resolved to the earliest attempt in log order.
#[derive(Debug, Clone, Default)]
pub struct ScoredLog {
    pub scores: BTreeMap<StudentId, BTreeMap<QuestionId, DifficultyScore>>,
    pub duplicates_dropped: usize,
}

pub fn scores_from_log(attempts: &[AnswerAttempt], weights: &DifficultyWeights) -> ScoredLog {
    let mut log = ScoredLog::default();
    for attempt in attempts {
        let per_student = log.scores.entry(attempt.student.clone()).or_default();
        if per_student.contains_key(&attempt.question) {
            log.duplicates_dropped += 1;
            continue;
        }
        per_student.insert(attempt.question.clone(), difficulty_of(attempt, weights));
    }
    if log.duplicates_dropped > 0 {
        log::warn!(
            "dropped {} repeated (student, question) attempts, keeping the earliest",
            log.duplicates_dropped
        );
    }
    log
}

#[derive(Debug, Clone, Default)]
pub struct DerivedOrders {
    pub orders: BTreeMap<StudentId, PartialOrder>,
    pub duplicates_dropped: usize,
}

/// Builds every student's difficulty order over the questions they answered.
/// Exactly equal scores tie.
pub fn orders_from_log(attempts: &[AnswerAttempt], weights: &DifficultyWeights) -> DerivedOrders {
    let scored = scores_from_log(attempts, weights);
    let orders = scored
        .scores
        .into_iter()
        .map(|(student, scores)| {
            let order = order_from_scores(
                student.clone(),
                scores.into_iter().map(|(q, d)| (q, d.value())),
                0.0,
            )
            .expect("non-empty, finite scores");
            (student, order)
        })
        .collect();
    DerivedOrders {
        orders,
        duplicates_dropped: scored.duplicates_dropped,
    }
}

/// Distinct questions answered by each student.
pub fn answered_by_student(attempts: &[AnswerAttempt]) -> BTreeMap<StudentId, HashSet<QuestionId>> {
    let mut out: BTreeMap<StudentId, HashSet<QuestionId>> = BTreeMap::new();
    for a in attempts {
        out.entry(a.student.clone()).or_default().insert(a.question.clone());
    }
    out
}
