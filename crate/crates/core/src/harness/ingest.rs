use std::collections::BTreeMap;
use std::io::Read;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::HarnessError;
use crate::difficulty::DifficultyWeights;
use crate::model::{AnswerAttempt, QuestionId, StudentId};
use crate::ncf::sigmoid;

pub const COL_STUDENT: &str = "Anon Student Id";
pub const COL_HIERARCHY: &str = "Problem Hierarchy";
pub const COL_PROBLEM: &str = "Problem Name";
pub const COL_STEP: &str = "Step Name";
pub const COL_CORRECT: &str = "Correct First Attempt";
pub const COL_INCORRECTS: &str = "Incorrects";
pub const COL_DURATION: &str = "Step Duration (sec)";

/// Parameters of the latent-factor answer generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub students: usize,
    pub questions: usize,
    pub questionnaires: usize,
    pub latent_dim: usize,
    /// Standard deviation of the Gaussian added to `uᵀv` before the sigmoid.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            students: 30,
            questions: 40,
            questionnaires: 4,
            latent_dim: 3,
            noise: 0.05,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |m: &str| Err(HarnessError::InvalidSpec(m.to_string()));
        if self.students == 0 || self.questions == 0 || self.questionnaires == 0 || self.latent_dim == 0 {
            return fail("synthetic counts and latent dimension must be positive");
        }
        if self.questionnaires > self.questions {
            return fail("more questionnaires than questions");
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return fail("noise must be finite and non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KddOptions {
    /// Header of the column used as questionnaire identity.
    pub questionnaire_column: String,
    /// Fraction of malformed rows tolerated before ingestion fails.
    pub malformed_threshold: f64,
}

impl Default for KddOptions {
    fn default() -> Self {
        KddOptions {
            questionnaire_column: COL_HIERARCHY.to_string(),
            malformed_threshold: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Kdd { path: PathBuf, options: KddOptions },
    Synthetic(SyntheticSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub source: DatasetSource,
    pub max_attempts: Option<usize>,
    /// Seed of the shuffle behind `max_attempts`.
    pub sample_seed: u64,
}

impl DatasetSpec {
    pub fn synthetic(spec: SyntheticSpec) -> Self {
        DatasetSpec {
            sample_seed: spec.seed,
            source: DatasetSource::Synthetic(spec),
            max_attempts: None,
        }
    }

    pub fn kdd(path: impl Into<PathBuf>) -> Self {
        DatasetSpec {
            source: DatasetSource::Kdd {
                path: path.into(),
                options: KddOptions::default(),
            },
            max_attempts: None,
            sample_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.max_attempts == Some(0) {
            return Err(HarnessError::InvalidSpec("max_attempts must be at least 1".into()));
        }
        match &self.source {
            DatasetSource::Synthetic(s) => s.validate(),
            DatasetSource::Kdd { options, .. } => {
                if (0.0..=1.0).contains(&options.malformed_threshold) {
                    Ok(())
                } else {
                    Err(HarnessError::InvalidSpec("malformed threshold outside [0, 1]".into()))
                }
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestSummary {
    pub rows_read: usize,
    pub malformed: usize,
    pub missing_durations: usize,
    /// Attempts dropped by the `max_attempts` cap.
    pub capped: usize,
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub attempts: Vec<AnswerAttempt>,
    pub summary: IngestSummary,
}

pub fn ingest(spec: &DatasetSpec) -> Result<Ingested, HarnessError> {
    spec.validate()?;
    let mut ingested = match &spec.source {
        DatasetSource::Kdd { path, options } => {
            let file = std::fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
            read_kdd(std::io::BufReader::new(file), options)?
        }
        DatasetSource::Synthetic(s) => {
            let data = generate_synthetic(s)?;
            Ingested {
                summary: IngestSummary {
                    rows_read: data.attempts.len(),
                    ..IngestSummary::default()
                },
                attempts: data.attempts,
            }
        }
    };
    if let Some(cap) = spec.max_attempts {
        let total = ingested.attempts.len();
        if total > cap {
            let mut indices: Vec<usize> = (0..total).collect();
            indices.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.sample_seed));
            indices.truncate(cap);
            indices.sort_unstable();
            let mut keep = vec![false; total];
            for i in indices {
                keep[i] = true;
            }
            let mut flags = keep.into_iter();
            ingested.attempts.retain(|_| flags.next().unwrap_or(false));
            ingested.summary.capped = total - cap;
        }
    }
    Ok(ingested)
}

struct Columns {
    student: usize,
    questionnaire: usize,
    problem: usize,
    step: usize,
    correct: usize,
    incorrects: usize,
    duration: usize,
}

impl Columns {
    fn locate(headers: &csv::StringRecord, questionnaire_column: &str) -> Result<Self, HarnessError> {
        let find = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| HarnessError::MissingColumn(name.to_string()))
        };
        Ok(Columns {
            student: find(COL_STUDENT)?,
            questionnaire: find(questionnaire_column)?,
            problem: find(COL_PROBLEM)?,
            step: find(COL_STEP)?,
            correct: find(COL_CORRECT)?,
            incorrects: find(COL_INCORRECTS)?,
            duration: find(COL_DURATION)?,
        })
    }
}

enum Duration {
    Present(f64),
    Missing,
}

fn parse_row(row: &csv::StringRecord, cols: &Columns) -> Result<(AnswerAttempt, Duration), String> {
    let field = |i: usize| row.get(i).map(str::trim).ok_or_else(|| format!("missing field {i}"));
    let student = StudentId::new(field(cols.student)?).map_err(|e| e.to_string())?;
    let problem = field(cols.problem)?;
    let step = field(cols.step)?;
    let question = match (problem.is_empty(), step.is_empty()) {
        (true, _) => return Err("empty problem name".into()),
        (false, true) => problem.to_string(),
        (false, false) => format!("{problem}::{step}"),
    };
    let question = QuestionId::new(question).map_err(|e| e.to_string())?;
    let grade: f64 = field(cols.correct)?
        .parse()
        .map_err(|_| "unparsable first-attempt flag".to_string())?;
    let retries: u32 = field(cols.incorrects)?
        .parse()
        .map_err(|_| "unparsable incorrects count".to_string())?;
    let raw_duration = field(cols.duration)?;
    let duration = match raw_duration {
        "" | "." | "NA" | "NaN" => Duration::Missing,
        text => Duration::Present(text.parse().map_err(|_| format!("unparsable duration `{text}`"))?),
    };
    let seconds = match duration {
        Duration::Present(d) => d,
        Duration::Missing => 0.0,
    };
    let questionnaire = field(cols.questionnaire)?;
    if questionnaire.is_empty() {
        return Err("empty questionnaire".into());
    }
    let attempt =
        AnswerAttempt::new(student, question, grade, retries, seconds, questionnaire).map_err(|e| e.to_string())?;
    Ok((attempt, duration))
}

/// Parses a tab-separated KDD-Algebra-style step export. Question identity is
/// `problem::step`; the questionnaire comes from the configured column.
pub fn read_kdd<R: Read>(reader: R, options: &KddOptions) -> Result<Ingested, HarnessError> {
    let mut csv = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .flexible(true)
        .has_headers(true)
        .from_reader(reader);
    let headers = csv.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].trim().is_empty()) {
        log::warn!("dataset is empty");
        return Ok(Ingested {
            attempts: Vec::new(),
            summary: IngestSummary::default(),
        });
    }
    let cols = Columns::locate(&headers, &options.questionnaire_column)?;

    let mut attempts = Vec::new();
    let mut summary = IngestSummary::default();
    for (line, row) in csv.records().enumerate() {
        let row = row?;
        if row.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        summary.rows_read += 1;
        match parse_row(&row, &cols) {
            Ok((attempt, duration)) => {
                if let Duration::Missing = duration {
                    summary.missing_durations += 1;
                }
                attempts.push(attempt);
            }
            Err(reason) => {
                summary.malformed += 1;
                log::debug!("skipping row {}: {reason}", line + 2);
            }
        }
    }
    if summary.rows_read > 0 && summary.malformed as f64 > options.malformed_threshold * summary.rows_read as f64 {
        return Err(HarnessError::TooManyMalformed {
            malformed: summary.malformed,
            total: summary.rows_read,
            threshold: options.malformed_threshold,
        });
    }
    if summary.malformed > 0 {
        log::warn!("skipped {} malformed rows of {}", summary.malformed, summary.rows_read);
    }
    if summary.missing_durations > 0 {
        log::warn!("{} rows had no step duration; recorded as 0 s", summary.missing_durations);
    }
    if summary.rows_read == 0 {
        log::warn!("dataset has a header but no rows");
    }
    Ok(Ingested { attempts, summary })
}

/// Generator output with the latent difficulty behind every attempt.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub attempts: Vec<AnswerAttempt>,
    pub latent: BTreeMap<(StudentId, QuestionId), f64>,
}

pub fn synthetic_student(i: usize) -> StudentId {
    StudentId::new(format!("stu-{i:04}")).expect("non-empty")
}

pub fn synthetic_question(i: usize) -> QuestionId {
    QuestionId::new(format!("q-{i:04}")).expect("non-empty")
}

/// Every student answers every question once. The latent difficulty
/// `d = σ(uᵀv + noise)` drives all three observed signals, each monotone in
/// `d`, so with the default weights the derived score is strictly increasing
/// in `d`. Questions are split into contiguous questionnaire blocks.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData, HarnessError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let latent_vectors = |count: usize, rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
        (0..count)
            .map(|_| (0..spec.latent_dim).map(|_| StandardNormal.sample(rng)).collect())
            .collect()
    };
    let users = latent_vectors(spec.students, &mut rng);
    let items = latent_vectors(spec.questions, &mut rng);
    let caps = DifficultyWeights::default();

    let mut attempts = Vec::with_capacity(spec.students * spec.questions);
    let mut latent = BTreeMap::new();
    for (s, u) in users.iter().enumerate() {
        let student = synthetic_student(s);
        for (q, v) in items.iter().enumerate() {
            let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
            let jitter: f64 = if spec.noise > 0.0 {
                spec.noise * rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            let d = sigmoid(dot + jitter);
            let question = synthetic_question(q);
            let block = q * spec.questionnaires / spec.questions;
            let retries = ((d * caps.retry_cap() as f64).floor() as u32).min(caps.retry_cap());
            attempts.push(AnswerAttempt::new(
                student.clone(),
                question.clone(),
                1.0 - d,
                retries,
                d * caps.duration_cap(),
                format!("unit-{block}"),
            )?);
            latent.insert((student.clone(), question), d);
        }
    }
    Ok(SyntheticData { attempts, latent })
}
