use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::HarnessError;
use crate::difficulty::{orders_from_log, DifficultyWeights};
use crate::model::{AnswerAttempt, PartialOrder, QuestionId, StudentId};

/// One held-out (student, questionnaire) block.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalCase {
    pub student: StudentId,
    pub questionnaire: String,
    pub candidates: BTreeSet<QuestionId>,
    /// True difficulty order derived from the held-out attempts.
    pub reference: PartialOrder,
}

/// Training log with one questionnaire of every sampled student removed,
/// and the cases built from the removed blocks.
#[derive(Debug, Clone)]
pub struct Fold {
    pub index: usize,
    pub training: Vec<AnswerAttempt>,
    pub cases: Vec<EvalCase>,
}

#[derive(Debug, Clone)]
pub struct Protocol {
    pub folds: Vec<Fold>,
}

impl Protocol {
    pub fn cases(&self) -> impl Iterator<Item = (&Fold, &EvalCase)> {
        self.folds.iter().flat_map(|f| f.cases.iter().map(move |c| (f, c)))
    }

    pub fn case_count(&self) -> usize {
        self.folds.iter().map(|f| f.cases.len()).sum()
    }
}

type Blocks<'a> = BTreeMap<&'a StudentId, BTreeMap<&'a str, BTreeSet<&'a QuestionId>>>;

/// Samples `n_students` eligible students and `n_questionnaires` of their
/// questionnaires, then builds one fold per questionnaire slot.
///
/// Fold `f` holds out the `f`-th sampled questionnaire of every sampled
/// student, so each student keeps the rest of their history for training.
/// A student is eligible with at least `n_questionnaires` questionnaires of
/// two or more distinct questions, plus at least one further questionnaire
/// when `n_questionnaires` is 1. Any attempt by the same student on a
/// held-out question is removed from that fold's training, whatever
/// questionnaire it came from.
pub fn make_cases(
    attempts: &[AnswerAttempt],
    n_students: usize,
    n_questionnaires: usize,
    seed: u64,
    weights: &DifficultyWeights,
) -> Result<Protocol, HarnessError> {
    if n_students == 0 || n_questionnaires == 0 {
        return Err(HarnessError::Protocol(
            "student and questionnaire counts must be positive".into(),
        ));
    }
    let mut blocks: Blocks = BTreeMap::new();
    for a in attempts {
        blocks
            .entry(&a.student)
            .or_default()
            .entry(a.questionnaire.as_str())
            .or_default()
            .insert(&a.question);
    }
    let qualifying = |units: &BTreeMap<&str, BTreeSet<&QuestionId>>| -> Vec<String> {
        units
            .iter()
            .filter(|(_, qs)| qs.len() >= 2)
            .map(|(u, _)| u.to_string())
            .collect()
    };
    let mut eligible: Vec<&StudentId> = blocks
        .iter()
        .filter(|(_, units)| qualifying(units).len() >= n_questionnaires && units.len() >= 2)
        .map(|(s, _)| *s)
        .collect();
    if eligible.len() < n_students {
        return Err(HarnessError::Protocol(format!(
            "need {n_students} students with {n_questionnaires} questionnaires of at least 2 questions, \
             only {} qualify (short by {})",
            eligible.len(),
            n_students - eligible.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    eligible.shuffle(&mut rng);
    eligible.truncate(n_students);
    eligible.sort();
    let chosen: Vec<(&StudentId, Vec<String>)> = eligible
        .into_iter()
        .map(|s| {
            let mut units = qualifying(&blocks[s]);
            units.shuffle(&mut rng);
            units.truncate(n_questionnaires);
            (s, units)
        })
        .collect();

    let mut folds = Vec::with_capacity(n_questionnaires);
    for f in 0..n_questionnaires {
        let held: BTreeMap<&StudentId, &str> = chosen.iter().map(|(s, units)| (*s, units[f].as_str())).collect();
        let held_questions: BTreeMap<&StudentId, &BTreeSet<&QuestionId>> =
            held.iter().map(|(s, u)| (*s, &blocks[s][u])).collect();

        let mut training = Vec::new();
        let mut held_out: BTreeMap<&StudentId, Vec<AnswerAttempt>> = BTreeMap::new();
        for a in attempts {
            match held.get(&a.student) {
                Some(&unit) if unit == a.questionnaire => held_out.entry(&a.student).or_default().push(a.clone()),
                Some(_) if held_questions[&a.student].contains(&a.question) => {}
                _ => training.push(a.clone()),
            }
        }
        let cases = held_out
            .into_iter()
            .map(|(student, block)| {
                let mut reference = orders_from_log(&block, weights).orders;
                let reference = reference.remove(student).expect("block has attempts");
                EvalCase {
                    student: student.clone(),
                    questionnaire: held[student].to_string(),
                    candidates: reference.items(),
                    reference,
                }
            })
            .collect();
        folds.push(Fold { index: f, training, cases });
    }
    Ok(Protocol { folds })
}
