//! Shared domain types: identifiers, answer attempts, difficulty scores and
//! difficulty orders with ties.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("identifier must not be empty")]
    EmptyId,
    #[error("invalid answer attempt for {student}/{question}: {reason}")]
    InvalidAttempt {
        student: String,
        question: String,
        reason: String,
    },
    #[error("difficulty score {0} outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error("non-finite score for question {0}")]
    NonFiniteScore(QuestionId),
    #[error("cannot build an order from an empty score set")]
    EmptyScores,
    #[error("tie epsilon must be finite and non-negative, got {0}")]
    InvalidEpsilon(f64),
    #[error("tie-groups must be non-empty")]
    EmptyTieGroup,
    #[error("question {0} appears more than once in the order")]
    DuplicateQuestion(QuestionId),
}

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(try_from = "String", into = "String")]
        pub struct $name(String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Result<Self, ModelError> {
                let id = id.into();
                if id.is_empty() {
                    return Err(ModelError::EmptyId);
                }
                Ok(Self(id))
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl TryFrom<String> for $name {
            type Error = ModelError;

            fn try_from(value: String) -> Result<Self, Self::Error> {
                Self::new(value)
            }
        }

        impl From<$name> for String {
            fn from(value: $name) -> String {
                value.0
            }
        }

        impl TryFrom<&str> for $name {
            type Error = ModelError;

            fn try_from(value: &str) -> Result<Self, Self::Error> {
                Self::new(value)
            }
        }
    };
}

string_id!(
    /// Opaque, non-empty student identifier.
    StudentId
);
string_id!(
    /// Opaque, non-empty question identifier.
    QuestionId
);

/// One student's interaction with one question.
#[derive(Debug, Clone, PartialEq)]
pub struct AnswerAttempt {
    pub student: StudentId,
    pub question: QuestionId,
    /// Credit on the first try, 1 meaning correct. Fractional credit allowed.
    pub first_attempt_grade: f64,
    pub retries: u32,
    /// Seconds spent on the question.
    pub duration: f64,
    pub questionnaire: String,
}

impl AnswerAttempt {
    pub fn new(
        student: StudentId,
        question: QuestionId,
        first_attempt_grade: f64,
        retries: u32,
        duration: f64,
        questionnaire: impl Into<String>,
    ) -> Result<Self, ModelError> {
        let attempt = AnswerAttempt {
            student,
            question,
            first_attempt_grade,
            retries,
            duration,
            questionnaire: questionnaire.into(),
        };
        attempt.validate()?;
        Ok(attempt)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let reason = if !(0.0..=1.0).contains(&self.first_attempt_grade) {
            format!("first-attempt grade {} outside [0, 1]", self.first_attempt_grade)
        } else if !(self.duration.is_finite() && self.duration >= 0.0) {
            format!("duration {} must be finite and non-negative", self.duration)
        } else {
            return Ok(());
        };
        Err(ModelError::InvalidAttempt {
            student: self.student.to_string(),
            question: self.question.to_string(),
            reason,
        })
    }
}

/// Personalized difficulty in `[0, 1]`; 1 is maximally difficult.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct DifficultyScore(f64);

impl DifficultyScore {
    pub fn new(value: f64) -> Result<Self, ModelError> {
        if (0.0..=1.0).contains(&value) {
            Ok(Self(value))
        } else {
            Err(ModelError::ScoreOutOfRange(value))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Outcome of comparing two questions under a [`PartialOrder`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Comparison {
    MoreDifficult,
    LessDifficult,
    TiedOrIncomparable,
}

impl Comparison {
    pub fn reverse(self) -> Self {
        match self {
            Comparison::MoreDifficult => Comparison::LessDifficult,
            Comparison::LessDifficult => Comparison::MoreDifficult,
            Comparison::TiedOrIncomparable => Comparison::TiedOrIncomparable,
        }
    }
}

/// A student's difficulty ordering over a set of questions.
///
/// Questions are held in tie-groups listed most difficult first. Two
/// questions are comparable exactly when they sit in different groups;
/// a question missing from the order is incomparable with everything.
/// Within a group questions are kept in ascending id order, which is also
/// the tie-break used by [`PartialOrder::linearize`].
#[derive(Debug, Clone)]
pub struct PartialOrder {
    owner: StudentId,
    groups: Vec<Vec<QuestionId>>,
    group_of: HashMap<QuestionId, usize>,
}

impl PartialEq for PartialOrder {
    fn eq(&self, other: &Self) -> bool {
        self.owner == other.owner && self.groups == other.groups
    }
}

impl PartialOrder {
    pub fn new(owner: StudentId, groups: Vec<Vec<QuestionId>>) -> Result<Self, ModelError> {
        let mut group_of = HashMap::new();
        let mut normalized = Vec::with_capacity(groups.len());
        for (position, mut group) in groups.into_iter().enumerate() {
            if group.is_empty() {
                return Err(ModelError::EmptyTieGroup);
            }
            group.sort();
            for q in &group {
                if group_of.insert(q.clone(), position).is_some() {
                    return Err(ModelError::DuplicateQuestion(q.clone()));
                }
            }
            normalized.push(group);
        }
        Ok(PartialOrder {
            owner,
            groups: normalized,
            group_of,
        })
    }

    /// A strict total order from a most-difficult-first list.
    pub fn total(owner: StudentId, items: Vec<QuestionId>) -> Result<Self, ModelError> {
        Self::new(owner, items.into_iter().map(|q| vec![q]).collect())
    }

    pub fn empty(owner: StudentId) -> Self {
        PartialOrder {
            owner,
            groups: Vec::new(),
            group_of: HashMap::new(),
        }
    }

    pub fn owner(&self) -> &StudentId {
        &self.owner
    }

    pub fn groups(&self) -> &[Vec<QuestionId>] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.group_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.group_of.is_empty()
    }

    pub fn contains(&self, q: &QuestionId) -> bool {
        self.group_of.contains_key(q)
    }

    /// Index of the tie-group holding `q`, 0 being the most difficult.
    pub fn group_index(&self, q: &QuestionId) -> Option<usize> {
        self.group_of.get(q).copied()
    }

    pub fn items(&self) -> BTreeSet<QuestionId> {
        self.group_of.keys().cloned().collect()
    }

    pub fn compare(&self, a: &QuestionId, b: &QuestionId) -> Comparison {
        match (self.group_index(a), self.group_index(b)) {
            (Some(ga), Some(gb)) => match ga.cmp(&gb) {
                Ordering::Less => Comparison::MoreDifficult,
                Ordering::Greater => Comparison::LessDifficult,
                Ordering::Equal => Comparison::TiedOrIncomparable,
            },
            _ => Comparison::TiedOrIncomparable,
        }
    }

    /// Total order, most difficult first, ties broken by ascending id.
    pub fn linearize(&self) -> Vec<QuestionId> {
        self.groups.iter().flatten().cloned().collect()
    }

    /// The same order with every tie broken by ascending id.
    pub fn to_total(&self) -> PartialOrder {
        let mut group_of = HashMap::with_capacity(self.len());
        let groups: Vec<Vec<QuestionId>> = self
            .linearize()
            .into_iter()
            .enumerate()
            .map(|(i, q)| {
                group_of.insert(q.clone(), i);
                vec![q]
            })
            .collect();
        PartialOrder {
            owner: self.owner.clone(),
            groups,
            group_of,
        }
    }

    pub fn is_total(&self) -> bool {
        self.groups.iter().all(|g| g.len() == 1)
    }

    /// Keeps only the questions accepted by `keep`, dropping emptied groups.
    pub fn restrict<F>(&self, keep: F) -> PartialOrder
    where
        F: Fn(&QuestionId) -> bool,
    {
        let mut group_of = HashMap::new();
        let mut groups = Vec::new();
        for group in &self.groups {
            let kept: Vec<QuestionId> = group.iter().filter(|q| keep(q)).cloned().collect();
            if kept.is_empty() {
                continue;
            }
            for q in &kept {
                group_of.insert(q.clone(), groups.len());
            }
            groups.push(kept);
        }
        PartialOrder {
            owner: self.owner.clone(),
            groups,
            group_of,
        }
    }
}

/// Orders questions by descending score.
///
/// Adjacent questions (in sorted order) whose scores differ by at most
/// `tie_epsilon` share a tie-group, which is the transitive closure of the
/// "within epsilon" relation.
pub fn order_from_scores<I>(
    owner: StudentId,
    scores: I,
    tie_epsilon: f64,
) -> Result<PartialOrder, ModelError>
where
    I: IntoIterator<Item = (QuestionId, f64)>,
{
    if !(tie_epsilon.is_finite() && tie_epsilon >= 0.0) {
        return Err(ModelError::InvalidEpsilon(tie_epsilon));
    }
    let mut scored: Vec<(QuestionId, f64)> = Vec::new();
    for (q, s) in scores {
        if !s.is_finite() {
            return Err(ModelError::NonFiniteScore(q));
        }
        scored.push((q, s));
    }
    if scored.is_empty() {
        return Err(ModelError::EmptyScores);
    }
    scored.sort_by(|(qa, a), (qb, b)| b.total_cmp(a).then_with(|| qa.cmp(qb)));

    let mut groups: Vec<Vec<QuestionId>> = Vec::new();
    let mut previous: Option<f64> = None;
    for (q, s) in scored {
        match (previous, groups.last_mut()) {
            (Some(p), Some(group)) if p - s <= tie_epsilon => group.push(q),
            _ => groups.push(vec![q]),
        }
        previous = Some(s);
    }
    PartialOrder::new(owner, groups)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(id: &str) -> StudentId {
        StudentId::new(id).unwrap()
    }

    fn q(id: &str) -> QuestionId {
        QuestionId::new(id).unwrap()
    }

    fn order(groups: &[&[&str]]) -> PartialOrder {
        PartialOrder::new(
            s("o"),
            groups
                .iter()
                .map(|g| g.iter().map(|id| q(id)).collect())
                .collect(),
        )
        .unwrap()
    }

    fn names(groups: &[Vec<QuestionId>]) -> Vec<Vec<&str>> {
        groups
            .iter()
            .map(|g| g.iter().map(QuestionId::as_str).collect())
            .collect()
    }

    #[test]
    fn compare_follows_tie_groups() {
        let o = order(&[&["q1"], &["q2"]]);
        assert_eq!(o.compare(&q("q1"), &q("q2")), Comparison::MoreDifficult);
        assert_eq!(o.compare(&q("q2"), &q("q1")), Comparison::LessDifficult);

        let tied = order(&[&["q1", "q2"]]);
        assert_eq!(tied.compare(&q("q1"), &q("q2")), Comparison::TiedOrIncomparable);

        let single = order(&[&["q1"]]);
        assert_eq!(single.compare(&q("q1"), &q("q3")), Comparison::TiedOrIncomparable);
    }

    #[test]
    fn rejects_malformed_orders() {
        assert_eq!(
            PartialOrder::new(s("o"), vec![vec![q("a")], vec![]]),
            Err(ModelError::EmptyTieGroup)
        );
        assert_eq!(
            PartialOrder::new(s("o"), vec![vec![q("a")], vec![q("b"), q("a")]]),
            Err(ModelError::DuplicateQuestion(q("a")))
        );
        assert_eq!(StudentId::new(""), Err(ModelError::EmptyId));
    }

    #[test]
    fn scores_sort_descending() {
        let o = order_from_scores(
            s("o"),
            [(q("a"), 0.9), (q("b"), 0.5), (q("c"), 0.1)],
            0.0,
        )
        .unwrap();
        assert_eq!(names(o.groups()), vec![vec!["a"], vec!["b"], vec!["c"]]);
    }

    #[test]
    fn exact_ties_share_a_group() {
        let o = order_from_scores(s("o"), [(q("b"), 0.5), (q("a"), 0.5)], 0.0).unwrap();
        assert_eq!(names(o.groups()), vec![vec!["a", "b"]]);
    }

    #[test]
    fn epsilon_ties_group_close_scores() {
        let o = order_from_scores(
            s("o"),
            [(q("a"), 0.50), (q("b"), 0.499), (q("c"), 0.1)],
            0.01,
        )
        .unwrap();
        assert_eq!(names(o.groups()), vec![vec!["a", "b"], vec!["c"]]);
    }

    #[test]
    fn epsilon_ties_chain_transitively() {
        let o = order_from_scores(
            s("o"),
            [(q("a"), 0.30), (q("b"), 0.29), (q("c"), 0.28), (q("d"), 0.1)],
            0.015,
        )
        .unwrap();
        assert_eq!(names(o.groups()), vec![vec!["a", "b", "c"], vec!["d"]]);
    }

    #[test]
    fn rejects_bad_scores() {
        assert_eq!(
            order_from_scores(s("o"), [(q("a"), f64::NAN)], 0.0),
            Err(ModelError::NonFiniteScore(q("a")))
        );
        assert_eq!(
            order_from_scores(s("o"), Vec::<(QuestionId, f64)>::new(), 0.0),
            Err(ModelError::EmptyScores)
        );
        assert!(order_from_scores(s("o"), [(q("a"), 0.1)], -1.0).is_err());
    }

    #[test]
    fn linearize_breaks_ties_by_id() {
        let o = order(&[&["z", "b"], &["a"]]);
        let ids: Vec<String> = o.linearize().iter().map(|q| q.to_string()).collect();
        assert_eq!(ids, vec!["b", "z", "a"]);
        assert!(o.to_total().is_total());
        assert_eq!(o.to_total().linearize(), o.linearize());
    }

    #[test]
    fn restrict_drops_empty_groups() {
        let o = order(&[&["a"], &["b", "c"], &["d"]]);
        let r = o.restrict(|x| x.as_str() != "b" && x.as_str() != "c");
        assert_eq!(names(r.groups()), vec![vec!["a"], vec!["d"]]);
        assert_eq!(r.group_index(&q("d")), Some(1));
    }

    #[test]
    fn attempt_invariants() {
        assert!(AnswerAttempt::new(s("s"), q("q"), 1.0, 0, 0.0, "u").is_ok());
        assert!(AnswerAttempt::new(s("s"), q("q"), 1.5, 0, 0.0, "u").is_err());
        assert!(AnswerAttempt::new(s("s"), q("q"), 0.5, 0, -1.0, "u").is_err());
        assert!(DifficultyScore::new(1.01).is_err());
    }

    fn score_map() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, 1..12)
    }

    proptest! {
        #[test]
        fn compare_is_antisymmetric(scores in score_map(), eps in 0.0f64..0.2) {
            let ids: Vec<QuestionId> = (0..scores.len()).map(|i| q(&format!("q{i}"))).collect();
            let o = order_from_scores(s("o"), ids.iter().cloned().zip(scores.iter().copied()), eps).unwrap();
            for a in &ids {
                for b in &ids {
                    if a != b {
                        prop_assert_eq!(o.compare(a, b), o.compare(b, a).reverse());
                    }
                }
            }
        }

        #[test]
        fn compare_agrees_with_scores_beyond_epsilon(scores in score_map(), eps in 0.0f64..0.2) {
            let ids: Vec<QuestionId> = (0..scores.len()).map(|i| q(&format!("q{i}"))).collect();
            let o = order_from_scores(s("o"), ids.iter().cloned().zip(scores.iter().copied()), eps).unwrap();
            let mut sorted = scores.clone();
            sorted.sort_by(|a, b| b.total_cmp(a));
            // a chain of near-ties can join scores further than eps apart, so
            // strictness is only guaranteed when a gap wider than eps separates them
            let separated = |hi: f64, lo: f64| {
                sorted.windows(2).any(|w| w[0] <= hi && w[1] >= lo && w[0] - w[1] > eps)
            };
            for (i, a) in ids.iter().enumerate() {
                for (j, b) in ids.iter().enumerate() {
                    if scores[i] > scores[j] {
                        prop_assert_ne!(o.compare(a, b), Comparison::LessDifficult);
                        if separated(scores[i], scores[j]) {
                            prop_assert_eq!(o.compare(a, b), Comparison::MoreDifficult);
                        }
                    }
                    if eps == 0.0 && scores[i] > scores[j] {
                        prop_assert_eq!(o.compare(a, b), Comparison::MoreDifficult);
                    }
                }
            }
        }

        #[test]
        fn rescoring_by_position_is_idempotent(scores in prop::collection::hash_set(0u32..1000, 1..12)) {
            let ids: Vec<QuestionId> = (0..scores.len()).map(|i| q(&format!("q{i}"))).collect();
            let pairs = ids.iter().cloned().zip(scores.iter().map(|&x| x as f64 / 1000.0));
            let o = order_from_scores(s("o"), pairs, 0.0).unwrap();
            prop_assert!(o.is_total());
            let rescored = ids.iter().map(|id| (id.clone(), -(o.group_index(id).unwrap() as f64)));
            let again = order_from_scores(s("o"), rescored, 0.0).unwrap();
            prop_assert_eq!(again, o);
        }
    }
}
