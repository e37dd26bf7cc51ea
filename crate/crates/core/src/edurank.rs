//! Memory-based difficulty ranking.
//!
//! The target student's neighbors are the students whose difficulty orders
//! agree most with the target's own order on shared questions (AP rank
//! correlation). For every pair of candidate questions each neighbor casts a
//! win/loss/tie verdict, verdicts are weighted by similarity, and the sign of
//! the weighted sum is the pair's relative vote. A question's Copeland score
//! is the sum of its relative votes against all other candidates, and the
//! output order sorts candidates by that score.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::exec::{self, Parallelism};
use crate::metrics::ap_correlation;
use crate::model::{order_from_scores, Comparison, PartialOrder, QuestionId, StudentId};

#[derive(Debug, Error, PartialEq)]
pub enum EduRankError {
    #[error("no candidate questions to rank")]
    NoCandidates,
    #[error("memory size must be at least 1")]
    ZeroMemory,
}

/// A single neighbor's verdict on `(q, q_l)`: +1 if `q` is harder, −1 if
/// `q_l` is, 0 when tied or either is unknown to the neighbor.
pub fn gamma(q: &QuestionId, q_l: &QuestionId, order: &PartialOrder) -> i8 {
    match order.compare(q, q_l) {
        Comparison::MoreDifficult => 1,
        Comparison::LessDifficult => -1,
        Comparison::TiedOrIncomparable => 0,
    }
}

/// AP correlation between the target's order and a neighbor's order over
/// the questions both have answered, the target's order as reference.
/// Fewer than two shared questions gives 0.
pub fn similarity(target_order: &PartialOrder, neighbor_order: &PartialOrder) -> f64 {
    let shared = target_order.restrict(|q| neighbor_order.contains(q));
    if shared.len() < 2 {
        return 0.0;
    }
    ap_correlation(&shared, neighbor_order)
        .map(|c| c.value())
        .unwrap_or(0.0)
}

/// The `memory_size` students most similar to `target`, most similar first.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborSet {
    target: StudentId,
    neighbors: Vec<(StudentId, f64)>,
    memory_size: usize,
}

impl NeighborSet {
    /// Scores every other student against the target and keeps the top
    /// `memory_size` by similarity (equal similarity: ascending id).
    pub fn select(
        target: &StudentId,
        orders: &BTreeMap<StudentId, PartialOrder>,
        memory_size: usize,
        mode: Parallelism,
    ) -> Result<Self, EduRankError> {
        if memory_size == 0 {
            return Err(EduRankError::ZeroMemory);
        }
        let empty = PartialOrder::empty(target.clone());
        let target_order = orders.get(target).unwrap_or(&empty);
        let others: Vec<(&StudentId, &PartialOrder)> =
            orders.iter().filter(|(s, _)| *s != target).collect();
        let mut scored: Vec<(StudentId, f64)> = exec::map_slice(mode, &others, |(s, o)| {
            ((*s).clone(), similarity(target_order, o))
        });
        scored.sort_by(|(sa, a), (sb, b)| b.total_cmp(a).then_with(|| sa.cmp(sb)));
        scored.truncate(memory_size);
        Ok(NeighborSet {
            target: target.clone(),
            neighbors: scored,
            memory_size,
        })
    }

    /// Builds a set from explicit `(student, similarity)` pairs, re-sorted.
    pub fn from_similarities(
        target: StudentId,
        mut neighbors: Vec<(StudentId, f64)>,
        memory_size: usize,
    ) -> Result<Self, EduRankError> {
        if memory_size == 0 {
            return Err(EduRankError::ZeroMemory);
        }
        neighbors.retain(|(s, sim)| *s != target && sim.is_finite());
        neighbors.sort_by(|(sa, a), (sb, b)| b.total_cmp(a).then_with(|| sa.cmp(sb)));
        neighbors.truncate(memory_size);
        Ok(NeighborSet {
            target,
            neighbors,
            memory_size,
        })
    }

    pub fn target(&self) -> &StudentId {
        &self.target
    }

    pub fn neighbors(&self) -> &[(StudentId, f64)] {
        &self.neighbors
    }

    pub fn memory_size(&self) -> usize {
        self.memory_size
    }
}

/// Sign of the similarity-weighted sum of neighbor verdicts on `(q, q_l)`.
/// Neighbors without an order abstain.
pub fn relative_vote(
    q: &QuestionId,
    q_l: &QuestionId,
    neighbors: &NeighborSet,
    orders: &BTreeMap<StudentId, PartialOrder>,
) -> i8 {
    let weighted: f64 = neighbors
        .neighbors
        .iter()
        .filter_map(|(s, sim)| orders.get(s).map(|o| sim * f64::from(gamma(q, q_l, o))))
        .sum();
    if weighted > 0.0 {
        1
    } else if weighted < 0.0 {
        -1
    } else {
        0
    }
}

/// Copeland scores `c(q)` for every candidate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CopelandTable {
    pub scores: BTreeMap<QuestionId, i64>,
}

impl CopelandTable {
    pub fn tally(
        candidates: &BTreeSet<QuestionId>,
        neighbors: &NeighborSet,
        orders: &BTreeMap<StudentId, PartialOrder>,
        mode: Parallelism,
    ) -> Self {
        let items: Vec<&QuestionId> = candidates.iter().collect();
        let n = items.len();
        // each unordered pair is voted once; the mirrored vote is its negation
        let votes: Vec<Vec<i8>> = exec::map_range(mode, n, |i| {
            items[i + 1..]
                .iter()
                .map(|q_l| relative_vote(items[i], q_l, neighbors, orders))
                .collect()
        });
        let mut tally = vec![0i64; n];
        for (i, row) in votes.iter().enumerate() {
            for (offset, &rv) in row.iter().enumerate() {
                let j = i + 1 + offset;
                tally[i] += i64::from(rv);
                tally[j] -= i64::from(rv);
            }
        }
        CopelandTable {
            scores: items.into_iter().cloned().zip(tally).collect(),
        }
    }

    /// Candidates by descending score; equal scores tie.
    pub fn to_order(&self, owner: StudentId) -> PartialOrder {
        order_from_scores(
            owner,
            self.scores.iter().map(|(q, c)| (q.clone(), *c as f64)),
            0.0,
        )
        .expect("non-empty table of finite scores")
    }
}

/// Ranks `candidates` for `target` by Copeland aggregation over the target's
/// `memory_size` nearest neighbors.
///
/// A target with no known order has zero similarity to everyone, so every
/// vote is 0 and the result is a single tie-group.
pub fn rank(
    target: &StudentId,
    candidates: &BTreeSet<QuestionId>,
    orders: &BTreeMap<StudentId, PartialOrder>,
    memory_size: usize,
    mode: Parallelism,
) -> Result<PartialOrder, EduRankError> {
    if candidates.is_empty() {
        return Err(EduRankError::NoCandidates);
    }
    let neighbors = NeighborSet::select(target, orders, memory_size, mode)?;
    let table = CopelandTable::tally(candidates, &neighbors, orders, mode);
    Ok(table.to_order(target.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(id: &str) -> StudentId {
        StudentId::new(id).unwrap()
    }

    fn q(id: &str) -> QuestionId {
        QuestionId::new(id).unwrap()
    }

    fn total(owner: &str, ids: &[&str]) -> PartialOrder {
        PartialOrder::total(s(owner), ids.iter().map(|x| q(x)).collect()).unwrap()
    }

    fn names(order: &PartialOrder) -> Vec<Vec<String>> {
        order
            .groups()
            .iter()
            .map(|g| g.iter().map(|x| x.to_string()).collect())
            .collect()
    }

    #[test]
    fn gamma_cases() {
        assert_eq!(gamma(&q("q"), &q("ql"), &total("j", &["q", "ql"])), 1);
        assert_eq!(gamma(&q("q"), &q("ql"), &total("j", &["ql", "q"])), -1);
        let tied = PartialOrder::new(s("j"), vec![vec![q("q"), q("ql")]]).unwrap();
        assert_eq!(gamma(&q("q"), &q("ql"), &tied), 0);
        assert_eq!(gamma(&q("q"), &q("zz"), &total("j", &["q", "ql"])), 0);
    }

    #[test]
    fn similarity_cases() {
        let t = total("i", &["a", "b", "c"]);
        assert_eq!(similarity(&t, &total("j", &["a", "b", "c"])), 1.0);
        assert_eq!(similarity(&t, &total("j", &["x", "y"])), 0.0);
        assert_eq!(similarity(&t, &total("j", &["a", "y"])), 0.0);
        assert!((similarity(&t, &total("j", &["a", "c", "b"])) - 0.5).abs() < 1e-15);
        // extra questions on the neighbor's side are ignored
        assert_eq!(similarity(&t, &total("j", &["z", "a", "b", "y", "c"])), 1.0);
    }

    fn orders_of(list: Vec<PartialOrder>) -> BTreeMap<StudentId, PartialOrder> {
        list.into_iter().map(|o| (o.owner().clone(), o)).collect()
    }

    #[test]
    fn single_positive_vote() {
        let orders = orders_of(vec![total("j", &["q", "ql"])]);
        let ns = NeighborSet::from_similarities(s("i"), vec![(s("j"), 1.0)], 5).unwrap();
        assert_eq!(relative_vote(&q("q"), &q("ql"), &ns, &orders), 1);
    }

    #[test]
    fn weighted_votes_by_hand() {
        // sims 0.5, 0.2, 0.1 voting +1, -1, 0 -> sign(0.3) = 1
        let orders = orders_of(vec![
            total("j1", &["q", "ql"]),
            total("j2", &["ql", "q"]),
            PartialOrder::new(s("j3"), vec![vec![q("q"), q("ql")]]).unwrap(),
        ]);
        let ns = NeighborSet::from_similarities(
            s("i"),
            vec![(s("j1"), 0.5), (s("j2"), 0.2), (s("j3"), 0.1)],
            5,
        )
        .unwrap();
        assert_eq!(relative_vote(&q("q"), &q("ql"), &ns, &orders), 1);
        assert_eq!(relative_vote(&q("ql"), &q("q"), &ns, &orders), -1);
    }

    #[test]
    fn equal_and_opposite_votes_cancel() {
        let orders = orders_of(vec![total("j1", &["q", "ql"]), total("j2", &["ql", "q"])]);
        let ns =
            NeighborSet::from_similarities(s("i"), vec![(s("j1"), 0.4), (s("j2"), 0.4)], 5).unwrap();
        assert_eq!(relative_vote(&q("q"), &q("ql"), &ns, &orders), 0);
    }

    #[test]
    fn negative_similarity_inverts_votes() {
        let orders = orders_of(vec![total("j", &["q", "ql"])]);
        let ns = NeighborSet::from_similarities(s("i"), vec![(s("j"), -0.5)], 5).unwrap();
        assert_eq!(relative_vote(&q("q"), &q("ql"), &ns, &orders), -1);
    }

    #[test]
    fn neighbor_selection_ties_by_id_and_truncates() {
        let orders = orders_of(vec![
            total("i", &["a", "b", "c"]),
            total("n3", &["a", "b", "c"]),
            total("n1", &["a", "b", "c"]),
            total("n2", &["c", "b", "a"]),
            total("n0", &["a", "c", "b"]),
        ]);
        let ns = NeighborSet::select(&s("i"), &orders, 2, Parallelism::Sequential).unwrap();
        let ids: Vec<&str> = ns.neighbors().iter().map(|(x, _)| x.as_str()).collect();
        assert_eq!(ids, vec!["n1", "n3"]);
        assert!(NeighborSet::select(&s("i"), &orders, 0, Parallelism::Sequential).is_err());
        let all = NeighborSet::select(&s("i"), &orders, 10, Parallelism::Sequential).unwrap();
        assert_eq!(all.neighbors().len(), 4);
        assert_eq!(all.neighbors().last().unwrap().0.as_str(), "n2");
        assert_eq!(all.neighbors().last().unwrap().1, -1.0);
    }

    #[test]
    fn copeland_from_hand_vote_matrix() {
        // neighbors built so that rv(a,b)=1, rv(a,c)=1, rv(b,c)=-1
        let orders = orders_of(vec![total("j", &["a", "c", "b"])]);
        let ns = NeighborSet::from_similarities(s("i"), vec![(s("j"), 1.0)], 1).unwrap();
        let candidates: BTreeSet<QuestionId> = [q("a"), q("b"), q("c")].into_iter().collect();
        let table = CopelandTable::tally(&candidates, &ns, &orders, Parallelism::Sequential);
        assert_eq!(table.scores[&q("a")], 2);
        assert_eq!(table.scores[&q("c")], 0);
        assert_eq!(table.scores[&q("b")], -2);
        assert_eq!(names(&table.to_order(s("i"))), vec![vec!["a"], vec!["c"], vec!["b"]]);
    }

    #[test]
    fn rank_single_candidate_and_errors() {
        let orders = orders_of(vec![total("i", &["a", "b"]), total("j", &["a", "b", "c"])]);
        let one: BTreeSet<QuestionId> = [q("c")].into_iter().collect();
        let out = rank(&s("i"), &one, &orders, 5, Parallelism::Sequential).unwrap();
        assert_eq!(names(&out), vec![vec!["c"]]);
        assert_eq!(
            rank(&s("i"), &BTreeSet::new(), &orders, 5, Parallelism::Sequential),
            Err(EduRankError::NoCandidates)
        );
    }

    #[test]
    fn unknown_target_gives_single_tie_group() {
        let orders = orders_of(vec![total("j", &["a", "b", "c"])]);
        let candidates: BTreeSet<QuestionId> = [q("a"), q("b"), q("c")].into_iter().collect();
        let out = rank(&s("new"), &candidates, &orders, 5, Parallelism::Sequential).unwrap();
        assert_eq!(names(&out), vec![vec!["a", "b", "c"]]);
    }

    #[test]
    fn shared_order_is_reproduced() {
        let shared = ["d", "b", "a", "c"];
        let orders = orders_of(vec![
            total("i", &["x", "y", "z"]),
            total("j1", &["x", "y", "d", "b", "z", "a", "c"]),
            total("j2", &["d", "x", "b", "y", "a", "c", "z"]),
        ]);
        let candidates: BTreeSet<QuestionId> = shared.iter().map(|x| q(x)).collect();
        for mode in [Parallelism::Sequential, Parallelism::Parallel] {
            let out = rank(&s("i"), &candidates, &orders, 1, mode).unwrap();
            assert_eq!(out.linearize(), total("i", &shared).linearize());
            assert!(out.is_total());
        }
    }
}
