//! Brute-force reference implementations. They work on plain index vectors
//! and enumerate pairs directly, sharing no code with the library.

use std::collections::{BTreeMap, BTreeSet};

use qseq_core::model::{PartialOrder, QuestionId, StudentId};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn qid(i: usize) -> QuestionId {
    QuestionId::new(format!("q{i:02}")).unwrap()
}

pub fn sid(i: usize) -> StudentId {
    StudentId::new(format!("s{i:02}")).unwrap()
}

/// Total order over item indices, most difficult first.
pub fn to_order(owner: usize, items: &[usize]) -> PartialOrder {
    PartialOrder::total(sid(owner), items.iter().map(|&i| qid(i)).collect()).unwrap()
}

/// Order with tie-groups of item indices.
pub fn to_grouped(owner: usize, groups: &[Vec<usize>]) -> PartialOrder {
    PartialOrder::new(
        sid(owner),
        groups.iter().map(|g| g.iter().map(|&i| qid(i)).collect()).collect(),
    )
    .unwrap()
}

fn position(list: &[usize], item: usize) -> usize {
    list.iter().position(|&x| x == item).expect("item present")
}

/// τ_AP over two total orders of the same items.
pub fn ap_oracle(reference: &[usize], predicted: &[usize]) -> f64 {
    let n = predicted.len();
    let mut sum = 0.0;
    for i in 1..n {
        let mut correct = 0usize;
        for j in 0..i {
            if position(reference, predicted[j]) < position(reference, predicted[i]) {
                correct += 1;
            }
        }
        sum += correct as f64 / i as f64;
    }
    2.0 / (n - 1) as f64 * sum - 1.0
}

/// NDPM over two total orders of the same items.
pub fn ndpm_oracle(reference: &[usize], predicted: &[usize]) -> f64 {
    let mut items = reference.to_vec();
    items.sort_unstable();
    let (mut wrong, mut pairs) = (0u64, 0u64);
    for a in 0..items.len() {
        for b in a + 1..items.len() {
            let (x, y) = (items[a], items[b]);
            pairs += 1;
            let truth = position(reference, x) < position(reference, y);
            let guess = position(predicted, x) < position(predicted, y);
            if truth != guess {
                wrong += 1;
            }
        }
    }
    (2 * wrong) as f64 / (2 * pairs) as f64
}

pub fn spearman_oracle(reference: &[usize], predicted: &[usize]) -> f64 {
    let n = reference.len() as f64;
    let sum_sq: f64 = reference
        .iter()
        .map(|&item| {
            let d = position(reference, item) as f64 - position(predicted, item) as f64;
            d * d
        })
        .sum();
    1.0 - 6.0 * sum_sq / (n * (n * n - 1.0))
}

pub fn random_permutation(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let mut items: Vec<usize> = (0..n).collect();
    items.shuffle(rng);
    items
}

/// A student's answered questions as tie-groups of question indices.
pub type Groups = Vec<Vec<usize>>;

#[derive(Debug, Clone)]
pub struct EduRankInstance {
    pub orders: BTreeMap<usize, Groups>,
    pub target: usize,
    pub candidates: Vec<usize>,
    pub memory_size: usize,
}

impl EduRankInstance {
    pub fn library_orders(&self) -> BTreeMap<StudentId, PartialOrder> {
        self.orders
            .iter()
            .map(|(&s, g)| (sid(s), to_grouped(s, g)))
            .collect()
    }

    pub fn candidate_ids(&self) -> BTreeSet<QuestionId> {
        self.candidates.iter().map(|&q| qid(q)).collect()
    }
}

fn random_groups(rng: &mut ChaCha8Rng, items: &[usize]) -> Groups {
    let mut shuffled = items.to_vec();
    shuffled.shuffle(rng);
    let mut groups: Groups = Vec::new();
    for item in shuffled {
        match groups.last_mut() {
            Some(g) if rng.random_bool(0.25) => g.push(item),
            _ => groups.push(vec![item]),
        }
    }
    groups
}

/// |S| ≤ 4 students over a pool of 10 questions, with ties; the target's
/// candidates (|L| ≤ 5) are questions it has not answered.
pub fn random_edurank_instance(seed: u64) -> EduRankInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool = 10;
    let students = rng.random_range(1..=4);
    let mut orders = BTreeMap::new();
    for s in 0..students {
        let answered: Vec<usize> = (0..pool).filter(|_| rng.random_bool(0.6)).collect();
        if answered.is_empty() && rng.random_bool(0.5) {
            continue;
        }
        orders.insert(s, random_groups(&mut rng, &answered));
    }
    let target = 0;
    let known: BTreeSet<usize> = orders
        .get(&target)
        .map(|g| g.iter().flatten().copied().collect())
        .unwrap_or_default();
    let mut unanswered: Vec<usize> = (0..pool).filter(|q| !known.contains(q)).collect();
    if unanswered.is_empty() {
        unanswered.push(pool);
    }
    unanswered.shuffle(&mut rng);
    let count = rng.random_range(1..=unanswered.len().min(5));
    EduRankInstance {
        orders,
        target,
        candidates: unanswered[..count].to_vec(),
        memory_size: rng.random_range(1..=4),
    }
}

/// Every neighbor answers all candidates plus the target's own questions,
/// and all of them order those questions by one shared total order.
pub fn unanimous_instance(seed: u64) -> (EduRankInstance, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool = 12;
    let shared = random_permutation(&mut rng, pool);
    let known_count = rng.random_range(2..=6);
    let known: BTreeSet<usize> = shared.choose_multiple(&mut rng, known_count).copied().collect();
    let remaining: Vec<usize> = shared.iter().copied().filter(|q| !known.contains(q)).collect();
    let candidate_count = rng.random_range(1..=remaining.len().min(5));
    let candidates: Vec<usize> = remaining.choose_multiple(&mut rng, candidate_count).copied().collect();

    let restricted = |keep: &dyn Fn(usize) -> bool| -> Groups {
        shared.iter().copied().filter(|&q| keep(q)).map(|q| vec![q]).collect()
    };
    let mut orders = BTreeMap::new();
    orders.insert(0, restricted(&|q| known.contains(&q)));
    let neighbors = rng.random_range(1..=3);
    for s in 1..=neighbors {
        let extra: BTreeSet<usize> = remaining.iter().copied().filter(|_| rng.random_bool(0.5)).collect();
        orders.insert(
            s,
            restricted(&|q| known.contains(&q) || candidates.contains(&q) || extra.contains(&q)),
        );
    }
    let expected: Vec<usize> = shared.iter().copied().filter(|q| candidates.contains(q)).collect();
    let instance = EduRankInstance {
        orders,
        target: 0,
        candidates,
        memory_size: rng.random_range(1..=neighbors),
    };
    (instance, expected)
}

fn group_position(groups: &Groups, item: usize) -> Option<usize> {
    groups.iter().position(|g| g.contains(&item))
}

/// Linearized (ties by ascending index) restriction of `groups` to `keep`.
fn linearized(groups: &Groups, keep: &BTreeSet<usize>) -> Vec<usize> {
    let mut out = Vec::new();
    for g in groups {
        let mut g: Vec<usize> = g.iter().copied().filter(|q| keep.contains(q)).collect();
        g.sort_unstable();
        out.extend(g);
    }
    out
}

fn similarity_oracle(target: &Groups, neighbor: &Groups) -> f64 {
    let a: BTreeSet<usize> = target.iter().flatten().copied().collect();
    let b: BTreeSet<usize> = neighbor.iter().flatten().copied().collect();
    let shared: BTreeSet<usize> = a.intersection(&b).copied().collect();
    if shared.len() < 2 {
        return 0.0;
    }
    ap_oracle(&linearized(target, &shared), &linearized(neighbor, &shared))
}

fn verdict(groups: &Groups, q: usize, q_l: usize) -> f64 {
    match (group_position(groups, q), group_position(groups, q_l)) {
        (Some(a), Some(b)) if a < b => 1.0,
        (Some(a), Some(b)) if a > b => -1.0,
        _ => 0.0,
    }
}

/// Materializes every pairwise vote and returns the Copeland tie-groups,
/// each sorted ascending.
pub fn edurank_oracle(instance: &EduRankInstance) -> Vec<Vec<usize>> {
    let empty = Groups::new();
    let target_groups = instance.orders.get(&instance.target).unwrap_or(&empty);
    let mut scored: Vec<(usize, f64)> = instance
        .orders
        .iter()
        .filter(|(&s, _)| s != instance.target)
        .map(|(&s, g)| (s, similarity_oracle(target_groups, g)))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(instance.memory_size);

    let mut copeland: BTreeMap<usize, i64> = BTreeMap::new();
    for &q in &instance.candidates {
        let mut c = 0i64;
        for &q_l in &instance.candidates {
            if q == q_l {
                continue;
            }
            let weighted: f64 = scored
                .iter()
                .map(|(s, sim)| sim * verdict(&instance.orders[s], q, q_l))
                .sum();
            c += if weighted > 0.0 {
                1
            } else if weighted < 0.0 {
                -1
            } else {
                0
            };
        }
        copeland.insert(q, c);
    }
    let mut levels: Vec<i64> = copeland.values().copied().collect();
    levels.sort_unstable_by(|a, b| b.cmp(a));
    levels.dedup();
    levels
        .into_iter()
        .map(|level| {
            copeland
                .iter()
                .filter(|(_, &c)| c == level)
                .map(|(&q, _)| q)
                .collect()
        })
        .collect()
}

/// Library order expressed as tie-groups of indices (ids are `qNN`).
pub fn as_index_groups(order: &PartialOrder) -> Vec<Vec<usize>> {
    order
        .groups()
        .iter()
        .map(|g| {
            let mut ids: Vec<usize> = g.iter().map(|q| q.as_str()[1..].parse().unwrap()).collect();
            ids.sort_unstable();
            ids
        })
        .collect()
}
