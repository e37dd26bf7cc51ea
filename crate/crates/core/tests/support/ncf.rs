use std::collections::BTreeSet;

use qseq_core::model::{DifficultyScore, QuestionId, StudentId};
use qseq_core::ncf::{sigmoid, Activation, NcfConfig, NcfModel, TrainingRecord};
use qseq_core::Parallelism;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const FD_STEP: f64 = 1e-4;
/// Gradients smaller than this are compared absolutely: below it central
/// differences are dominated by rounding in the loss, not by the gradient.
pub const FD_FLOOR: f64 = 1e-6;
/// ReLU is not differentiable at 0; instances with a pre-activation this
/// close to the kink are redrawn.
const KINK_MARGIN: f64 = 1e-2;

pub fn student(i: usize) -> StudentId {
    StudentId::new(format!("s{i:02}")).unwrap()
}

pub fn question(i: usize) -> QuestionId {
    QuestionId::new(format!("q{i:02}")).unwrap()
}

pub fn record(s: usize, q: usize, target: f64) -> TrainingRecord {
    TrainingRecord {
        student: student(s),
        question: question(q),
        target: DifficultyScore::new(target).unwrap(),
    }
}

/// Smallest |pre-activation| over all hidden units for the given examples,
/// recomputed from the public parameters.
fn min_abs_preactivation(model: &NcfModel, data: &[TrainingRecord]) -> f64 {
    let mut smallest = f64::INFINITY;
    for r in data {
        let mut x: Vec<f64> = model.user_embedding(&r.student).unwrap().to_vec();
        x.extend_from_slice(model.item_embedding(&r.question).unwrap());
        for layer in model.hidden_layers() {
            let z: Vec<f64> = (0..layer.outputs)
                .map(|o| {
                    layer.weights[o * layer.inputs..(o + 1) * layer.inputs]
                        .iter()
                        .zip(&x)
                        .map(|(w, v)| w * v)
                        .sum::<f64>()
                        + layer.bias[o]
                })
                .collect();
            smallest = z.iter().fold(smallest, |m, v| m.min(v.abs()));
            x = z.iter().map(|&v| model.config().activation.apply(v)).collect();
        }
    }
    smallest
}

/// A small model (k ≤ 4, l ≤ 2) with every parameter redrawn uniformly in
/// ±1 and three training records with random targets.
pub fn random_gradient_model(activation: Activation, seed: u64) -> (NcfModel, Vec<TrainingRecord>) {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE ^ seed);
    loop {
        let k = rng.random_range(1..=4);
        let layers = rng.random_range(0..=2);
        let config = NcfConfig {
            k,
            layers,
            activation,
            dropout_rate: 0.0,
            seed: rng.random(),
            ..NcfConfig::default()
        };
        let mut model = NcfModel::init(config, (0..3).map(student).collect(), (0..3).map(question).collect()).unwrap();
        for i in 0..model.parameter_count() {
            model.set_parameter(i, rng.random_range(-1.0..1.0));
        }
        let data: Vec<TrainingRecord> = (0..3)
            .map(|_| record(rng.random_range(0..3), rng.random_range(0..3), rng.random_range(0.0..1.0)))
            .collect();
        if activation != Activation::Relu || min_abs_preactivation(&model, &data) > KINK_MARGIN {
            return (model, data);
        }
    }
}

/// Largest relative error between the analytic gradient and central finite
/// differences over every parameter.
pub fn gradient_check(model: &NcfModel, data: &[TrainingRecord]) -> f64 {
    let (_, grads) = model.loss_and_gradients(data).unwrap();
    let analytic = grads.flatten(model);
    let params = model.parameters();
    assert_eq!(analytic.len(), params.len());
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for (i, (&p, &a)) in params.iter().zip(&analytic).enumerate() {
        probe.set_parameter(i, p + FD_STEP);
        let plus = probe.mse(data).unwrap();
        probe.set_parameter(i, p - FD_STEP);
        let minus = probe.mse(data).unwrap();
        probe.set_parameter(i, p);
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let scale = a.abs().max(numeric.abs()).max(FD_FLOOR);
        worst = worst.max((a - numeric).abs() / scale);
    }
    worst
}

pub struct MemorizationRun {
    pub final_mse: f64,
    pub epochs_used: usize,
    pub order_matches: bool,
}

/// Ten records (2 students × 5 questions) with distinct targets, fit with
/// k = 8, l = 1 and no dropout for at most 500 epochs.
pub fn memorization_run(seed: u64) -> MemorizationRun {
    let targets = [
        [0.90, 0.10, 0.70, 0.30, 0.50],
        [0.20, 0.80, 0.40, 0.95, 0.05],
    ];
    let data: Vec<TrainingRecord> = targets
        .iter()
        .enumerate()
        .flat_map(|(s, row)| row.iter().enumerate().map(move |(q, &t)| record(s, q, t)))
        .collect();
    let config = NcfConfig {
        k: 8,
        layers: 1,
        dropout_rate: 0.0,
        batch_size: 1,
        epochs: 500,
        seed,
        ..NcfConfig::default()
    };
    let mut model = NcfModel::init(config, (0..2).map(student).collect(), (0..5).map(question).collect()).unwrap();
    let log = model.train(&data, Parallelism::Sequential).unwrap();
    let final_mse = model.mse(&data).unwrap();

    let candidates: BTreeSet<QuestionId> = (0..5).map(question).collect();
    let order_matches = targets.iter().enumerate().all(|(s, row)| {
        let mut expected: Vec<usize> = (0..5).collect();
        expected.sort_by(|&a, &b| row[b].total_cmp(&row[a]));
        let ranked = model.rank(&student(s), &candidates, Parallelism::Sequential).unwrap();
        ranked.is_total() && ranked.linearize() == expected.into_iter().map(question).collect::<Vec<_>>()
    });
    MemorizationRun {
        final_mse,
        epochs_used: log.epochs.len(),
        order_matches,
    }
}

/// Students and questions each split in two halves; the target is high when
/// the halves differ. No additive (wide) model can express this.
pub fn xor_data() -> Vec<TrainingRecord> {
    let mut data = Vec::new();
    for s in 0..8 {
        for q in 0..8 {
            let target = if (s % 2) != (q % 2) { 0.9 } else { 0.1 };
            data.push(record(s, q, target));
        }
    }
    data
}

/// Full-batch epochs for the XOR fit. Mini-batch noise keeps Adadelta at
/// the symmetric saddle (MSE 0.16) far longer.
pub const XOR_EPOCHS: usize = 10_000;

pub fn xor_converged_mse(layers: usize, seed: u64) -> f64 {
    let data = xor_data();
    let config = NcfConfig {
        k: 8,
        layers,
        dropout_rate: 0.0,
        batch_size: 64,
        epochs: XOR_EPOCHS,
        seed,
        ..NcfConfig::default()
    };
    let mut model = NcfModel::init(config, (0..8).map(student).collect(), (0..8).map(question).collect()).unwrap();
    model.train(&data, Parallelism::Sequential).unwrap();
    model.mse(&data).unwrap()
}

/// Targets `σ(u·v)` for random latent vectors of the given dimension.
pub fn low_rank_data(dim: usize, n: usize, seed: u64) -> (Vec<StudentId>, Vec<QuestionId>, Vec<TrainingRecord>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut latent = |count: usize| -> Vec<Vec<f64>> {
        (0..count)
            .map(|_| (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect()
    };
    let users = latent(n);
    let items = latent(n);
    let mut data = Vec::new();
    for (s, u) in users.iter().enumerate() {
        for (q, v) in items.iter().enumerate() {
            let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
            data.push(record(s, q, sigmoid(dot)));
        }
    }
    ((0..n).map(student).collect(), (0..n).map(question).collect(), data)
}

pub fn loss_descends(seed: u64) -> bool {
    let (students, questions, data) = low_rank_data(3, 20, seed);
    let config = NcfConfig {
        k: 8,
        layers: 1,
        batch_size: 32,
        epochs: 50,
        seed,
        ..NcfConfig::default()
    };
    let mut model = NcfModel::init(config, students, questions).unwrap();
    let log = model.train(&data, Parallelism::Sequential).unwrap();
    log.epochs[49].mse < log.epochs[0].mse
}
