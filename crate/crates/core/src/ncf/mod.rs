//! Neural collaborative filtering regressor for personalized difficulty.
//!
//! A student embedding and a question embedding (`k` values each) are
//! concatenated and fed through `l` dense layers, then one sigmoid output
//! unit predicts the difficulty score. Forward and backward passes are
//! written out by hand; training minimizes mean squared error with
//! Adadelta.
//!
//! Hidden widths follow a tower: `2k → k`, then halving per layer but never
//! below `min(8, k)`. With `l = 0` the embeddings feed the output unit
//! directly.

mod adadelta;
mod checkpoint;
mod layers;
mod train;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{self, Parallelism};
use crate::model::{order_from_scores, DifficultyScore, ModelError, PartialOrder, QuestionId, StudentId};

pub use adadelta::Adadelta;
pub use checkpoint::{CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use layers::{sigmoid, Activation, Dense};
pub use train::{EpochStats, GradientNorms, TrainingLog};
pub(crate) use train::derive_seed;

const EMBEDDING_INIT: f64 = 0.05;
const TOWER_FLOOR: usize = 8;

#[derive(Debug, Error)]
pub enum NcfError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("model needs at least one student and one question")]
    NoEntities,
    #[error("duplicate student id {0}")]
    DuplicateStudent(StudentId),
    #[error("duplicate question id {0}")]
    DuplicateQuestion(QuestionId),
    #[error("unknown student {0}")]
    UnknownStudent(StudentId),
    #[error("unknown question {0}")]
    UnknownQuestion(QuestionId),
    #[error("training data is empty")]
    EmptyData,
    #[error("loss became non-finite at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error(transparent)]
    Order(#[from] ModelError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NcfConfig {
    /// Embedding size.
    pub k: usize,
    /// Number of hidden layers; 0 gives the wide (factorized) model.
    pub layers: usize,
    pub activation: Activation,
    pub dropout_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for NcfConfig {
    fn default() -> Self {
        NcfConfig {
            k: 40,
            layers: 1,
            activation: Activation::Tanh,
            dropout_rate: 0.25,
            batch_size: 1024,
            epochs: 20,
            seed: 0,
        }
    }
}

impl NcfConfig {
    pub fn validate(&self) -> Result<(), NcfError> {
        let problem = if self.k == 0 {
            "embedding size k must be at least 1"
        } else if !(0.0..1.0).contains(&self.dropout_rate) {
            "dropout rate must lie in [0, 1)"
        } else if self.batch_size == 0 {
            "batch size must be at least 1"
        } else if self.epochs == 0 {
            "epochs must be at least 1"
        } else {
            return Ok(());
        };
        Err(NcfError::InvalidConfig(problem.into()))
    }

    /// `(inputs, outputs)` of every hidden layer.
    pub fn hidden_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.layers);
        let mut width = 2 * self.k;
        for t in 0..self.layers {
            let next = if t == 0 {
                self.k
            } else {
                (width / 2).max(TOWER_FLOOR.min(width))
            };
            shapes.push((width, next));
            width = next;
        }
        shapes
    }

    pub fn output_inputs(&self) -> usize {
        self.hidden_shapes().last().map_or(2 * self.k, |&(_, out)| out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRecord {
    pub student: StudentId,
    pub question: QuestionId,
    pub target: DifficultyScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct Params {
    pub(crate) user_embeddings: Vec<f64>,
    pub(crate) item_embeddings: Vec<f64>,
    pub(crate) hidden: Vec<Dense>,
    pub(crate) output: Dense,
}

impl Params {
    fn zeros_like(other: &Params) -> Params {
        Params {
            user_embeddings: vec![0.0; other.user_embeddings.len()],
            item_embeddings: vec![0.0; other.item_embeddings.len()],
            hidden: other.hidden.iter().map(|d| Dense::zeros(d.inputs, d.outputs)).collect(),
            output: Dense::zeros(other.output.inputs, other.output.outputs),
        }
    }

    fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![&self.user_embeddings, &self.item_embeddings];
        for d in self.hidden.iter().chain(std::iter::once(&self.output)) {
            out.push(&d.weights);
            out.push(&d.bias);
        }
        out
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![&mut self.user_embeddings, &mut self.item_embeddings];
        for d in self.hidden.iter_mut().chain(std::iter::once(&mut self.output)) {
            out.push(&mut d.weights);
            out.push(&mut d.bias);
        }
        out
    }
}

/// Gradient of a loss with respect to every parameter. Embedding gradients
/// are kept sparse, keyed by row.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub users: BTreeMap<usize, Vec<f64>>,
    pub items: BTreeMap<usize, Vec<f64>>,
    pub hidden: Vec<Dense>,
    pub output: Dense,
}

impl Gradients {
    fn zeros(params: &Params) -> Self {
        Gradients {
            users: BTreeMap::new(),
            items: BTreeMap::new(),
            hidden: params.hidden.iter().map(|d| Dense::zeros(d.inputs, d.outputs)).collect(),
            output: Dense::zeros(params.output.inputs, params.output.outputs),
        }
    }

    fn add_row(rows: &mut BTreeMap<usize, Vec<f64>>, row: usize, values: &[f64]) {
        let entry = rows.entry(row).or_insert_with(|| vec![0.0; values.len()]);
        for (a, b) in entry.iter_mut().zip(values) {
            *a += b;
        }
    }

    fn add_assign(&mut self, other: &Gradients) {
        for (row, values) in &other.users {
            Self::add_row(&mut self.users, *row, values);
        }
        for (row, values) in &other.items {
            Self::add_row(&mut self.items, *row, values);
        }
        for (a, b) in self.hidden.iter_mut().zip(&other.hidden) {
            a.add_assign(b);
        }
        self.output.add_assign(&other.output);
    }

    fn embedding_norm(&self) -> f64 {
        self.users
            .values()
            .chain(self.items.values())
            .flatten()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Dense gradient in the flat parameter order of [`NcfModel::parameters`].
    pub fn flatten(&self, model: &NcfModel) -> Vec<f64> {
        let k = model.config.k;
        let mut users = vec![0.0; model.params.user_embeddings.len()];
        for (row, values) in &self.users {
            users[row * k..(row + 1) * k].copy_from_slice(values);
        }
        let mut items = vec![0.0; model.params.item_embeddings.len()];
        for (row, values) in &self.items {
            items[row * k..(row + 1) * k].copy_from_slice(values);
        }
        let mut out = users;
        out.extend(items);
        for d in self.hidden.iter().chain(std::iter::once(&self.output)) {
            out.extend(&d.weights);
            out.extend(&d.bias);
        }
        out
    }
}

/// Intermediate values of one forward pass, kept for backpropagation.
struct Trace {
    /// Input to each hidden layer, then the input to the output unit.
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    activated: Vec<Vec<f64>>,
    masks: Vec<Option<Vec<f64>>>,
    prediction: f64,
}

#[derive(Debug, Clone)]
pub struct NcfModel {
    config: NcfConfig,
    optimizer: Adadelta,
    students: Vec<StudentId>,
    questions: Vec<QuestionId>,
    user_index: HashMap<StudentId, usize>,
    item_index: HashMap<QuestionId, usize>,
    params: Params,
    grad_sq: Params,
    update_sq: Params,
    epochs_trained: u64,
}

impl PartialEq for NcfModel {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.optimizer == other.optimizer
            && self.students == other.students
            && self.questions == other.questions
            && self.params == other.params
            && self.grad_sq == other.grad_sq
            && self.update_sq == other.update_sq
            && self.epochs_trained == other.epochs_trained
    }
}

fn build_index<T: Clone + Eq + std::hash::Hash>(
    ids: &[T],
    duplicate: impl Fn(T) -> NcfError,
) -> Result<HashMap<T, usize>, NcfError> {
    let mut index = HashMap::with_capacity(ids.len());
    for (row, id) in ids.iter().enumerate() {
        if index.insert(id.clone(), row).is_some() {
            return Err(duplicate(id.clone()));
        }
    }
    Ok(index)
}

impl NcfModel {
    /// Creates a model with seeded random parameters: embeddings uniform in
    /// ±0.05, dense weights Glorot-uniform, biases zero.
    pub fn init(
        config: NcfConfig,
        students: Vec<StudentId>,
        questions: Vec<QuestionId>,
    ) -> Result<Self, NcfError> {
        config.validate()?;
        if students.is_empty() || questions.is_empty() {
            return Err(NcfError::NoEntities);
        }
        let user_index = build_index(&students, NcfError::DuplicateStudent)?;
        let item_index = build_index(&questions, NcfError::DuplicateQuestion)?;

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let k = config.k;
        let mut embedding = |rows: usize| -> Vec<f64> {
            (0..rows * k)
                .map(|_| rng.random_range(-EMBEDDING_INIT..EMBEDDING_INIT))
                .collect()
        };
        let user_embeddings = embedding(students.len());
        let item_embeddings = embedding(questions.len());
        let hidden = config
            .hidden_shapes()
            .into_iter()
            .map(|(i, o)| Dense::glorot(i, o, &mut rng))
            .collect();
        let output = Dense::glorot(config.output_inputs(), 1, &mut rng);
        let params = Params {
            user_embeddings,
            item_embeddings,
            hidden,
            output,
        };
        Ok(NcfModel {
            config,
            optimizer: Adadelta::default(),
            students,
            questions,
            user_index,
            item_index,
            grad_sq: Params::zeros_like(&params),
            update_sq: Params::zeros_like(&params),
            params,
            epochs_trained: 0,
        })
    }

    pub fn config(&self) -> &NcfConfig {
        &self.config
    }

    pub fn optimizer(&self) -> &Adadelta {
        &self.optimizer
    }

    pub fn students(&self) -> &[StudentId] {
        &self.students
    }

    pub fn questions(&self) -> &[QuestionId] {
        &self.questions
    }

    pub fn epochs_trained(&self) -> u64 {
        self.epochs_trained
    }

    pub fn hidden_layers(&self) -> &[Dense] {
        &self.params.hidden
    }

    pub fn output_layer(&self) -> &Dense {
        &self.params.output
    }

    pub fn hidden_layers_mut(&mut self) -> &mut [Dense] {
        &mut self.params.hidden
    }

    pub fn output_layer_mut(&mut self) -> &mut Dense {
        &mut self.params.output
    }

    pub fn user_embedding(&self, student: &StudentId) -> Result<&[f64], NcfError> {
        let row = self.student_row(student)?;
        let k = self.config.k;
        Ok(&self.params.user_embeddings[row * k..(row + 1) * k])
    }

    pub fn item_embedding(&self, question: &QuestionId) -> Result<&[f64], NcfError> {
        let row = self.question_row(question)?;
        let k = self.config.k;
        Ok(&self.params.item_embeddings[row * k..(row + 1) * k])
    }

    pub fn user_embedding_mut(&mut self, student: &StudentId) -> Result<&mut [f64], NcfError> {
        let row = self.student_row(student)?;
        let k = self.config.k;
        Ok(&mut self.params.user_embeddings[row * k..(row + 1) * k])
    }

    pub fn item_embedding_mut(&mut self, question: &QuestionId) -> Result<&mut [f64], NcfError> {
        let row = self.question_row(question)?;
        let k = self.config.k;
        Ok(&mut self.params.item_embeddings[row * k..(row + 1) * k])
    }

    fn student_row(&self, student: &StudentId) -> Result<usize, NcfError> {
        self.user_index
            .get(student)
            .copied()
            .ok_or_else(|| NcfError::UnknownStudent(student.clone()))
    }

    fn question_row(&self, question: &QuestionId) -> Result<usize, NcfError> {
        self.item_index
            .get(question)
            .copied()
            .ok_or_else(|| NcfError::UnknownQuestion(question.clone()))
    }

    pub fn parameter_count(&self) -> usize {
        self.params.slices().iter().map(|s| s.len()).sum()
    }

    /// Every parameter in a fixed flat order: student embeddings, question
    /// embeddings, then each hidden layer and the output layer as weights
    /// followed by biases.
    pub fn parameters(&self) -> Vec<f64> {
        self.params.slices().concat()
    }

    pub fn set_parameter(&mut self, index: usize, value: f64) {
        let mut offset = index;
        for slice in self.params.slices_mut() {
            if offset < slice.len() {
                slice[offset] = value;
                return;
            }
            offset -= slice.len();
        }
        panic!("parameter index {index} out of range");
    }

    /// True when every parameter and optimizer accumulator is finite and the
    /// accumulators are non-negative.
    pub fn is_healthy(&self) -> bool {
        self.params.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
            && [&self.grad_sq, &self.update_sq]
                .iter()
                .all(|p| p.slices().iter().all(|s| s.iter().all(|v| v.is_finite() && *v >= 0.0)))
    }

    fn forward_rows<R: Rng>(&self, user: usize, item: usize, mut dropout: Option<&mut R>) -> Trace {
        let k = self.config.k;
        let mut x = Vec::with_capacity(2 * k);
        x.extend_from_slice(&self.params.user_embeddings[user * k..(user + 1) * k]);
        x.extend_from_slice(&self.params.item_embeddings[item * k..(item + 1) * k]);

        let layers = self.params.hidden.len();
        let mut trace = Trace {
            inputs: Vec::with_capacity(layers + 1),
            pre: Vec::with_capacity(layers),
            activated: Vec::with_capacity(layers),
            masks: Vec::with_capacity(layers),
            prediction: 0.0,
        };
        let rate = self.config.dropout_rate;
        for layer in &self.params.hidden {
            let mut z = Vec::new();
            layer.forward(&x, &mut z);
            let a: Vec<f64> = z.iter().map(|&v| self.config.activation.apply(v)).collect();
            let mask = match dropout.as_deref_mut() {
                Some(rng) if rate > 0.0 => {
                    let keep = 1.0 / (1.0 - rate);
                    Some(
                        (0..a.len())
                            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
                            .collect::<Vec<f64>>(),
                    )
                }
                _ => None,
            };
            let h = match &mask {
                Some(m) => a.iter().zip(m).map(|(v, m)| v * m).collect(),
                None => a.clone(),
            };
            trace.inputs.push(std::mem::replace(&mut x, h));
            trace.pre.push(z);
            trace.activated.push(a);
            trace.masks.push(mask);
        }
        let mut z = Vec::with_capacity(1);
        self.params.output.forward(&x, &mut z);
        trace.prediction = sigmoid(z[0]);
        trace.inputs.push(x);
        trace
    }

    /// Backpropagates `d_prediction` (dLoss/dŷ) through one traced example.
    fn backward_rows(&self, user: usize, item: usize, trace: &Trace, d_prediction: f64, grads: &mut Gradients) {
        let y = trace.prediction;
        let delta = [d_prediction * y * (1.0 - y)];
        let mut dx = Vec::new();
        let last = trace.inputs.last().expect("output input");
        self.params.output.backward(last, &delta, &mut grads.output, &mut dx);

        for t in (0..self.params.hidden.len()).rev() {
            let mut d_pre = dx.clone();
            if let Some(mask) = &trace.masks[t] {
                for (d, m) in d_pre.iter_mut().zip(mask) {
                    *d *= m;
                }
            }
            for ((d, z), a) in d_pre.iter_mut().zip(&trace.pre[t]).zip(&trace.activated[t]) {
                *d *= self.config.activation.derivative(*z, *a);
            }
            self.params.hidden[t].backward(&trace.inputs[t], &d_pre, &mut grads.hidden[t], &mut dx);
        }
        let k = self.config.k;
        Gradients::add_row(&mut grads.users, user, &dx[..k]);
        Gradients::add_row(&mut grads.items, item, &dx[k..]);
    }

    /// Predicted difficulty. Dropout only runs in training mode, drawing its
    /// masks from `rng`; inference never touches a random stream.
    pub fn forward(&self, student: &StudentId, question: &QuestionId) -> Result<f64, NcfError> {
        let (u, i) = (self.student_row(student)?, self.question_row(question)?);
        Ok(self.forward_rows::<ChaCha8Rng>(u, i, None).prediction)
    }

    pub fn forward_training<R: Rng>(
        &self,
        student: &StudentId,
        question: &QuestionId,
        rng: &mut R,
    ) -> Result<f64, NcfError> {
        let (u, i) = (self.student_row(student)?, self.question_row(question)?);
        Ok(self.forward_rows(u, i, Some(rng)).prediction)
    }

    fn resolve(&self, data: &[TrainingRecord]) -> Result<Vec<(usize, usize, f64)>, NcfError> {
        data.iter()
            .map(|r| {
                Ok((
                    self.student_row(&r.student)?,
                    self.question_row(&r.question)?,
                    r.target.value(),
                ))
            })
            .collect()
    }

    /// Mean squared error over `data` with dropout disabled.
    pub fn mse(&self, data: &[TrainingRecord]) -> Result<f64, NcfError> {
        if data.is_empty() {
            return Err(NcfError::EmptyData);
        }
        let rows = self.resolve(data)?;
        let sum: f64 = rows
            .iter()
            .map(|&(u, i, t)| {
                let e = self.forward_rows::<ChaCha8Rng>(u, i, None).prediction - t;
                e * e
            })
            .sum();
        Ok(sum / rows.len() as f64)
    }

    /// Mean squared error over `data` and its exact gradient, dropout
    /// disabled.
    pub fn loss_and_gradients(&self, data: &[TrainingRecord]) -> Result<(f64, Gradients), NcfError> {
        if data.is_empty() {
            return Err(NcfError::EmptyData);
        }
        let rows = self.resolve(data)?;
        let n = rows.len() as f64;
        let mut grads = Gradients::zeros(&self.params);
        let mut sum = 0.0;
        for &(u, i, t) in &rows {
            let trace = self.forward_rows::<ChaCha8Rng>(u, i, None);
            let e = trace.prediction - t;
            sum += e * e;
            self.backward_rows(u, i, &trace, 2.0 * e / n, &mut grads);
        }
        Ok((sum / n, grads))
    }

    pub fn predict_many(
        &self,
        student: &StudentId,
        questions: &[QuestionId],
        mode: Parallelism,
    ) -> Result<Vec<f64>, NcfError> {
        exec::map_slice(mode, questions, |q| self.forward(student, q))
            .into_iter()
            .collect()
    }

    /// Orders `candidates` by predicted difficulty, equal predictions tied.
    pub fn rank(
        &self,
        target: &StudentId,
        candidates: &BTreeSet<QuestionId>,
        mode: Parallelism,
    ) -> Result<PartialOrder, NcfError> {
        let questions: Vec<QuestionId> = candidates.iter().cloned().collect();
        let scores = self.predict_many(target, &questions, mode)?;
        Ok(order_from_scores(target.clone(), questions.into_iter().zip(scores), 0.0)?)
    }
}
