use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Gradients, NcfError, NcfModel, TrainingRecord};
use crate::exec::{self, Parallelism};

/// Examples per work unit inside a mini-batch. Fixed so the gradient
/// reduction order, and therefore every bit of the result, does not depend
/// on the thread count.
const CHUNK: usize = 32;
const TRAIN_STREAM: u64 = 0x5EED_7EA1_0000_0001;

/// Mean L2 norm of the per-batch gradient, by parameter group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientNorms {
    pub embeddings: f64,
    pub hidden: Vec<f64>,
    pub output: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean squared error over the epoch's examples, measured in training
    /// mode before each batch's update.
    pub mse: f64,
    pub gradient_norms: GradientNorms,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochStats>,
}

impl TrainingLog {
    pub fn final_mse(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.mse)
    }
}

struct ChunkResult {
    squared_error: f64,
    grads: Gradients,
}

impl NcfModel {
    /// Trains for `config.epochs` epochs of shuffled mini-batches.
    ///
    /// Only the embedding rows touched by a batch are updated. Shuffling and
    /// dropout are driven by a stream derived from the seed and the number
    /// of epochs already trained, so a fixed seed reproduces the run.
    pub fn train(&mut self, data: &[TrainingRecord], mode: Parallelism) -> Result<TrainingLog, NcfError> {
        if data.is_empty() {
            return Err(NcfError::EmptyData);
        }
        let rows = self.resolve(data)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ TRAIN_STREAM ^ self.epochs_trained);
        let mut order: Vec<usize> = (0..rows.len()).collect();
        let batch_size = self.config.batch_size;
        let use_dropout = self.config.dropout_rate > 0.0 && !self.params.hidden.is_empty();
        let mut log = TrainingLog::default();

        for epoch in 0..self.config.epochs {
            order.shuffle(&mut rng);
            let mut sum_sq = 0.0;
            let mut norms = GradientNorms {
                embeddings: 0.0,
                hidden: vec![0.0; self.params.hidden.len()],
                output: 0.0,
            };
            let batches = order.len().div_ceil(batch_size);
            for (batch_no, batch) in order.chunks(batch_size).enumerate() {
                let seeds: Vec<u64> = if use_dropout {
                    batch.iter().map(|_| rng.next_u64()).collect()
                } else {
                    Vec::new()
                };
                let scale = 2.0 / batch.len() as f64;
                let chunk_count = batch.len().div_ceil(CHUNK);
                let model = &*self;
                let partials = exec::map_range(mode, chunk_count, |c| {
                    let lo = c * CHUNK;
                    let hi = (lo + CHUNK).min(batch.len());
                    let mut result = ChunkResult {
                        squared_error: 0.0,
                        grads: Gradients::zeros(&model.params),
                    };
                    for pos in lo..hi {
                        let (u, i, t) = rows[batch[pos]];
                        let trace = if use_dropout {
                            let mut example_rng = ChaCha8Rng::seed_from_u64(seeds[pos]);
                            model.forward_rows(u, i, Some(&mut example_rng))
                        } else {
                            model.forward_rows::<ChaCha8Rng>(u, i, None)
                        };
                        let e = trace.prediction - t;
                        result.squared_error += e * e;
                        model.backward_rows(u, i, &trace, scale * e, &mut result.grads);
                    }
                    result
                });

                let mut partials = partials.into_iter();
                let first = partials.next().expect("non-empty batch");
                let mut batch_sq = first.squared_error;
                let mut grads = first.grads;
                for p in partials {
                    batch_sq += p.squared_error;
                    grads.add_assign(&p.grads);
                }
                if !batch_sq.is_finite() {
                    return Err(NcfError::NonFiniteLoss {
                        epoch: epoch + 1,
                        batch: batch_no + 1,
                    });
                }
                sum_sq += batch_sq;
                norms.embeddings += grads.embedding_norm() / batches as f64;
                for (n, g) in norms.hidden.iter_mut().zip(&grads.hidden) {
                    *n += g.norm() / batches as f64;
                }
                norms.output += grads.output.norm() / batches as f64;
                self.apply(&grads);
            }
            self.epochs_trained += 1;
            log.epochs.push(EpochStats {
                epoch: epoch + 1,
                mse: sum_sq / rows.len() as f64,
                gradient_norms: norms,
            });
        }
        Ok(log)
    }

    fn apply(&mut self, grads: &Gradients) {
        let opt = self.optimizer;
        let k = self.config.k;
        for (row, g) in &grads.users {
            let span = row * k..(row + 1) * k;
            opt.step(
                &mut self.params.user_embeddings[span.clone()],
                g,
                &mut self.grad_sq.user_embeddings[span.clone()],
                &mut self.update_sq.user_embeddings[span],
            );
        }
        for (row, g) in &grads.items {
            let span = row * k..(row + 1) * k;
            opt.step(
                &mut self.params.item_embeddings[span.clone()],
                g,
                &mut self.grad_sq.item_embeddings[span.clone()],
                &mut self.update_sq.item_embeddings[span],
            );
        }
        let dense = self
            .params
            .hidden
            .iter_mut()
            .chain(std::iter::once(&mut self.params.output))
            .zip(self.grad_sq.hidden.iter_mut().chain(std::iter::once(&mut self.grad_sq.output)))
            .zip(self.update_sq.hidden.iter_mut().chain(std::iter::once(&mut self.update_sq.output)))
            .zip(grads.hidden.iter().chain(std::iter::once(&grads.output)));
        for (((p, eg), edx), g) in dense {
            opt.step(&mut p.weights, &g.weights, &mut eg.weights, &mut edx.weights);
            opt.step(&mut p.bias, &g.bias, &mut eg.bias, &mut edx.bias);
        }
    }
}

/// Seeds derived for independent sub-runs (sweeps, folds).
pub(crate) fn derive_seed(base: u64, salt: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base ^ salt.rotate_left(17));
    rng.random()
}
