//! Personalized question sequencing.
//!
//! Ranks unseen questions by how difficult they are expected to be for a
//! target student. Two rankers are provided:
//!
//! * [`edurank`]: memory-based. Neighbors are chosen by AP rank correlation
//!   over shared questions, each neighbor votes on every candidate pair, and
//!   the similarity-weighted votes are aggregated with the Copeland rule.
//! * [`ncf`]: model-based. A neural collaborative filtering regressor
//!   (student and question embeddings, stacked dense layers, one sigmoid
//!   output) trained with Adadelta on squared error.
//!
//! [`metrics`] holds the rank comparison measures (AP correlation, NDPM,
//! Spearman's rho) and a paired t-test, and [`harness`] ties everything into
//! the held-out questionnaire evaluation protocol used by the `qseq` CLI.

pub mod difficulty;
pub mod edurank;
pub mod exec;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod ncf;

pub use exec::Parallelism;
pub use model::{
    AnswerAttempt, Comparison, DifficultyScore, ModelError, PartialOrder, QuestionId, StudentId,
};
