//! Model checkpoints as versioned JSON.
//!
//! Floats are written in shortest round-trip form and parsed with correct
//! rounding, so save → load reproduces every parameter bit for bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{build_index, Adadelta, NcfConfig, NcfError, NcfModel, Params};
use crate::model::{QuestionId, StudentId};

pub const CHECKPOINT_FORMAT: &str = "qseq-ncf";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    config: NcfConfig,
    optimizer: Adadelta,
    epochs_trained: u64,
    students: Vec<StudentId>,
    questions: Vec<QuestionId>,
    params: Params,
    grad_sq: Params,
    update_sq: Params,
}

fn shape_matches(p: &Params, config: &NcfConfig, students: usize, questions: usize) -> bool {
    let shapes = config.hidden_shapes();
    p.user_embeddings.len() == students * config.k
        && p.item_embeddings.len() == questions * config.k
        && p.hidden.len() == shapes.len()
        && p.hidden.iter().zip(&shapes).all(|(d, &(i, o))| {
            d.inputs == i && d.outputs == o && d.weights.len() == i * o && d.bias.len() == o
        })
        && p.output.inputs == config.output_inputs()
        && p.output.outputs == 1
        && p.output.weights.len() == p.output.inputs
        && p.output.bias.len() == 1
}

impl NcfModel {
    pub fn write_checkpoint<W: Write>(&self, writer: W) -> Result<(), NcfError> {
        let checkpoint = Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config: self.config,
            optimizer: self.optimizer,
            epochs_trained: self.epochs_trained,
            students: self.students.clone(),
            questions: self.questions.clone(),
            params: self.params.clone(),
            grad_sq: self.grad_sq.clone(),
            update_sq: self.update_sq.clone(),
        };
        serde_json::to_writer(writer, &checkpoint).map_err(|e| NcfError::Checkpoint(e.to_string()))
    }

    pub fn read_checkpoint<R: Read>(reader: R) -> Result<Self, NcfError> {
        let c: Checkpoint =
            serde_json::from_reader(reader).map_err(|e| NcfError::Checkpoint(e.to_string()))?;
        if c.format != CHECKPOINT_FORMAT {
            return Err(NcfError::Checkpoint(format!("unexpected format tag `{}`", c.format)));
        }
        if c.version != CHECKPOINT_VERSION {
            return Err(NcfError::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                c.version
            )));
        }
        c.config.validate()?;
        let (ns, nq) = (c.students.len(), c.questions.len());
        if ![&c.params, &c.grad_sq, &c.update_sq]
            .iter()
            .all(|p| shape_matches(p, &c.config, ns, nq))
        {
            return Err(NcfError::Checkpoint("tensor shapes do not match the configuration".into()));
        }
        let user_index = build_index(&c.students, NcfError::DuplicateStudent)?;
        let item_index = build_index(&c.questions, NcfError::DuplicateQuestion)?;
        let model = NcfModel {
            config: c.config,
            optimizer: c.optimizer,
            students: c.students,
            questions: c.questions,
            user_index,
            item_index,
            params: c.params,
            grad_sq: c.grad_sq,
            update_sq: c.update_sq,
            epochs_trained: c.epochs_trained,
        };
        if !model.is_healthy() {
            return Err(NcfError::Checkpoint("non-finite or negative values".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NcfError> {
        let mut writer = BufWriter::new(File::create(path)?);
        self.write_checkpoint(&mut writer)?;
        writer.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NcfError> {
        Self::read_checkpoint(BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Parallelism;
    use crate::model::DifficultyScore;
    use crate::ncf::TrainingRecord;
    use proptest::prelude::*;

    fn trained(seed: u64, layers: usize) -> NcfModel {
        let students: Vec<StudentId> = (0..3).map(|i| StudentId::new(format!("s{i}")).unwrap()).collect();
        let questions: Vec<QuestionId> = (0..4).map(|i| QuestionId::new(format!("q{i}")).unwrap()).collect();
        let data: Vec<TrainingRecord> = students
            .iter()
            .flat_map(|s| questions.iter().map(move |q| (s, q)))
            .enumerate()
            .map(|(n, (s, q))| TrainingRecord {
                student: s.clone(),
                question: q.clone(),
                target: DifficultyScore::new((n % 7) as f64 / 7.0).unwrap(),
            })
            .collect();
        let config = NcfConfig { k: 3, layers, epochs: 3, batch_size: 4, seed, ..NcfConfig::default() };
        let mut m = NcfModel::init(config, students, questions).unwrap();
        m.train(&data, Parallelism::Sequential).unwrap();
        m
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn round_trip_is_bit_exact(seed in any::<u64>(), layers in 0usize..3) {
            let m = trained(seed, layers);
            let mut buf = Vec::new();
            m.write_checkpoint(&mut buf).unwrap();
            let back = NcfModel::read_checkpoint(buf.as_slice()).unwrap();
            let bits = |v: Vec<f64>| v.into_iter().map(f64::to_bits).collect::<Vec<_>>();
            prop_assert_eq!(bits(back.parameters()), bits(m.parameters()));
            prop_assert!(back == m);
            for s in m.students() {
                for q in m.questions() {
                    prop_assert_eq!(
                        back.forward(s, q).unwrap().to_bits(),
                        m.forward(s, q).unwrap().to_bits()
                    );
                }
            }
        }
    }

    #[test]
    fn file_round_trip_and_continued_training() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let m = trained(5, 1);
        m.save(&path).unwrap();
        let back = NcfModel::load(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.epochs_trained(), 3);
    }

    #[test]
    fn rejects_foreign_or_corrupt_checkpoints() {
        let m = trained(1, 1);
        let mut buf = Vec::new();
        m.write_checkpoint(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();

        let wrong_version = text.replacen("\"version\":1", "\"version\":99", 1);
        assert!(matches!(
            NcfModel::read_checkpoint(wrong_version.as_bytes()),
            Err(NcfError::Checkpoint(_))
        ));
        let wrong_format = text.replacen(CHECKPOINT_FORMAT, "other", 1);
        assert!(NcfModel::read_checkpoint(wrong_format.as_bytes()).is_err());
        let wrong_k = text.replacen("\"k\":3", "\"k\":4", 1);
        assert!(NcfModel::read_checkpoint(wrong_k.as_bytes()).is_err());
        assert!(NcfModel::read_checkpoint("{".as_bytes()).is_err());
    }
}
