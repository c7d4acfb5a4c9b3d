//! The annotation model, its loss, optimizer, trainer and checkpoints.

mod adam;
pub mod autodiff;
mod checkpoint;
mod loss;
mod model;
mod train;

use std::path::PathBuf;

use thiserror::Error;

use crate::corpus::{LabelBundle, Task};
use crate::features::FeatureError;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use loss::{multitask_loss, task_targets, LossValue};
pub use model::{
    Activation, AnnotatorModel, InputSpec, ModelConfig, PreparedInput, StreamNorm, FUSION_ACOUSTIC,
    FUSION_LINGUISTIC,
};
pub use train::{evaluate, load_samples, loss_and_gradients, train, EvalRow, LossRow, Sample, TrainConfig, TrainOutcome};

#[derive(Debug, Error)]
pub enum NetError {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("no mora-core positions to compute the loss over")]
    EmptyMask,
    #[error("position {position} has no {task} label")]
    MissingLabel { position: usize, task: Task },
    #[error("non-finite gradient for {param} at step {step} (utterances {utterances:?})")]
    NonFiniteGradient {
        step: u64,
        param: String,
        utterances: Vec<String>,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("utterance {0:?} has no labels")]
    Unlabeled(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid checkpoint: {0}")]
    BadCheckpoint(String),
}

/// Argmax labels at mora-core positions; all other positions stay absent.
pub fn annotate(model: &AnnotatorModel, input: &PreparedInput, mask: &[bool]) -> Result<Vec<LabelBundle>, NetError> {
    if mask.len() != input.rows {
        return Err(NetError::DimMismatch(format!(
            "mask has {} entries for {} phonemes",
            mask.len(),
            input.rows
        )));
    }
    if !mask.iter().any(|&m| m) {
        return Ok(vec![LabelBundle::ABSENT; mask.len()]);
    }
    let logits = model.forward_prepared(input);
    Ok(decode(&logits, mask))
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn decode(logits: &[crate::tensor::Matrix; 4], mask: &[bool]) -> Vec<LabelBundle> {
    mask.iter()
        .enumerate()
        .map(|(p, &m)| {
            if !m {
                return LabelBundle::ABSENT;
            }
            let idx = Task::ALL.map(|t| argmax(logits[t.index()].row(p)));
            LabelBundle::from_indices(idx).expect("head widths match label sets")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Matrix;

    #[test]
    fn decode_respects_mask() {
        let mut logits = Task::ALL.map(|t| Matrix::zeros(3, t.num_classes()));
        logits[0].set(0, 4, 1.0);
        logits[2].set(2, 5, 3.0);
        logits[3].set(2, 1, 0.5);
        let out = decode(&logits, &[true, false, true]);
        assert_eq!(out[0].class_index(Task::Acc), Some(4));
        assert!(out[1].is_absent());
        assert_eq!(out[2].class_index(Task::Bi), Some(5));
        assert_eq!(out[2].class_index(Task::Pau), Some(1));
        assert_eq!(out[2].class_index(Task::Hl), Some(0));
    }
}
