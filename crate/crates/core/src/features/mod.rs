//! Feature tensors, the `PFE1` interchange format, layer fusion, pooling and
//! input assembly.

mod fusion;
mod pooling;
mod streams;
pub mod synth;
mod tensor_file;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Matrix;

pub use fusion::{fuse_layers, fuse_layers_logit_grad, mix_layers, softmax, softmax_backward, FusionWeights};
pub use pooling::{phoneme_spans, pool_to_phonemes, RECONCILE_FRAMES};
pub use streams::{
    assemble_input, load_streams, one_hot_stream, resolve_path, AcousticStream, LinguisticStream,
    LoadedStreams, PhonemeLayers, StreamConfig, StreamWeights,
};
pub use tensor_file::{decode_features, encode_features, read_features, write_features, MAGIC, VERSION};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic: not a PFE1 feature file")]
    BadMagic,
    #[error("unsupported feature file version {0}")]
    UnsupportedVersion(u32),
    #[error("payload size mismatch: header implies {expected} bytes, found {found}")]
    HeaderShapeMismatch { expected: usize, found: usize },
    #[error("non-finite value at flat index {index}")]
    NonFiniteValue { index: usize },
    #[error("invalid tensor shape: {0}")]
    InvalidShape(String),
    #[error("expected a {expected:?}-axis tensor, found {found:?}")]
    AxisMismatch { expected: AxisKind, found: AxisKind },
    #[error("fusion weights cover {found} layers but the tensor has {expected}")]
    LayerCountMismatch { expected: usize, found: usize },
    #[error("durations sum to {durations} frames but the tensor has {frames}")]
    DurationSumMismatch { durations: u64, frames: usize },
    #[error("unknown phoneme symbol {0:?}")]
    UnknownSymbol(String),
    #[error("utterance {utterance:?} has no {stream:?} feature file")]
    MissingStream { utterance: String, stream: String },
    #[error("utterance {utterance:?}: linguistic tensor has {found} rows for {expected} phonemes")]
    PhonemeCountMismatch {
        utterance: String,
        expected: usize,
        found: usize,
    },
    #[error("invalid stream configuration: {0}")]
    InvalidStreamConfig(String),
    #[error("utterance {utterance:?}: {source}")]
    InUtterance {
        utterance: String,
        #[source]
        source: Box<FeatureError>,
    },
}

/// What the second tensor axis indexes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[repr(u32)]
pub enum AxisKind {
    Frame = 0,
    Phoneme = 1,
}

/// `L x T x D` hidden states, stored layer-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTensor {
    layers: usize,
    steps: usize,
    dim: usize,
    axis: AxisKind,
    data: Vec<f64>,
}

impl FeatureTensor {
    pub fn new(
        layers: usize,
        steps: usize,
        dim: usize,
        axis: AxisKind,
        data: Vec<f64>,
    ) -> Result<Self, FeatureError> {
        if layers == 0 || steps == 0 || dim == 0 {
            return Err(FeatureError::InvalidShape(format!(
                "L={layers}, T={steps}, D={dim}: every extent must be at least 1"
            )));
        }
        if data.len() != layers * steps * dim {
            return Err(FeatureError::InvalidShape(format!(
                "{} values for shape {layers}x{steps}x{dim}",
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(FeatureError::NonFiniteValue { index });
        }
        Ok(FeatureTensor {
            layers,
            steps,
            dim,
            axis,
            data,
        })
    }

    /// Stacks equally shaped `T x D` matrices as layers.
    pub fn from_layers(layers: Vec<Matrix>, axis: AxisKind) -> Result<Self, FeatureError> {
        let first = layers
            .first()
            .ok_or_else(|| FeatureError::InvalidShape("no layers".into()))?;
        let (steps, dim) = first.shape();
        let mut data = Vec::with_capacity(layers.len() * steps * dim);
        for m in &layers {
            if m.shape() != (steps, dim) {
                return Err(FeatureError::InvalidShape(format!(
                    "layer shape {:?} differs from {:?}",
                    m.shape(),
                    (steps, dim)
                )));
            }
            data.extend_from_slice(m.data());
        }
        FeatureTensor::new(layers.len(), steps, dim, axis, data)
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn axis(&self) -> AxisKind {
        self.axis
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, layer: usize, step: usize, d: usize) -> f64 {
        self.data[(layer * self.steps + step) * self.dim + d]
    }

    /// Copy of one layer as a `T x D` matrix.
    pub fn layer(&self, l: usize) -> Matrix {
        let n = self.steps * self.dim;
        Matrix::from_vec(self.steps, self.dim, self.data[l * n..(l + 1) * n].to_vec())
    }

    pub fn layer_matrices(&self) -> Vec<Matrix> {
        (0..self.layers).map(|l| self.layer(l)).collect()
    }
}
