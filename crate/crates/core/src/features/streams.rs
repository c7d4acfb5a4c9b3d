//! Stream selection and phoneme-level input assembly.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::fusion::{fuse_layers, mix_layers, FusionWeights};
use super::pooling::{phoneme_spans, pool_matrix};
use super::{read_features, AxisKind, FeatureError, FeatureTensor};
use crate::corpus::{Inventory, PhonemeToken, Utterance};
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcousticStream {
    /// Frame-level hidden states dumped by an external extractor, looked up
    /// under this name in the utterance's feature map.
    Extractor(String),
    Melspec,
    F0,
    None,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinguisticStream {
    /// Phoneme-level hidden states dumped by an external extractor.
    Extractor(String),
    OneHot,
    None,
}

impl AcousticStream {
    /// Feature-map key holding this stream, if any.
    pub fn feature_key(&self) -> Option<&str> {
        match self {
            AcousticStream::Extractor(name) => Some(name),
            AcousticStream::Melspec => Some("melspec"),
            AcousticStream::F0 => Some("f0"),
            AcousticStream::None => None,
        }
    }
}

impl LinguisticStream {
    pub fn feature_key(&self) -> Option<&str> {
        match self {
            LinguisticStream::Extractor(name) => Some(name),
            _ => None,
        }
    }
}

impl fmt::Display for AcousticStream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AcousticStream::Extractor(n) => write!(f, "{n}"),
            AcousticStream::Melspec => f.write_str("melspec"),
            AcousticStream::F0 => f.write_str("f0"),
            AcousticStream::None => f.write_str("none"),
        }
    }
}

impl fmt::Display for LinguisticStream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LinguisticStream::Extractor(n) => write!(f, "{n}"),
            LinguisticStream::OneHot => f.write_str("one-hot"),
            LinguisticStream::None => f.write_str("none"),
        }
    }
}

/// Keywords map to the native streams; anything else names an extractor.
impl FromStr for AcousticStream {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "" => Err(FeatureError::InvalidStreamConfig("empty acoustic stream name".into())),
            "melspec" => Ok(AcousticStream::Melspec),
            "f0" => Ok(AcousticStream::F0),
            "none" => Ok(AcousticStream::None),
            other => Ok(AcousticStream::Extractor(other.to_owned())),
        }
    }
}

impl FromStr for LinguisticStream {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "" => Err(FeatureError::InvalidStreamConfig("empty linguistic stream name".into())),
            "one-hot" | "one_hot" | "onehot" => Ok(LinguisticStream::OneHot),
            "none" => Ok(LinguisticStream::None),
            other => Ok(LinguisticStream::Extractor(other.to_owned())),
        }
    }
}

/// Which acoustic and linguistic inputs feed the classifier.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamConfig {
    pub acoustic: AcousticStream,
    pub linguistic: LinguisticStream,
}

impl StreamConfig {
    pub fn new(acoustic: AcousticStream, linguistic: LinguisticStream) -> Result<Self, FeatureError> {
        let cfg = StreamConfig {
            acoustic,
            linguistic,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        if self.acoustic == AcousticStream::None && self.linguistic == LinguisticStream::None {
            return Err(FeatureError::InvalidStreamConfig(
                "at least one of the acoustic and linguistic streams must be enabled".into(),
            ));
        }
        Ok(())
    }
}

impl fmt::Display for StreamConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}+{}", self.acoustic, self.linguistic)
    }
}

/// Fusion weights for each stream. `None` means equal weights.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StreamWeights {
    pub acoustic: Option<FusionWeights>,
    pub linguistic: Option<FusionWeights>,
}

/// The raw tensors of one utterance's configured streams.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedStreams {
    /// Frame-axis tensor.
    pub acoustic: Option<FeatureTensor>,
    /// Phoneme-axis tensor with one row per phoneme.
    pub linguistic: Option<FeatureTensor>,
}

/// One row per phoneme with a single 1.0 at the symbol's inventory index.
pub fn one_hot_stream(phonemes: &[PhonemeToken], inventory: &Inventory) -> Result<FeatureTensor, FeatureError> {
    let width = inventory.len();
    let mut data = vec![0.0; phonemes.len() * width];
    for (p, tok) in phonemes.iter().enumerate() {
        let idx = inventory
            .index_of(&tok.symbol)
            .map_err(|_| FeatureError::UnknownSymbol(tok.symbol.clone()))?;
        data[p * width + idx] = 1.0;
    }
    FeatureTensor::new(1, phonemes.len(), width, AxisKind::Phoneme, data)
}

pub fn resolve_path(base_dir: &Path, path: &str) -> PathBuf {
    let p = Path::new(path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base_dir.join(p)
    }
}

fn load_named(utt: &Utterance, key: &str, base_dir: &Path) -> Result<FeatureTensor, FeatureError> {
    let rel = utt.features.get(key).ok_or_else(|| FeatureError::MissingStream {
        utterance: utt.id.clone(),
        stream: key.to_owned(),
    })?;
    read_features(resolve_path(base_dir, rel)).map_err(|e| FeatureError::InUtterance {
        utterance: utt.id.clone(),
        source: Box::new(e),
    })
}

/// Reads the utterance's configured streams from disk (or builds them, for
/// the one-hot stream) and checks their axis contracts.
pub fn load_streams(
    utt: &Utterance,
    cfg: &StreamConfig,
    base_dir: &Path,
    inventory: &Inventory,
) -> Result<LoadedStreams, FeatureError> {
    cfg.validate()?;
    let acoustic = match cfg.acoustic.feature_key() {
        None => None,
        Some(key) => {
            let t = load_named(utt, key, base_dir)?;
            if t.axis() != AxisKind::Frame {
                return Err(FeatureError::AxisMismatch {
                    expected: AxisKind::Frame,
                    found: t.axis(),
                });
            }
            Some(t)
        }
    };
    let linguistic = match &cfg.linguistic {
        LinguisticStream::None => None,
        LinguisticStream::OneHot => Some(one_hot_stream(&utt.phonemes, inventory)?),
        LinguisticStream::Extractor(key) => {
            let t = load_named(utt, key, base_dir)?;
            if t.axis() != AxisKind::Phoneme {
                return Err(FeatureError::AxisMismatch {
                    expected: AxisKind::Phoneme,
                    found: t.axis(),
                });
            }
            Some(t)
        }
    };
    let loaded = LoadedStreams {
        acoustic,
        linguistic,
    };
    check_phoneme_count(utt, &loaded)?;
    Ok(loaded)
}

fn check_phoneme_count(utt: &Utterance, loaded: &LoadedStreams) -> Result<(), FeatureError> {
    if let Some(l) = &loaded.linguistic {
        if l.steps() != utt.len() {
            return Err(FeatureError::PhonemeCountMismatch {
                utterance: utt.id.clone(),
                expected: utt.len(),
                found: l.steps(),
            });
        }
    }
    Ok(())
}

fn weights_for(w: &Option<FusionWeights>, layers: usize) -> Result<FusionWeights, FeatureError> {
    match w {
        None => Ok(FusionWeights::uniform(layers)),
        Some(w) if w.len() == layers => Ok(w.clone()),
        Some(w) => Err(FeatureError::LayerCountMismatch {
            expected: layers,
            found: w.len(),
        }),
    }
}

/// Builds the `P x (D_aco + D_ling)` classifier input: the acoustic stream is
/// fused then pooled, the linguistic stream is fused, and a disabled stream
/// contributes no columns.
pub fn assemble_input(
    utt: &Utterance,
    loaded: &LoadedStreams,
    weights: &StreamWeights,
) -> Result<Matrix, FeatureError> {
    if loaded.acoustic.is_none() && loaded.linguistic.is_none() {
        return Err(FeatureError::InvalidStreamConfig("no stream loaded".into()));
    }
    check_phoneme_count(utt, loaded)?;
    let p = utt.len();
    let aco = match &loaded.acoustic {
        None => Matrix::zeros(p, 0),
        Some(t) => {
            let fused = fuse_layers(t, &weights_for(&weights.acoustic, t.layers())?)?;
            super::pool_to_phonemes(&fused, &utt.durations())?.layer(0)
        }
    };
    let ling = match &loaded.linguistic {
        None => Matrix::zeros(p, 0),
        Some(t) => fuse_layers(t, &weights_for(&weights.linguistic, t.layers())?)?.layer(0),
    };
    Ok(aco.concat_cols(&ling))
}

/// Phoneme-level per-layer matrices, before fusion.
///
/// Pooling and layer mixing are both linear, so fusing these layers gives
/// the same result as [`assemble_input`] up to floating-point reassociation.
/// Training uses this form so the fusion weights stay inside the
/// differentiated graph while pooling runs once per utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct PhonemeLayers {
    pub acoustic: Vec<Matrix>,
    pub linguistic: Vec<Matrix>,
}

impl PhonemeLayers {
    pub fn from_streams(utt: &Utterance, loaded: &LoadedStreams) -> Result<Self, FeatureError> {
        check_phoneme_count(utt, loaded)?;
        let acoustic = match &loaded.acoustic {
            None => Vec::new(),
            Some(t) => {
                if utt.is_empty() {
                    return Err(FeatureError::InvalidShape("no phonemes to pool into".into()));
                }
                let spans = phoneme_spans(&utt.durations(), t.steps())?;
                t.layer_matrices().iter().map(|m| pool_matrix(m, &spans)).collect()
            }
        };
        let linguistic = loaded
            .linguistic
            .as_ref()
            .map(FeatureTensor::layer_matrices)
            .unwrap_or_default();
        Ok(PhonemeLayers {
            acoustic,
            linguistic,
        })
    }

    /// Assembles the classifier input from already-pooled layers.
    pub fn assemble(&self, rows: usize, weights: &StreamWeights) -> Result<Matrix, FeatureError> {
        let mix = |layers: &[Matrix], w: &Option<FusionWeights>| -> Result<Matrix, FeatureError> {
            if layers.is_empty() {
                return Ok(Matrix::zeros(rows, 0));
            }
            Ok(mix_layers(layers, &weights_for(w, layers.len())?.weights()))
        };
        Ok(mix(&self.acoustic, &weights.acoustic)?.concat_cols(&mix(&self.linguistic, &weights.linguistic)?))
    }
}
