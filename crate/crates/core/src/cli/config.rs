//! Versioned run configuration. Every section is optional; command-line
//! flags override whatever the file sets.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::features::synth::SynthConfig;
use crate::features::{AcousticStream, LinguisticStream, StreamConfig};
use crate::metrics::ZeroSupportPolicy;
use crate::net::{ModelConfig, TrainConfig};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    /// Overrides the training and synthesis seeds when set.
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    /// Phoneme inventory JSON; the built-in inventory when absent.
    pub inventory: Option<PathBuf>,
    pub manifests: Manifests,
    pub streams: StreamConfig,
    pub grid: GridConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub extract: ExtractConfig,
    pub synth: SynthSettings,
    pub score: ScoreConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            version: CONFIG_VERSION,
            seed: None,
            out: None,
            inventory: None,
            manifests: Manifests::default(),
            streams: StreamConfig {
                acoustic: AcousticStream::Melspec,
                linguistic: LinguisticStream::OneHot,
            },
            grid: GridConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            extract: ExtractConfig::default(),
            synth: SynthSettings::default(),
            score: ScoreConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Manifests {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub eval: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub acoustic: Vec<AcousticStream>,
    pub linguistic: Vec<LinguisticStream>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            acoustic: vec![AcousticStream::Melspec, AcousticStream::None],
            linguistic: vec![LinguisticStream::OneHot, LinguisticStream::None],
        }
    }
}

impl GridConfig {
    /// All stream pairs in row-major order, without the empty pair.
    pub fn combinations(&self) -> Vec<StreamConfig> {
        let mut out = Vec::new();
        for a in &self.acoustic {
            for l in &self.linguistic {
                let s = StreamConfig {
                    acoustic: a.clone(),
                    linguistic: l.clone(),
                };
                if s.validate().is_ok() {
                    out.push(s);
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractConfig {
    /// Native streams to compute: `melspec` and/or `f0`.
    pub streams: Vec<String>,
    pub n_mels: usize,
    pub fmin: f64,
    /// Nyquist when absent.
    pub fmax: Option<f64>,
    pub f0_floor: f64,
    pub f0_ceil: f64,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig {
            streams: vec!["melspec".into(), "f0".into()],
            n_mels: 80,
            fmin: 0.0,
            fmax: None,
            f0_floor: 70.0,
            f0_ceil: 400.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSettings {
    pub corpus: SynthConfig,
    /// Length of each planted class direction.
    pub amplitude: f64,
    pub train_utts: usize,
    pub dev_utts: usize,
    pub eval_utts: usize,
}

impl Default for SynthSettings {
    fn default() -> Self {
        SynthSettings {
            corpus: SynthConfig::default(),
            amplitude: 4.0,
            train_utts: 60,
            dev_utts: 20,
            eval_utts: 20,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreConfig {
    pub zero_support: ZeroSupportPolicy,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_json(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if cfg.version != CONFIG_VERSION {
            return Err(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                cfg.version
            ));
        }
        Ok(cfg)
    }

    /// Pushes the top-level seed into the sections that consume one.
    pub fn apply_seed(&mut self) {
        if let Some(seed) = self.seed {
            self.train.seed = seed;
            self.synth.corpus.seed = seed;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_default() {
        let cfg = RunConfig::from_json(r#"{"version": 1}"#).unwrap();
        assert_eq!(cfg, RunConfig::default());
        let round = RunConfig::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(round, cfg);
    }

    #[test]
    fn rejects_unknown_keys_and_versions() {
        assert!(RunConfig::from_json(r#"{"version": 1, "lr": 3}"#).is_err());
        assert!(RunConfig::from_json(r#"{"version": 2}"#).is_err());
        assert!(RunConfig::from_json(r#"{"version": 1, "train": {"learning_rate": 3}}"#).is_err());
    }

    #[test]
    fn grid_skips_empty_pair() {
        let combos = GridConfig::default().combinations();
        assert_eq!(combos.len(), 3);
        assert!(combos
            .iter()
            .all(|s| !(s.acoustic == AcousticStream::None && s.linguistic == LinguisticStream::None)));
    }

    #[test]
    fn seed_propagates() {
        let mut cfg = RunConfig {
            seed: Some(42),
            ..RunConfig::default()
        };
        cfg.apply_seed();
        assert_eq!(cfg.train.seed, 42);
        assert_eq!(cfg.synth.corpus.seed, 42);
    }
}
