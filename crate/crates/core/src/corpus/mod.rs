//! Utterance data model, label taxonomies and the JSON-lines manifest.
//!
//! A manifest holds one utterance per line:
//!
//! ```text
//! {"id": "utt1", "phonemes": ["a","sh","i"], "durations": [3,2,4],
//!  "labels": {"acc": ["[",null,"*"], "hl": ["L",null,"H"],
//!             "bi": ["0",null,"1"], "pau": ["N",null,"N"]},
//!  "audio": "wav/utt1.wav", "features": {"hubert": "feats/utt1.hubert.pfe"}}
//! ```
//!
//! Labels are stored per phoneme: a full bundle at every mora-core phoneme
//! and `null` everywhere else. `labels` may be `null` for unlabeled input.
//! Unknown keys are rejected.

mod inventory;
mod labels;
mod manifest;

use std::collections::BTreeMap;
use std::path::PathBuf;

use thiserror::Error;

pub use inventory::{is_mora_core, Inventory, DEFAULT_MORA_CORE, DEFAULT_PHONEMES};
pub use labels::{AccLabel, BiLabel, HlLabel, Label, LabelBundle, PauLabel, Task};
pub use manifest::{
    parse_manifest, parse_manifest_str, render_manifest, write_manifest,
};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}malformed record: {reason}", line_prefix(*line))]
    MalformedRecord { line: Option<usize>, reason: String },
    #[error("{}unknown symbol {symbol:?}", line_prefix(*line))]
    UnknownSymbol { line: Option<usize>, symbol: String },
    #[error("{}{what}: expected {expected} entries, found {found}", line_prefix(*line))]
    AlignmentMismatch {
        line: Option<usize>,
        what: String,
        expected: usize,
        found: usize,
    },
    #[error("utterance {0:?} has no labels")]
    UnlabeledUtterance(String),
    #[error("invalid inventory: {0}")]
    InvalidInventory(String),
}

fn line_prefix(line: Option<usize>) -> String {
    line.map(|l| format!("line {l}: ")).unwrap_or_default()
}

impl CorpusError {
    fn at_line(self, n: usize) -> Self {
        match self {
            CorpusError::MalformedRecord { reason, .. } => CorpusError::MalformedRecord {
                line: Some(n),
                reason,
            },
            CorpusError::UnknownSymbol { symbol, .. } => CorpusError::UnknownSymbol {
                line: Some(n),
                symbol,
            },
            CorpusError::AlignmentMismatch {
                what,
                expected,
                found,
                ..
            } => CorpusError::AlignmentMismatch {
                line: Some(n),
                what,
                expected,
                found,
            },
            other => other,
        }
    }
}

/// One phoneme with its duration in frames at the canonical hop.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PhonemeToken {
    pub symbol: String,
    pub duration: u32,
    pub mora_core: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub phonemes: Vec<PhonemeToken>,
    /// Aligned 1:1 with `phonemes` when present.
    pub labels: Option<Vec<LabelBundle>>,
    pub audio: Option<String>,
    /// Stream name to feature file path. Relative paths resolve against the
    /// manifest's directory.
    pub features: BTreeMap<String, String>,
}

impl Utterance {
    /// Builds a validated utterance, deriving mora-core flags from the
    /// inventory.
    pub fn new<S: AsRef<str>>(
        id: impl Into<String>,
        symbols: &[S],
        durations: &[u32],
        labels: Option<Vec<LabelBundle>>,
        inventory: &Inventory,
    ) -> Result<Self, CorpusError> {
        if symbols.len() != durations.len() {
            return Err(CorpusError::AlignmentMismatch {
                line: None,
                what: "durations".into(),
                expected: symbols.len(),
                found: durations.len(),
            });
        }
        let phonemes = symbols
            .iter()
            .zip(durations)
            .map(|(s, &duration)| {
                let symbol = s.as_ref();
                Ok(PhonemeToken {
                    symbol: symbol.to_owned(),
                    duration,
                    mora_core: inventory.is_mora_core(symbol)?,
                })
            })
            .collect::<Result<Vec<_>, CorpusError>>()?;
        let utt = Utterance {
            id: id.into(),
            phonemes,
            labels,
            audio: None,
            features: BTreeMap::new(),
        };
        utt.validate(inventory)?;
        Ok(utt)
    }

    /// Checks every type invariant against `inventory`.
    pub fn validate(&self, inventory: &Inventory) -> Result<(), CorpusError> {
        if self.id.is_empty() {
            return Err(CorpusError::MalformedRecord {
                line: None,
                reason: "empty utterance id".into(),
            });
        }
        for p in &self.phonemes {
            let core = inventory.is_mora_core(&p.symbol)?;
            if core != p.mora_core {
                return Err(CorpusError::MalformedRecord {
                    line: None,
                    reason: format!(
                        "phoneme {:?} has mora_core={} but the inventory says {}",
                        p.symbol, p.mora_core, core
                    ),
                });
            }
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.phonemes.len() {
                return Err(CorpusError::AlignmentMismatch {
                    line: None,
                    what: "labels".into(),
                    expected: self.phonemes.len(),
                    found: labels.len(),
                });
            }
            for (i, (p, b)) in self.phonemes.iter().zip(labels).enumerate() {
                if p.mora_core && !b.is_full() {
                    return Err(CorpusError::MalformedRecord {
                        line: None,
                        reason: format!(
                            "mora-core phoneme {i} ({:?}) is missing labels",
                            p.symbol
                        ),
                    });
                }
                if !p.mora_core && !b.is_absent() {
                    return Err(CorpusError::MalformedRecord {
                        line: None,
                        reason: format!(
                            "non-mora-core phoneme {i} ({:?}) carries labels",
                            p.symbol
                        ),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.phonemes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phonemes.is_empty()
    }

    pub fn durations(&self) -> Vec<u32> {
        self.phonemes.iter().map(|p| p.duration).collect()
    }

    pub fn total_frames(&self) -> u64 {
        self.phonemes.iter().map(|p| u64::from(p.duration)).sum()
    }

    pub fn mora_core_mask(&self) -> Vec<bool> {
        self.phonemes.iter().map(|p| p.mora_core).collect()
    }

    pub fn num_mora_cores(&self) -> usize {
        self.phonemes.iter().filter(|p| p.mora_core).count()
    }
}

/// Per-task class counts over mora-core positions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassCounts {
    counts: [Vec<usize>; 4],
}

impl Default for ClassCounts {
    fn default() -> Self {
        ClassCounts {
            counts: Task::ALL.map(|t| vec![0; t.num_classes()]),
        }
    }
}

impl ClassCounts {
    pub fn get(&self, task: Task) -> &[usize] {
        &self.counts[task.index()]
    }

    pub fn count(&self, task: Task, symbol: &str) -> Option<usize> {
        let idx = task.symbols().iter().position(|s| *s == symbol)?;
        Some(self.counts[task.index()][idx])
    }

    pub fn total(&self, task: Task) -> usize {
        self.get(task).iter().sum()
    }
}

/// Counts label occurrences per task over mora-core positions.
pub fn class_counts(utterances: &[Utterance]) -> Result<ClassCounts, CorpusError> {
    let mut out = ClassCounts::default();
    for u in utterances {
        let labels = u
            .labels
            .as_ref()
            .ok_or_else(|| CorpusError::UnlabeledUtterance(u.id.clone()))?;
        for (p, b) in u.phonemes.iter().zip(labels) {
            if !p.mora_core {
                continue;
            }
            for t in Task::ALL {
                if let Some(k) = b.class_index(t) {
                    out.counts[t.index()][k] += 1;
                }
            }
        }
    }
    Ok(out)
}
