use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    AccLabel, BiLabel, CorpusError, HlLabel, Inventory, Label, LabelBundle, PauLabel,
    PhonemeToken, Utterance,
};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    phonemes: Vec<String>,
    durations: Vec<u32>,
    #[serde(default)]
    labels: Option<RecordLabels>,
    #[serde(default)]
    audio: Option<String>,
    #[serde(default)]
    features: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLabels {
    acc: Vec<Option<String>>,
    hl: Vec<Option<String>>,
    bi: Vec<Option<String>>,
    pau: Vec<Option<String>>,
}

fn decode_column<L: Label>(
    name: &str,
    column: &[Option<String>],
    expected: usize,
) -> Result<Vec<Option<L>>, CorpusError> {
    if column.len() != expected {
        return Err(CorpusError::AlignmentMismatch {
            line: None,
            what: format!("{name} labels"),
            expected,
            found: column.len(),
        });
    }
    column
        .iter()
        .map(|cell| match cell {
            None => Ok(None),
            Some(s) => L::from_symbol(s)
                .map(Some)
                .ok_or_else(|| CorpusError::UnknownSymbol {
                    line: None,
                    symbol: s.clone(),
                }),
        })
        .collect()
}

fn record_to_utterance(record: Record, inventory: &Inventory) -> Result<Utterance, CorpusError> {
    if record.phonemes.len() != record.durations.len() {
        return Err(CorpusError::AlignmentMismatch {
            line: None,
            what: "durations".into(),
            expected: record.phonemes.len(),
            found: record.durations.len(),
        });
    }
    let n = record.phonemes.len();
    let labels = match &record.labels {
        None => None,
        Some(cols) => {
            let acc = decode_column::<AccLabel>("acc", &cols.acc, n)?;
            let hl = decode_column::<HlLabel>("hl", &cols.hl, n)?;
            let bi = decode_column::<BiLabel>("bi", &cols.bi, n)?;
            let pau = decode_column::<PauLabel>("pau", &cols.pau, n)?;
            Some(
                (0..n)
                    .map(|i| LabelBundle {
                        acc: acc[i],
                        hl: hl[i],
                        bi: bi[i],
                        pau: pau[i],
                    })
                    .collect(),
            )
        }
    };
    let phonemes = record
        .phonemes
        .into_iter()
        .zip(record.durations)
        .map(|(symbol, duration)| {
            let mora_core = inventory.is_mora_core(&symbol)?;
            Ok(PhonemeToken {
                symbol,
                duration,
                mora_core,
            })
        })
        .collect::<Result<Vec<_>, CorpusError>>()?;
    let utt = Utterance {
        id: record.id,
        phonemes,
        labels,
        audio: record.audio,
        features: record.features,
    };
    utt.validate(inventory)?;
    Ok(utt)
}

fn utterance_to_record(u: &Utterance) -> Record {
    fn column<F: Fn(&LabelBundle) -> Option<&'static str>>(
        labels: &[LabelBundle],
        f: F,
    ) -> Vec<Option<String>> {
        labels.iter().map(|b| f(b).map(str::to_owned)).collect()
    }
    Record {
        id: u.id.clone(),
        phonemes: u.phonemes.iter().map(|p| p.symbol.clone()).collect(),
        durations: u.durations(),
        labels: u.labels.as_ref().map(|l| RecordLabels {
            acc: column(l, |b| b.acc.map(Label::symbol)),
            hl: column(l, |b| b.hl.map(Label::symbol)),
            bi: column(l, |b| b.bi.map(Label::symbol)),
            pau: column(l, |b| b.pau.map(Label::symbol)),
        }),
        audio: u.audio.clone(),
        features: u.features.clone(),
    }
}

/// Parses manifest text. Blank lines are skipped; line numbers in errors are
/// 1-based.
pub fn parse_manifest_str(text: &str, inventory: &Inventory) -> Result<Vec<Utterance>, CorpusError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record =
            serde_json::from_str(line).map_err(|e| CorpusError::MalformedRecord {
                line: Some(n),
                reason: e.to_string(),
            })?;
        if !seen.insert(record.id.clone()) {
            return Err(CorpusError::MalformedRecord {
                line: Some(n),
                reason: format!("duplicate utterance id {:?}", record.id),
            });
        }
        out.push(record_to_utterance(record, inventory).map_err(|e| e.at_line(n))?);
    }
    Ok(out)
}

/// Reads and validates a JSON-lines manifest, preserving file order.
pub fn parse_manifest(
    path: impl AsRef<Path>,
    inventory: &Inventory,
) -> Result<Vec<Utterance>, CorpusError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_manifest_str(&text, inventory)
}

pub fn render_manifest(utterances: &[Utterance]) -> String {
    let mut out = String::new();
    for u in utterances {
        out.push_str(&serde_json::to_string(&utterance_to_record(u)).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn write_manifest(path: impl AsRef<Path>, utterances: &[Utterance]) -> Result<(), CorpusError> {
    let path = path.as_ref();
    std::fs::write(path, render_manifest(utterances)).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}
