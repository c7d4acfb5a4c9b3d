//! Accuracy, macro F1 and confusion matrices over mora-core positions, and
//! layer-weight reports.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{LabelBundle, Task, Utterance};
use crate::features::softmax;
use crate::net::{Checkpoint, FUSION_ACOUSTIC, FUSION_LINGUISTIC};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("alignment mismatch in {utterance:?}: {reason}")]
    AlignmentMismatch { utterance: String, reason: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn mismatch(utterance: &str, reason: impl Into<String>) -> MetricsError {
    MetricsError::AlignmentMismatch {
        utterance: utterance.to_owned(),
        reason: reason.into(),
    }
}

/// How classes absent from both reference and hypothesis enter the macro
/// average.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroSupportPolicy {
    /// They count as F1 = 0 and the average runs over every class.
    #[default]
    Zero,
    /// They are left out of the average.
    Exclude,
}

/// Rows are reference classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub task: Task,
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(task: Task) -> Self {
        let k = task.num_classes();
        ConfusionMatrix {
            task,
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn add(&mut self, reference: usize, hypothesis: usize) {
        self.counts[reference][hypothesis] += 1;
    }

    pub fn get(&self, reference: usize, hypothesis: usize) -> u64 {
        self.counts[reference][hypothesis]
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.counts.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.counts.len()).map(|j| self.counts.iter().map(|r| r[j]).sum()).collect()
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            self.trace() as f64 / total as f64
        }
    }

    /// Header row and column carry the class symbols.
    pub fn to_csv(&self) -> String {
        let symbols = self.task.symbols();
        let mut out = String::from("ref\\hyp");
        for s in &symbols {
            write!(out, ",{s}").unwrap();
        }
        out.push('\n');
        for (s, row) in symbols.iter().zip(&self.counts) {
            out.push_str(s);
            for v in row {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn score(&self, policy: ZeroSupportPolicy) -> TaskScore {
        let rows = self.row_sums();
        let cols = self.col_sums();
        let symbols = self.task.symbols();
        let mut classes = Vec::with_capacity(rows.len());
        let mut f1_sum = 0.0;
        let mut averaged = 0usize;
        for k in 0..rows.len() {
            let tp = self.counts[k][k] as f64;
            let precision = if cols[k] == 0 { 0.0 } else { tp / cols[k] as f64 };
            let recall = if rows[k] == 0 { 0.0 } else { tp / rows[k] as f64 };
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            if !(policy == ZeroSupportPolicy::Exclude && rows[k] == 0 && cols[k] == 0) {
                f1_sum += f1;
                averaged += 1;
            }
            classes.push(ClassScore {
                symbol: symbols[k].to_owned(),
                precision,
                recall,
                f1,
                support: rows[k],
            });
        }
        TaskScore {
            accuracy: self.accuracy(),
            macro_f1: if averaged == 0 { 0.0 } else { f1_sum / averaged as f64 },
            support: self.total(),
            classes,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub symbol: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskScore {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub support: u64,
    pub classes: Vec<ClassScore>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub zero_support: ZeroSupportPolicy,
    pub acc: TaskScore,
    pub hl: TaskScore,
    pub bi: TaskScore,
    pub pau: TaskScore,
}

impl ScoreReport {
    pub fn task(&self, t: Task) -> &TaskScore {
        match t {
            Task::Acc => &self.acc,
            Task::Hl => &self.hl,
            Task::Bi => &self.bi,
            Task::Pau => &self.pau,
        }
    }

    pub fn accuracies(&self) -> [f64; 4] {
        Task::ALL.map(|t| self.task(t).accuracy)
    }
}

/// Adds one utterance's mora-core positions to the four matrices.
pub fn tally(
    id: &str,
    reference: &[LabelBundle],
    hypothesis: &[LabelBundle],
    mask: &[bool],
    into: &mut [ConfusionMatrix; 4],
) -> Result<(), MetricsError> {
    if reference.len() != mask.len() || hypothesis.len() != mask.len() {
        return Err(mismatch(
            id,
            format!(
                "{} reference and {} hypothesis labels for {} phonemes",
                reference.len(),
                hypothesis.len(),
                mask.len()
            ),
        ));
    }
    for p in (0..mask.len()).filter(|&p| mask[p]) {
        for t in Task::ALL {
            let r = reference[p].class_index(t);
            let h = hypothesis[p].class_index(t);
            match (r, h) {
                (Some(r), Some(h)) => into[t.index()].add(r, h),
                (None, _) => return Err(mismatch(id, format!("no reference {t} label at position {p}"))),
                (_, None) => return Err(mismatch(id, format!("no hypothesis {t} label at position {p}"))),
            }
        }
    }
    Ok(())
}

pub fn empty_matrices() -> [ConfusionMatrix; 4] {
    Task::ALL.map(ConfusionMatrix::new)
}

pub fn report(matrices: &[ConfusionMatrix; 4], policy: ZeroSupportPolicy) -> ScoreReport {
    let [acc, hl, bi, pau] = matrices.each_ref().map(|m| m.score(policy));
    ScoreReport {
        zero_support: policy,
        acc,
        hl,
        bi,
        pau,
    }
}

/// Scores hypothesis utterances against references, matched by id. Every
/// reference needs a hypothesis with the same phoneme sequence.
pub fn score(
    references: &[Utterance],
    hypotheses: &[Utterance],
    policy: ZeroSupportPolicy,
) -> Result<(ScoreReport, [ConfusionMatrix; 4]), MetricsError> {
    let by_id: HashMap<&str, &Utterance> = hypotheses.iter().map(|u| (u.id.as_str(), u)).collect();
    if by_id.len() != references.len() {
        return Err(mismatch(
            "<corpus>",
            format!("{} references but {} distinct hypotheses", references.len(), by_id.len()),
        ));
    }
    let mut matrices = empty_matrices();
    for r in references {
        let h = by_id
            .get(r.id.as_str())
            .ok_or_else(|| mismatch(&r.id, "no hypothesis for this utterance"))?;
        if r.phonemes.iter().map(|p| &p.symbol).ne(h.phonemes.iter().map(|p| &p.symbol)) {
            return Err(mismatch(&r.id, "phoneme sequences differ"));
        }
        let rl = r.labels.as_deref().ok_or_else(|| mismatch(&r.id, "reference is unlabeled"))?;
        let hl = h.labels.as_deref().ok_or_else(|| mismatch(&r.id, "hypothesis is unlabeled"))?;
        tally(&r.id, rl, hl, &r.mora_core_mask(), &mut matrices)?;
    }
    Ok((report(&matrices, policy), matrices))
}

/// Writes `scores.json` and `confusion_<task>.csv` into `dir`.
pub fn write_scores(dir: &Path, report: &ScoreReport, matrices: &[ConfusionMatrix; 4]) -> Result<(), MetricsError> {
    let io = |path: PathBuf| move |source| MetricsError::Io { path, source };
    std::fs::create_dir_all(dir).map_err(io(dir.to_path_buf()))?;
    let path = dir.join("scores.json");
    let json = serde_json::to_string_pretty(report).expect("scores serialize");
    std::fs::write(&path, json + "\n").map_err(io(path.clone()))?;
    for m in matrices {
        let path = dir.join(format!("confusion_{}.csv", m.task.name()));
        std::fs::write(&path, m.to_csv()).map_err(io(path.clone()))?;
    }
    Ok(())
}

/// Normalized layer weights per stream.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerWeights {
    pub acoustic: Option<Vec<f64>>,
    pub linguistic: Option<Vec<f64>>,
}

impl LayerWeights {
    pub fn streams(&self) -> Vec<(&'static str, &[f64])> {
        let mut out = Vec::new();
        if let Some(a) = &self.acoustic {
            out.push(("acoustic", a.as_slice()));
        }
        if let Some(l) = &self.linguistic {
            out.push(("linguistic", l.as_slice()));
        }
        out
    }
}

pub fn argmax_layer(weights: &[f64]) -> usize {
    let mut best = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > weights[best] {
            best = i;
        }
    }
    best
}

pub fn report_layer_weights(ckpt: &Checkpoint) -> LayerWeights {
    let get = |name| ckpt.model.param(name).map(|m| softmax(m.data()));
    LayerWeights {
        acoustic: get(FUSION_ACOUSTIC),
        linguistic: get(FUSION_LINGUISTIC),
    }
}

pub fn layer_weights_csv(weights: &[f64]) -> String {
    let mut out = String::from("layer,weight\n");
    for (i, w) in weights.iter().enumerate() {
        writeln!(out, "{i},{w}").unwrap();
    }
    out
}

/// Writes `layer_weights_<stream>.csv` for every stream the model has.
pub fn write_layer_weights(dir: &Path, weights: &LayerWeights) -> Result<Vec<PathBuf>, MetricsError> {
    std::fs::create_dir_all(dir).map_err(|source| MetricsError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::new();
    for (name, w) in weights.streams() {
        let path = dir.join(format!("layer_weights_{name}.csv"));
        std::fs::write(&path, layer_weights_csv(w)).map_err(|source| MetricsError::Io {
            path: path.clone(),
            source,
        })?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hl_matrix(reference: &[usize], hypothesis: &[usize]) -> ConfusionMatrix {
        let mut m = ConfusionMatrix::new(Task::Hl);
        for (&r, &h) in reference.iter().zip(hypothesis) {
            m.add(r, h);
        }
        m
    }

    #[test]
    fn two_class_hand_case() {
        let m = hl_matrix(&[0, 0, 1, 1], &[0, 1, 1, 1]);
        let s = m.score(ZeroSupportPolicy::Zero);
        assert_eq!(s.accuracy, 0.75);
        assert!((s.classes[0].f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((s.classes[1].f1 - 0.8).abs() < 1e-12);
        assert!((s.macro_f1 - 0.733_333_333_333).abs() < 1e-9);
        assert_eq!(s.classes[0].support, 2);
    }

    #[test]
    fn zero_support_policies() {
        let mut m = ConfusionMatrix::new(Task::Bi);
        for k in [0, 1, 1] {
            m.add(k, k);
        }
        let zero = m.score(ZeroSupportPolicy::Zero);
        assert_eq!(zero.accuracy, 1.0);
        assert!((zero.macro_f1 - 2.0 / 6.0).abs() < 1e-15);
        assert_eq!(m.score(ZeroSupportPolicy::Exclude).macro_f1, 1.0);
        m.add(0, 3);
        let ex = m.score(ZeroSupportPolicy::Exclude);
        assert!((ex.macro_f1 - (2.0 / 3.0 + 1.0 + 0.0) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn csv_layout() {
        let m = hl_matrix(&[0, 1, 1], &[0, 0, 1]);
        assert_eq!(m.to_csv(), "ref\\hyp,L,H\nL,1,0\nH,1,1\n");
        assert_eq!(layer_weights_csv(&[0.25, 0.75]), "layer,weight\n0,0.25\n1,0.75\n");
    }

    #[test]
    fn tally_checks_alignment() {
        let full = LabelBundle::from_indices([0, 1, 2, 0]).unwrap();
        let mut ms = empty_matrices();
        assert!(tally("u", &[full], &[full, full], &[true], &mut ms).is_err());
        assert!(tally("u", &[full], &[LabelBundle::ABSENT], &[true], &mut ms).is_err());
        tally("u", &[full, LabelBundle::ABSENT], &[full, full], &[true, false], &mut ms).unwrap();
        assert_eq!(ms[2].get(2, 2), 1);
        assert_eq!(ms[0].total(), 1);
    }

    proptest! {
        #[test]
        fn invariants(pairs in proptest::collection::vec((0usize..6, 0usize..6), 1..40), perm in Just([3usize, 0, 5, 1, 4, 2])) {
            let mut m = ConfusionMatrix::new(Task::Acc);
            let mut p = ConfusionMatrix::new(Task::Acc);
            for &(r, h) in &pairs {
                m.add(r, h);
                p.add(perm[r], perm[h]);
            }
            let (a, b) = (m.score(ZeroSupportPolicy::Zero), p.score(ZeroSupportPolicy::Zero));
            prop_assert_eq!(a.accuracy, m.trace() as f64 / pairs.len() as f64);
            prop_assert_eq!(a.accuracy, b.accuracy);
            prop_assert!((a.macro_f1 - b.macro_f1).abs() < 1e-12);
            let mean = a.classes.iter().map(|c| c.f1).sum::<f64>() / 6.0;
            prop_assert!((a.macro_f1 - mean).abs() < 1e-15);
            let mut refs = [0u64; 6];
            for &(r, _) in &pairs { refs[r] += 1; }
            prop_assert_eq!(m.row_sums(), refs.to_vec());
        }
    }
}
