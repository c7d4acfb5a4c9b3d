use crate::corpus::{LabelBundle, Task};
use crate::tensor::Matrix;

use super::NetError;

/// Per-task and summed loss values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub per_task: [f64; 4],
}

/// Row softmax of `logits`, summed negative log-likelihood over rows that have
/// a target, and the number of such rows. Rows without a target are never
/// read.
pub(crate) fn masked_cross_entropy(logits: &Matrix, targets: &[Option<usize>]) -> (Matrix, f64, usize) {
    let mut probs = Matrix::zeros(logits.rows(), logits.cols());
    let mut total = 0.0;
    let mut count = 0;
    for (r, t) in targets.iter().enumerate() {
        let Some(t) = *t else { continue };
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + z.ln();
        for (p, v) in probs.row_mut(r).iter_mut().zip(row) {
            *p = (v - log_z).exp();
        }
        total += log_z - row[t];
        count += 1;
    }
    (probs, total, count)
}

/// Class targets of one task at masked-in positions.
pub fn task_targets(labels: &[LabelBundle], mask: &[bool], task: Task) -> Result<Vec<Option<usize>>, NetError> {
    labels
        .iter()
        .zip(mask)
        .enumerate()
        .map(|(p, (b, &m))| {
            if !m {
                return Ok(None);
            }
            b.class_index(task)
                .map(Some)
                .ok_or(NetError::MissingLabel { position: p, task })
        })
        .collect()
}

/// Mean cross-entropy per task over mora-core rows, and their weighted sum.
pub fn multitask_loss(
    logits: &[Matrix; 4],
    labels: &[LabelBundle],
    mask: &[bool],
    task_weights: [f64; 4],
) -> Result<LossValue, NetError> {
    if labels.len() != mask.len() {
        return Err(NetError::DimMismatch(format!(
            "{} labels for {} mask entries",
            labels.len(),
            mask.len()
        )));
    }
    if !mask.iter().any(|&m| m) {
        return Err(NetError::EmptyMask);
    }
    let mut per_task = [0.0; 4];
    for t in Task::ALL {
        let l = &logits[t.index()];
        if l.rows() != mask.len() || l.cols() != t.num_classes() {
            return Err(NetError::DimMismatch(format!(
                "{t} logits are {}x{}, expected {}x{}",
                l.rows(),
                l.cols(),
                mask.len(),
                t.num_classes()
            )));
        }
        let targets = task_targets(labels, mask, t)?;
        let (_, sum, count) = masked_cross_entropy(l, &targets);
        per_task[t.index()] = sum / count as f64;
    }
    let total = per_task.iter().zip(task_weights).map(|(l, w)| l * w).sum();
    Ok(LossValue { total, per_task })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundles(n: usize) -> Vec<LabelBundle> {
        (0..n)
            .map(|i| {
                if i % 2 == 0 {
                    LabelBundle::from_indices([i % 6, i % 2, (i + 1) % 6, 1]).unwrap()
                } else {
                    LabelBundle::ABSENT
                }
            })
            .collect()
    }

    fn uniform(n: usize) -> [Matrix; 4] {
        Task::ALL.map(|t| Matrix::zeros(n, t.num_classes()))
    }

    #[test]
    fn uniform_logits() {
        let labels = bundles(5);
        let mask: Vec<bool> = labels.iter().map(|b| b.is_full()).collect();
        let l = multitask_loss(&uniform(5), &labels, &mask, [1.0; 4]).unwrap();
        let (l6, l2) = (6f64.ln(), 2f64.ln());
        assert!((l.total - (2.0 * l6 + 2.0 * l2)).abs() < 1e-12);
        assert!((l.per_task[0] - l6).abs() < 1e-12 && (l.per_task[3] - l2).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_logits_approach_zero() {
        let labels = bundles(3);
        let mask = [true, false, true];
        let mut logits = uniform(3);
        for t in Task::ALL {
            for (r, b) in labels.iter().enumerate() {
                if let Some(k) = b.class_index(t) {
                    logits[t.index()].set(r, k, 60.0);
                }
            }
        }
        let l = multitask_loss(&logits, &labels, &mask, [1.0; 4]).unwrap();
        assert!(l.total < 1e-20);
    }

    #[test]
    fn empty_mask_and_shape_errors() {
        let labels = bundles(2);
        assert!(matches!(
            multitask_loss(&uniform(2), &labels, &[false, false], [1.0; 4]),
            Err(NetError::EmptyMask)
        ));
        assert!(matches!(
            multitask_loss(&uniform(3), &labels, &[true, false], [1.0; 4]),
            Err(NetError::DimMismatch(_))
        ));
        assert!(matches!(
            multitask_loss(&uniform(2), &labels, &[true, true], [1.0; 4]),
            Err(NetError::MissingLabel { position: 1, .. })
        ));
    }
}
