//! Duration-driven averaging of frame-level features into phoneme vectors.

use super::{AxisKind, FeatureError, FeatureTensor};
use crate::tensor::Matrix;

/// Largest tolerated gap between the duration total and the frame count.
pub const RECONCILE_FRAMES: u64 = 2;

/// Frame spans `[start, end)` of each phoneme after reconciliation with the
/// actual frame count.
///
/// When the durations sum to within [`RECONCILE_FRAMES`] of `frames`, the last
/// phoneme's span is clamped to end at `frames`; spans that would start past
/// the end are clipped and become empty.
pub fn phoneme_spans(durations: &[u32], frames: usize) -> Result<Vec<(usize, usize)>, FeatureError> {
    let total: u64 = durations.iter().map(|&d| u64::from(d)).sum();
    if total.abs_diff(frames as u64) > RECONCILE_FRAMES {
        return Err(FeatureError::DurationSumMismatch {
            durations: total,
            frames,
        });
    }
    let mut spans = Vec::with_capacity(durations.len());
    let mut start = 0usize;
    for &d in durations {
        let end = start + d as usize;
        spans.push((start.min(frames), end.min(frames)));
        start = end;
    }
    if let Some(last) = spans.last_mut() {
        last.1 = frames;
    }
    Ok(spans)
}

/// Mean-pools each layer of a frame-axis tensor over the phoneme spans.
///
/// Empty spans (zero-duration phonemes) take the value of the nearest
/// preceding frame, or the first frame when nothing precedes them.
pub fn pool_to_phonemes(t: &FeatureTensor, durations: &[u32]) -> Result<FeatureTensor, FeatureError> {
    if t.axis() != AxisKind::Frame {
        return Err(FeatureError::AxisMismatch {
            expected: AxisKind::Frame,
            found: t.axis(),
        });
    }
    if durations.is_empty() {
        return Err(FeatureError::InvalidShape("no phonemes to pool into".into()));
    }
    let spans = phoneme_spans(durations, t.steps())?;
    let layers = t
        .layer_matrices()
        .iter()
        .map(|m| pool_matrix(m, &spans))
        .collect();
    FeatureTensor::from_layers(layers, AxisKind::Phoneme)
}

pub(crate) fn pool_matrix(frames: &Matrix, spans: &[(usize, usize)]) -> Matrix {
    let dim = frames.cols();
    let mut out = Matrix::zeros(spans.len(), dim);
    for (p, &(s, e)) in spans.iter().enumerate() {
        let row = out.row_mut(p);
        if e > s {
            for f in s..e {
                for (acc, v) in row.iter_mut().zip(frames.row(f)) {
                    *acc += v;
                }
            }
            let n = (e - s) as f64;
            for v in row.iter_mut() {
                *v /= n;
            }
        } else {
            let src = s.saturating_sub(1).min(frames.rows() - 1);
            row.copy_from_slice(frames.row(src));
        }
    }
    out
}
