//! Softmax-normalized weighted sum over hidden layers.

use serde::{Deserialize, Serialize};

use super::{FeatureError, FeatureTensor};
use crate::tensor::Matrix;

/// Learnable per-stream layer logits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    pub logits: Vec<f64>,
}

impl FusionWeights {
    /// Equal logits, i.e. a uniform average.
    pub fn uniform(layers: usize) -> Self {
        FusionWeights {
            logits: vec![0.0; layers],
        }
    }

    pub fn from_logits(logits: Vec<f64>) -> Self {
        FusionWeights { logits }
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    /// Normalized layer weights.
    pub fn weights(&self) -> Vec<f64> {
        softmax(&self.logits)
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Pulls an upstream gradient w.r.t. softmax outputs back to the logits.
pub fn softmax_backward(weights: &[f64], grad_weights: &[f64]) -> Vec<f64> {
    let dot: f64 = weights.iter().zip(grad_weights).map(|(w, g)| w * g).sum();
    weights
        .iter()
        .zip(grad_weights)
        .map(|(w, g)| w * (g - dot))
        .collect()
}

/// `sum_l w_l * layers[l]` for matrices of equal shape.
pub fn mix_layers(layers: &[Matrix], weights: &[f64]) -> Matrix {
    assert_eq!(layers.len(), weights.len(), "one weight per layer");
    let (r, c) = layers[0].shape();
    let mut out = Matrix::zeros(r, c);
    for (layer, &w) in layers.iter().zip(weights) {
        out.add_scaled(layer, w);
    }
    out
}

/// Weighted sum of the tensor's layers, producing a single-layer tensor with
/// the same axis kind.
pub fn fuse_layers(t: &FeatureTensor, w: &FusionWeights) -> Result<FeatureTensor, FeatureError> {
    if w.len() != t.layers() {
        return Err(FeatureError::LayerCountMismatch {
            expected: t.layers(),
            found: w.len(),
        });
    }
    let mixed = mix_layers(&t.layer_matrices(), &w.weights());
    FeatureTensor::from_layers(vec![mixed], t.axis())
}

/// Gradient of `sum(upstream ⊙ fuse_layers(t, w))` w.r.t. the logits.
pub fn fuse_layers_logit_grad(
    t: &FeatureTensor,
    w: &FusionWeights,
    upstream: &Matrix,
) -> Result<Vec<f64>, FeatureError> {
    if w.len() != t.layers() {
        return Err(FeatureError::LayerCountMismatch {
            expected: t.layers(),
            found: w.len(),
        });
    }
    let grad_weights: Vec<f64> = t
        .layer_matrices()
        .iter()
        .map(|m| m.data().iter().zip(upstream.data()).map(|(a, b)| a * b).sum())
        .collect();
    Ok(softmax_backward(&w.weights(), &grad_weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::AxisKind;
    use proptest::prelude::*;

    fn two_layers() -> FeatureTensor {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let b = Matrix::from_rows(&[vec![5.0, -6.0], vec![7.0, 0.5]]);
        FeatureTensor::from_layers(vec![a, b], AxisKind::Frame).unwrap()
    }

    #[test]
    fn single_layer_is_identity() {
        let a = Matrix::from_rows(&[vec![1.5, -2.0]]);
        let t = FeatureTensor::from_layers(vec![a.clone()], AxisKind::Frame).unwrap();
        for logit in [-30.0, 0.0, 7.5] {
            let out = fuse_layers(&t, &FusionWeights::from_logits(vec![logit])).unwrap();
            assert_eq!(out.layer(0), a);
        }
    }

    #[test]
    fn equal_logits_average() {
        let t = two_layers();
        let out = fuse_layers(&t, &FusionWeights::uniform(2)).unwrap();
        let expect = [3.0, -2.0, 5.0, 2.25];
        for (o, e) in out.data().iter().zip(expect) {
            assert!((o - e).abs() < 1e-12);
        }
    }

    #[test]
    fn logits_zero_ln3_give_quarter_three_quarters() {
        let w = FusionWeights::from_logits(vec![0.0, 3f64.ln()]);
        let ws = w.weights();
        assert!((ws[0] - 0.25).abs() < 1e-12 && (ws[1] - 0.75).abs() < 1e-12);
        let t = two_layers();
        let out = fuse_layers(&t, &w).unwrap();
        let (a, b) = (t.layer(0), t.layer(1));
        for i in 0..4 {
            let e = 0.25 * a.data()[i] + 0.75 * b.data()[i];
            assert!((out.data()[i] - e).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_count_mismatch() {
        let err = fuse_layers(&two_layers(), &FusionWeights::uniform(3)).unwrap_err();
        assert!(matches!(err, FeatureError::LayerCountMismatch { expected: 2, found: 3 }));
    }

    #[test]
    fn softmax_is_stable_for_large_logits() {
        let w = softmax(&[1000.0, 1000.0]);
        assert_eq!(w, vec![0.5, 0.5]);
        let w = softmax(&[-1000.0, 0.0]);
        assert!(w.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn logit_gradient_matches_finite_differences() {
        let t = two_layers();
        let upstream = Matrix::from_rows(&[vec![0.3, -1.0], vec![2.0, 0.7]]);
        let w = FusionWeights::from_logits(vec![0.2, -0.4]);
        let f = |logits: &[f64]| {
            let out = fuse_layers(&t, &FusionWeights::from_logits(logits.to_vec())).unwrap();
            out.data().iter().zip(upstream.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        let g = fuse_layers_logit_grad(&t, &w, &upstream).unwrap();
        let h = 1e-6;
        for i in 0..2 {
            let mut p = w.logits.clone();
            let mut m = w.logits.clone();
            p[i] += h;
            m[i] -= h;
            let fd = (f(&p) - f(&m)) / (2.0 * h);
            assert!((fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-12) < 1e-4);
        }
    }

    proptest! {
        #[test]
        fn weights_sum_to_one_and_shift_invariant(
            logits in prop::collection::vec(-20.0f64..20.0, 1..16),
            shift in -50.0f64..50.0,
        ) {
            let w = softmax(&logits);
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(w.iter().all(|&v| v > 0.0));
            let shifted: Vec<f64> = logits.iter().map(|z| z + shift).collect();
            let w2 = softmax(&shifted);
            for (a, b) in w.iter().zip(&w2) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
