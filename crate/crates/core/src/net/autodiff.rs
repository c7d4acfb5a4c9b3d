//! Reverse-mode differentiation over a small set of matrix operations.
//!
//! A [`Tape`] records every operation as a node holding its value. Calling
//! [`Tape::backward`] on a `1 x 1` node walks the nodes in reverse and
//! returns the gradient of that scalar with respect to every parameter leaf.

use std::borrow::Cow;

use crate::features::{softmax, softmax_backward};
use crate::tensor::{gemm, Matrix};

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op<'a> {
    Constant,
    Param(usize),
    /// Softmax over the columns of a `1 x L` row.
    Softmax(Var),
    /// `sum_l w[l] * layers[l]` with `w` a `1 x L` node.
    LayerMix {
        weights: Var,
        layers: &'a [Matrix],
    },
    ConcatCols(Vec<Var>),
    /// Rows `p - K/2 ..= p + K/2` of the input side by side, zero outside.
    Unfold {
        x: Var,
        kernel: usize,
    },
    MatMul(Var, Var),
    AddBias(Var, Var),
    Relu(Var),
    Tanh(Var),
    /// Mean cross-entropy over rows that have a target.
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Matrix,
        count: usize,
    },
    /// `sum_i c_i * x_i` over `1 x 1` nodes.
    WeightedSum(Vec<(Var, f64)>),
}

struct Node<'a> {
    value: Cow<'a, Matrix>,
    op: Op<'a>,
}

#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, value: Cow<'a, Matrix>, op: Op<'a>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn constant(&mut self, m: Cow<'a, Matrix>) -> Var {
        self.push(m, Op::Constant)
    }

    /// A differentiable leaf; `id` keys its gradient in [`Tape::backward`].
    pub fn param(&mut self, id: usize, m: &'a Matrix) -> Var {
        self.push(Cow::Borrowed(m), Op::Param(id))
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let v = self.value(x);
        assert_eq!(v.rows(), 1, "softmax expects a row vector");
        let out = Matrix::row_vector(softmax(v.data()));
        self.push(Cow::Owned(out), Op::Softmax(x))
    }

    pub fn layer_mix(&mut self, weights: Var, layers: &'a [Matrix]) -> Var {
        let w = self.value(weights);
        assert_eq!((w.rows(), w.cols()), (1, layers.len()), "one weight per layer");
        let out = crate::features::mix_layers(layers, w.data());
        self.push(Cow::Owned(out), Op::LayerMix { weights, layers })
    }

    pub fn concat_cols(&mut self, parts: Vec<Var>) -> Var {
        let mut out = self.value(parts[0]).clone();
        for p in &parts[1..] {
            out = out.concat_cols(self.value(*p));
        }
        self.push(Cow::Owned(out), Op::ConcatCols(parts))
    }

    pub fn unfold(&mut self, x: Var, kernel: usize) -> Var {
        assert!(kernel % 2 == 1, "kernel size must be odd");
        let v = self.value(x);
        let (p, c) = v.shape();
        let half = kernel / 2;
        let mut out = Matrix::zeros(p, kernel * c);
        for r in 0..p {
            let row = out.row_mut(r);
            for k in 0..kernel {
                let src = r + k;
                if src < half || src - half >= p {
                    continue;
                }
                row[k * c..(k + 1) * c].copy_from_slice(v.row(src - half));
            }
        }
        self.push(Cow::Owned(out), Op::Unfold { x, kernel })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let mut out = Matrix::zeros(va.rows(), vb.cols());
        gemm(va, false, vb, false, &mut out, 0.0);
        self.push(Cow::Owned(out), Op::MatMul(a, b))
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Var {
        let (vx, vb) = (self.value(x), self.value(bias));
        assert_eq!((vb.rows(), vb.cols()), (1, vx.cols()), "bias shape");
        let mut out = vx.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(vb.data()) {
                *o += b;
            }
        }
        self.push(Cow::Owned(out), Op::AddBias(x, bias))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push(Cow::Owned(out), Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::tanh);
        self.push(Cow::Owned(out), Op::Tanh(x))
    }

    /// Mean cross-entropy over the rows whose target is `Some`. Panics if no
    /// row has a target; callers check the mask first.
    pub fn cross_entropy(&mut self, logits: Var, targets: Vec<Option<usize>>) -> Var {
        let v = self.value(logits);
        assert_eq!(v.rows(), targets.len(), "one target slot per row");
        let (probs, total, count) = super::loss::masked_cross_entropy(v, &targets);
        assert!(count > 0, "cross-entropy over an empty mask");
        self.push(
            Cow::Owned(Matrix::from_vec(1, 1, vec![total / count as f64])),
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                count,
            },
        )
    }

    pub fn weighted_sum(&mut self, terms: Vec<(Var, f64)>) -> Var {
        let s = terms.iter().map(|&(v, c)| c * self.value(v).get(0, 0)).sum();
        self.push(Cow::Owned(Matrix::from_vec(1, 1, vec![s])), Op::WeightedSum(terms))
    }

    /// Gradients of the scalar `root` for parameter ids `0..num_params`.
    /// Parameters absent from the tape get `None`.
    pub fn backward(&self, root: Var, num_params: usize) -> Vec<Option<Matrix>> {
        assert_eq!(self.value(root).shape(), (1, 1), "backward needs a scalar root");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Matrix::from_vec(1, 1, vec![1.0]));
        let mut out: Vec<Option<Matrix>> = (0..num_params).map(|_| None).collect();

        fn acc(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_scaled(&g, 1.0),
                slot => *slot = Some(g),
            }
        }

        for i in (0..self.nodes.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => match &mut out[*id] {
                    Some(existing) => existing.add_scaled(&g, 1.0),
                    slot => *slot = Some(g),
                },
                Op::Softmax(x) => {
                    let d = softmax_backward(node.value.data(), g.data());
                    acc(&mut grads, *x, Matrix::row_vector(d));
                }
                Op::LayerMix { weights, layers } => {
                    let d: Vec<f64> = layers
                        .iter()
                        .map(|l| l.data().iter().zip(g.data()).map(|(a, b)| a * b).sum())
                        .collect();
                    acc(&mut grads, *weights, Matrix::row_vector(d));
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let cols = self.value(*p).cols();
                        let mut part = Matrix::zeros(g.rows(), cols);
                        for r in 0..g.rows() {
                            part.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + cols]);
                        }
                        offset += cols;
                        acc(&mut grads, *p, part);
                    }
                }
                Op::Unfold { x, kernel } => {
                    let (p, c) = self.value(*x).shape();
                    let half = kernel / 2;
                    let mut dx = Matrix::zeros(p, c);
                    for r in 0..p {
                        for k in 0..*kernel {
                            let src = r + k;
                            if src < half || src - half >= p {
                                continue;
                            }
                            let from = &g.row(r)[k * c..(k + 1) * c];
                            for (d, s) in dx.row_mut(src - half).iter_mut().zip(from) {
                                *d += s;
                            }
                        }
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::MatMul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    if self.needs_grad(*a) {
                        let mut da = Matrix::zeros(va.rows(), va.cols());
                        gemm(&g, false, vb, true, &mut da, 0.0);
                        acc(&mut grads, *a, da);
                    }
                    if self.needs_grad(*b) {
                        let mut db = Matrix::zeros(vb.rows(), vb.cols());
                        gemm(va, true, &g, false, &mut db, 0.0);
                        acc(&mut grads, *b, db);
                    }
                }
                Op::AddBias(x, bias) => {
                    let mut db = vec![0.0; g.cols()];
                    for r in 0..g.rows() {
                        for (d, v) in db.iter_mut().zip(g.row(r)) {
                            *d += v;
                        }
                    }
                    acc(&mut grads, *bias, Matrix::row_vector(db));
                    acc(&mut grads, *x, g);
                }
                Op::Relu(x) => {
                    let mut d = g;
                    for (dv, v) in d.data_mut().iter_mut().zip(node.value.data()) {
                        if *v <= 0.0 {
                            *dv = 0.0;
                        }
                    }
                    acc(&mut grads, *x, d);
                }
                Op::Tanh(x) => {
                    let mut d = g;
                    for (dv, v) in d.data_mut().iter_mut().zip(node.value.data()) {
                        *dv *= 1.0 - v * v;
                    }
                    acc(&mut grads, *x, d);
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                    count,
                } => {
                    let scale = g.get(0, 0) / *count as f64;
                    let mut d = Matrix::zeros(probs.rows(), probs.cols());
                    for (r, t) in targets.iter().enumerate() {
                        if let Some(t) = t {
                            let row = d.row_mut(r);
                            row.copy_from_slice(probs.row(r));
                            row[*t] -= 1.0;
                            for v in row.iter_mut() {
                                *v *= scale;
                            }
                        }
                    }
                    acc(&mut grads, *logits, d);
                }
                Op::WeightedSum(terms) => {
                    let s = g.get(0, 0);
                    for &(v, c) in terms {
                        acc(&mut grads, v, Matrix::from_vec(1, 1, vec![c * s]));
                    }
                }
            }
        }
        out
    }

    fn needs_grad(&self, v: Var) -> bool {
        !matches!(self.nodes[v.0].op, Op::Constant)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn numeric(f: impl Fn(&Matrix) -> f64, at: &Matrix) -> Matrix {
        let h = 1e-6;
        let mut g = Matrix::zeros(at.rows(), at.cols());
        for i in 0..at.data().len() {
            let mut p = at.clone();
            p.data_mut()[i] += h;
            let mut m = at.clone();
            m.data_mut()[i] -= h;
            g.data_mut()[i] = (f(&p) - f(&m)) / (2.0 * h);
        }
        g
    }

    fn close(a: &Matrix, b: &Matrix) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= 1e-6 * (1.0 + x.abs().max(y.abs())), "{x} vs {y}");
        }
    }

    #[test]
    fn conv_block_gradients() {
        let x = Matrix::from_rows(&[vec![0.3, -1.0], vec![0.5, 0.2], vec![-0.7, 0.9]]);
        let w0 = Matrix::from_vec(6, 2, (0..12).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.3).collect());
        let b0 = Matrix::row_vector(vec![0.1, -0.2]);
        let loss = |x: &Matrix, w: &Matrix, b: &Matrix| {
            let mut t = Tape::new();
            let xv = t.constant(Cow::Owned(x.clone()));
            let wv = t.param(0, w);
            let bv = t.param(1, b);
            let u = t.unfold(xv, 3);
            let h = t.matmul(u, wv);
            let h = t.add_bias(h, bv);
            let h = t.relu(h);
            let h = t.tanh(h);
            let ce = t.cross_entropy(h, vec![Some(1), None, Some(0)]);
            let root = t.weighted_sum(vec![(ce, 2.0)]);
            let v = t.value(root).get(0, 0);
            (v, t.backward(root, 2))
        };
        let (_, g) = loss(&x, &w0, &b0);
        close(g[0].as_ref().unwrap(), &numeric(|w| loss(&x, w, &b0).0, &w0));
        close(g[1].as_ref().unwrap(), &numeric(|b| loss(&x, &w0, b).0, &b0));
    }

    #[test]
    fn mix_and_concat_gradients() {
        let layers = vec![
            Matrix::from_rows(&[vec![1.0, 2.0], vec![0.5, -1.0]]),
            Matrix::from_rows(&[vec![-1.0, 0.0], vec![2.0, 1.5]]),
            Matrix::from_rows(&[vec![0.2, 0.3], vec![-0.4, 0.8]]),
        ];
        let other = Matrix::from_rows(&[vec![0.7], vec![-0.3]]);
        let logits0 = Matrix::row_vector(vec![0.1, -0.5, 0.3]);
        let f = |logits: &Matrix| {
            let mut t = Tape::new();
            let l = t.param(0, logits);
            let w = t.softmax(l);
            let m = t.layer_mix(w, &layers);
            let o = t.constant(Cow::Borrowed(&other));
            let c = t.concat_cols(vec![m, o]);
            let ce = t.cross_entropy(c, vec![Some(2), Some(0)]);
            (t.value(ce).get(0, 0), t.backward(ce, 1))
        };
        let (_, g) = f(&logits0);
        close(g[0].as_ref().unwrap(), &numeric(|l| f(l).0, &logits0));
    }

    #[test]
    fn unused_params_have_no_gradient() {
        let a = Matrix::from_vec(1, 2, vec![1.0, 2.0]);
        let mut t = Tape::new();
        let v = t.param(1, &a);
        let ce = t.cross_entropy(v, vec![Some(0)]);
        let g = t.backward(ce, 3);
        assert!(g[0].is_none() && g[2].is_none());
        assert!(g[1].is_some());
    }
}
