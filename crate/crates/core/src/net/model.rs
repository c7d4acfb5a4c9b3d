use std::borrow::Cow;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::autodiff::{Tape, Var};
use super::NetError;
use crate::corpus::Task;
use crate::features::{FusionWeights, PhonemeLayers, StreamWeights};
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub conv_layers: usize,
    pub hidden: usize,
    pub kernel: usize,
    pub activation: Activation,
    /// Standardize each input layer with statistics from the training set.
    pub normalize_inputs: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            conv_layers: 6,
            hidden: 256,
            kernel: 5,
            activation: Activation::Relu,
            normalize_inputs: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        if self.conv_layers == 0 || self.hidden == 0 {
            return Err(NetError::InvalidConfig("conv_layers and hidden must be positive".into()));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(NetError::InvalidConfig(format!("kernel must be odd, got {}", self.kernel)));
        }
        Ok(())
    }
}

/// Shape of one input stream and the affine map applied to each of its
/// layers before fusion: `(x - mean[l]) / scale`. A single scale per stream
/// keeps the relative magnitudes of its layers intact.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamNorm {
    /// `layers x dim`.
    pub mean: Matrix,
    pub scale: f64,
}

impl StreamNorm {
    pub fn identity(layers: usize, dim: usize) -> Self {
        StreamNorm {
            mean: Matrix::zeros(layers, dim),
            scale: 1.0,
        }
    }

    pub fn layers(&self) -> usize {
        self.mean.rows()
    }

    pub fn dim(&self) -> usize {
        self.mean.cols()
    }

    /// Per-layer, per-dim mean over all rows of all samples, and the RMS of
    /// the centered values over the whole stream (1 when it is constant).
    pub fn fit<'a>(samples: impl Iterator<Item = &'a [Matrix]> + Clone) -> Result<Self, NetError> {
        let first = samples
            .clone()
            .next()
            .ok_or_else(|| NetError::InvalidConfig("no samples to fit input statistics".into()))?;
        let (layers, dim) = (first.len(), first[0].cols());
        let mut sum = Matrix::zeros(layers, dim);
        let mut rows = 0usize;
        for s in samples.clone() {
            check_layers(s, layers, dim)?;
            for (l, m) in s.iter().enumerate() {
                for r in 0..m.rows() {
                    for (a, b) in sum.row_mut(l).iter_mut().zip(m.row(r)) {
                        *a += b;
                    }
                }
            }
            rows += s[0].rows();
        }
        if rows == 0 {
            return Err(NetError::InvalidConfig("no rows to fit input statistics".into()));
        }
        let mean = sum.map(|v| v / rows as f64);
        let mut sq = 0.0;
        for s in samples {
            for (l, m) in s.iter().enumerate() {
                for r in 0..m.rows() {
                    for (v, mu) in m.row(r).iter().zip(mean.row(l)) {
                        sq += (v - mu) * (v - mu);
                    }
                }
            }
        }
        let rms = (sq / (rows * dim * layers) as f64).sqrt();
        Ok(StreamNorm {
            mean,
            scale: if rms > 1e-12 { rms } else { 1.0 },
        })
    }

    fn apply(&self, layers: &[Matrix]) -> Vec<Matrix> {
        layers
            .iter()
            .enumerate()
            .map(|(l, m)| {
                let mut out = m.clone();
                for r in 0..out.rows() {
                    for (v, mu) in out.row_mut(r).iter_mut().zip(self.mean.row(l)) {
                        *v = (*v - mu) / self.scale;
                    }
                }
                out
            })
            .collect()
    }
}

fn check_layers(layers: &[Matrix], expected_layers: usize, dim: usize) -> Result<(), NetError> {
    if layers.len() != expected_layers {
        return Err(NetError::DimMismatch(format!(
            "stream has {} layers, model expects {expected_layers}",
            layers.len()
        )));
    }
    if let Some(m) = layers.iter().find(|m| m.cols() != dim) {
        return Err(NetError::DimMismatch(format!(
            "stream has dim {}, model expects {dim}",
            m.cols()
        )));
    }
    Ok(())
}

/// Input streams the model was built for.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct InputSpec {
    pub acoustic: Option<StreamNorm>,
    pub linguistic: Option<StreamNorm>,
}

impl InputSpec {
    pub fn in_dim(&self) -> usize {
        self.acoustic.as_ref().map_or(0, StreamNorm::dim) + self.linguistic.as_ref().map_or(0, StreamNorm::dim)
    }

    /// Fits normalization statistics, or identity maps when `normalize` is
    /// false.
    pub fn fit(samples: &[&PhonemeLayers], normalize: bool) -> Result<Self, NetError> {
        let first = samples
            .first()
            .ok_or_else(|| NetError::InvalidConfig("no training samples".into()))?;
        let stream = |get: fn(&PhonemeLayers) -> &[Matrix]| -> Result<Option<StreamNorm>, NetError> {
            let layers = get(first);
            if layers.is_empty() {
                return Ok(None);
            }
            if normalize {
                StreamNorm::fit(samples.iter().map(|s| get(s))).map(Some)
            } else {
                Ok(Some(StreamNorm::identity(layers.len(), layers[0].cols())))
            }
        };
        let spec = InputSpec {
            acoustic: stream(|s| &s.acoustic)?,
            linguistic: stream(|s| &s.linguistic)?,
        };
        if spec.in_dim() == 0 {
            return Err(NetError::InvalidConfig("no input streams".into()));
        }
        Ok(spec)
    }
}

/// Phoneme-level layers after normalization, ready for the graph.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedInput {
    pub rows: usize,
    acoustic: Vec<Matrix>,
    linguistic: Vec<Matrix>,
}

/// Convolutional trunk with four affine heads and per-stream fusion logits.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnotatorModel {
    pub config: ModelConfig,
    pub input: InputSpec,
    names: Vec<String>,
    params: Vec<Matrix>,
}

pub const FUSION_ACOUSTIC: &str = "fusion.acoustic";
pub const FUSION_LINGUISTIC: &str = "fusion.linguistic";

fn param_layout(config: &ModelConfig, input: &InputSpec) -> Vec<(String, usize, usize)> {
    let mut out = Vec::new();
    if let Some(a) = &input.acoustic {
        out.push((FUSION_ACOUSTIC.to_owned(), 1, a.layers()));
    }
    if let Some(l) = &input.linguistic {
        out.push((FUSION_LINGUISTIC.to_owned(), 1, l.layers()));
    }
    let mut c_in = input.in_dim();
    for i in 0..config.conv_layers {
        out.push((format!("conv{i}.weight"), config.kernel * c_in, config.hidden));
        out.push((format!("conv{i}.bias"), 1, config.hidden));
        c_in = config.hidden;
    }
    for t in Task::ALL {
        out.push((format!("head.{}.weight", t.name()), config.hidden, t.num_classes()));
        out.push((format!("head.{}.bias", t.name()), 1, t.num_classes()));
    }
    out
}

impl AnnotatorModel {
    /// He-uniform weights from `seed`, zero biases and zero fusion logits.
    pub fn new(config: ModelConfig, input: InputSpec, seed: u64) -> Result<Self, NetError> {
        config.validate()?;
        if input.in_dim() == 0 {
            return Err(NetError::InvalidConfig("model needs at least one input stream".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::new();
        let mut params = Vec::new();
        for (name, rows, cols) in param_layout(&config, &input) {
            let m = if name.ends_with(".weight") {
                let bound = (6.0 / rows as f64).sqrt();
                Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect())
            } else {
                Matrix::zeros(rows, cols)
            };
            names.push(name);
            params.push(m);
        }
        Ok(AnnotatorModel {
            config,
            input,
            names,
            params,
        })
    }

    /// Rebuilds a model from named parameters, checking names and shapes.
    pub fn from_params(config: ModelConfig, input: InputSpec, named: Vec<(String, Matrix)>) -> Result<Self, NetError> {
        config.validate()?;
        let layout = param_layout(&config, &input);
        if layout.len() != named.len() {
            return Err(NetError::DimMismatch(format!(
                "expected {} parameters, found {}",
                layout.len(),
                named.len()
            )));
        }
        let mut names = Vec::new();
        let mut params = Vec::new();
        for ((name, rows, cols), (n, m)) in layout.into_iter().zip(named) {
            if name != n || m.shape() != (rows, cols) {
                return Err(NetError::DimMismatch(format!(
                    "parameter {n} {:?} does not match expected {name} {:?}",
                    m.shape(),
                    (rows, cols)
                )));
            }
            names.push(name);
            params.push(m);
        }
        Ok(AnnotatorModel {
            config,
            input,
            names,
            params,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.input.in_dim()
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Matrix] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Matrix] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Matrix> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    pub fn num_weights(&self) -> usize {
        self.params.iter().map(|p| p.data().len()).sum()
    }

    pub fn fusion_weights(&self) -> StreamWeights {
        let get = |name| self.param(name).map(|m| FusionWeights::from_logits(m.data().to_vec()));
        StreamWeights {
            acoustic: get(FUSION_ACOUSTIC),
            linguistic: get(FUSION_LINGUISTIC),
        }
    }

    /// Checks the layers against the model's input spec and normalizes them.
    pub fn prepare(&self, layers: &PhonemeLayers) -> Result<PreparedInput, NetError> {
        let rows = layers
            .acoustic
            .first()
            .or(layers.linguistic.first())
            .map(Matrix::rows)
            .ok_or_else(|| NetError::DimMismatch("no input layers".into()))?;
        let stream = |norm: &Option<StreamNorm>, given: &[Matrix], what: &str| -> Result<Vec<Matrix>, NetError> {
            match norm {
                None if given.is_empty() => Ok(Vec::new()),
                None => Err(NetError::DimMismatch(format!("model has no {what} stream"))),
                Some(n) => {
                    check_layers(given, n.layers(), n.dim())?;
                    if given.iter().any(|m| m.rows() != rows) {
                        return Err(NetError::DimMismatch(format!("{what} rows differ from phoneme count")));
                    }
                    Ok(n.apply(given))
                }
            }
        };
        Ok(PreparedInput {
            rows,
            acoustic: stream(&self.input.acoustic, &layers.acoustic, "acoustic")?,
            linguistic: stream(&self.input.linguistic, &layers.linguistic, "linguistic")?,
        })
    }

    fn id(&self, name: &str) -> usize {
        self.names.iter().position(|n| n == name).expect("parameter in layout")
    }

    /// Trunk and heads on an assembled input node.
    pub fn trunk_graph<'a>(&'a self, tape: &mut Tape<'a>, input: Var) -> [Var; 4] {
        let mut h = input;
        for i in 0..self.config.conv_layers {
            let u = tape.unfold(h, self.config.kernel);
            let w = tape.param(self.id(&format!("conv{i}.weight")), &self.params[self.id(&format!("conv{i}.weight"))]);
            let b = tape.param(self.id(&format!("conv{i}.bias")), &self.params[self.id(&format!("conv{i}.bias"))]);
            let z = tape.matmul(u, w);
            let z = tape.add_bias(z, b);
            h = match self.config.activation {
                Activation::Relu => tape.relu(z),
                Activation::Tanh => tape.tanh(z),
            };
        }
        Task::ALL.map(|t| {
            let wn = format!("head.{}.weight", t.name());
            let bn = format!("head.{}.bias", t.name());
            let w = tape.param(self.id(&wn), &self.params[self.id(&wn)]);
            let b = tape.param(self.id(&bn), &self.params[self.id(&bn)]);
            let z = tape.matmul(h, w);
            tape.add_bias(z, b)
        })
    }

    /// Fusion, concatenation, trunk and heads.
    pub fn graph<'a>(&'a self, tape: &mut Tape<'a>, x: &'a PreparedInput) -> [Var; 4] {
        let mut parts = Vec::new();
        for (layers, name) in [(&x.acoustic, FUSION_ACOUSTIC), (&x.linguistic, FUSION_LINGUISTIC)] {
            if layers.is_empty() {
                continue;
            }
            let id = self.id(name);
            let logits = tape.param(id, &self.params[id]);
            let w = tape.softmax(logits);
            parts.push(tape.layer_mix(w, layers));
        }
        let input = if parts.len() == 1 { parts[0] } else { tape.concat_cols(parts) };
        self.trunk_graph(tape, input)
    }

    /// Logits for an already assembled `P x in_dim` input.
    pub fn forward(&self, input: &Matrix) -> Result<[Matrix; 4], NetError> {
        if input.cols() != self.in_dim() || input.rows() == 0 {
            return Err(NetError::DimMismatch(format!(
                "input is {}x{}, model expects P x {} with P >= 1",
                input.rows(),
                input.cols(),
                self.in_dim()
            )));
        }
        let mut tape = Tape::new();
        let x = tape.constant(Cow::Borrowed(input));
        let out = self.trunk_graph(&mut tape, x);
        Ok(out.map(|v| tape.value(v).clone()))
    }

    /// Logits for prepared phoneme-level layers.
    pub fn forward_prepared(&self, x: &PreparedInput) -> [Matrix; 4] {
        let mut tape = Tape::new();
        let out = self.graph(&mut tape, x);
        out.map(|v| tape.value(v).clone())
    }

    /// The classifier input that [`forward`](Self::forward) expects for these
    /// layers.
    pub fn assemble(&self, x: &PreparedInput) -> Matrix {
        let mut tape = Tape::new();
        let mut parts = Vec::new();
        for (layers, name) in [(&x.acoustic, FUSION_ACOUSTIC), (&x.linguistic, FUSION_LINGUISTIC)] {
            if layers.is_empty() {
                continue;
            }
            let id = self.id(name);
            let logits = tape.param(id, &self.params[id]);
            let w = tape.softmax(logits);
            parts.push(tape.layer_mix(w, layers));
        }
        let v = if parts.len() == 1 { parts[0] } else { tape.concat_cols(parts) };
        tape.value(v).clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(aco: Option<(usize, usize)>, ling: Option<(usize, usize)>) -> InputSpec {
        InputSpec {
            acoustic: aco.map(|(l, d)| StreamNorm::identity(l, d)),
            linguistic: ling.map(|(l, d)| StreamNorm::identity(l, d)),
        }
    }

    #[test]
    fn shapes_and_parameter_count() {
        let m = AnnotatorModel::new(ModelConfig::default(), spec(Some((3, 10)), Some((1, 62))), 1).unwrap();
        let d = 72;
        let expected = 3 + 1 + (5 * d * 256 + 256) + 5 * (5 * 256 * 256 + 256) + 16 * 256 + 16;
        assert_eq!(m.num_weights(), expected);
        let out = m.forward(&Matrix::zeros(1, d)).unwrap();
        for (t, o) in Task::ALL.iter().zip(&out) {
            assert_eq!(o.shape(), (1, t.num_classes()));
            assert!(o.is_finite());
        }
        assert!(m.forward(&Matrix::zeros(4, d + 1)).is_err());
        assert!(m.forward(&Matrix::zeros(0, d)).is_err());
    }

    #[test]
    fn zero_heads_give_uniform_logits() {
        let mut m = AnnotatorModel::new(ModelConfig::default(), spec(None, Some((1, 8))), 2).unwrap();
        let names = m.param_names().to_vec();
        for (n, p) in names.iter().zip(m.params_mut()) {
            if n.starts_with("head.") {
                *p = Matrix::zeros(p.rows(), p.cols());
            }
        }
        let out = m.forward(&Matrix::zeros(3, 8)).unwrap();
        assert!(out.iter().all(|o| o.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn seeded_init_is_deterministic() {
        let a = AnnotatorModel::new(ModelConfig::default(), spec(Some((2, 4)), None), 5).unwrap();
        let b = AnnotatorModel::new(ModelConfig::default(), spec(Some((2, 4)), None), 5).unwrap();
        let c = AnnotatorModel::new(ModelConfig::default(), spec(Some((2, 4)), None), 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn prepared_forward_matches_assembled_forward() {
        let cfg = ModelConfig {
            conv_layers: 2,
            hidden: 8,
            ..ModelConfig::default()
        };
        let mut m = AnnotatorModel::new(cfg, spec(Some((2, 3)), Some((1, 2))), 3).unwrap();
        m.params_mut()[0] = Matrix::row_vector(vec![0.3, -0.2]);
        let layers = PhonemeLayers {
            acoustic: vec![
                Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![0.0, -1.0, 0.5]]),
                Matrix::from_rows(&[vec![-1.0, 0.0, 1.0], vec![2.0, 2.0, 2.0]]),
            ],
            linguistic: vec![Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]])],
        };
        let x = m.prepare(&layers).unwrap();
        let a = m.forward_prepared(&x);
        let b = m.forward(&m.assemble(&x)).unwrap();
        assert_eq!(a, b);
        let bad = PhonemeLayers {
            acoustic: layers.acoustic[..1].to_vec(),
            linguistic: layers.linguistic.clone(),
        };
        assert!(matches!(m.prepare(&bad), Err(NetError::DimMismatch(_))));
    }

    #[test]
    fn normalization_statistics() {
        let a = vec![Matrix::from_rows(&[vec![1.0, 10.0], vec![3.0, 10.0]])];
        let b = vec![Matrix::from_rows(&[vec![5.0, 10.0]])];
        let n = StreamNorm::fit([a.as_slice(), b.as_slice()].into_iter()).unwrap();
        assert_eq!(n.mean.data(), &[3.0, 10.0]);
        let rms = ((4.0 + 0.0 + 4.0) / 6.0f64).sqrt();
        assert!((n.scale - rms).abs() < 1e-15);
        let two = vec![a[0].clone(), a[0].map(|v| 3.0 * v)];
        let n = StreamNorm::fit([two.as_slice()].into_iter()).unwrap();
        assert_eq!(n.mean.row(1), &[6.0, 30.0]);
        assert!((n.scale - ((1.0 + 1.0 + 9.0 + 9.0) / 8.0f64).sqrt()).abs() < 1e-15);
        let constant = vec![Matrix::from_rows(&[vec![2.0], vec![2.0]])];
        let n = StreamNorm::fit([constant.as_slice()].into_iter()).unwrap();
        assert_eq!(n.scale, 1.0);
    }
}
