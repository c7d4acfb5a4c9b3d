use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::autodiff::Tape;
use super::loss::task_targets;
use super::{decode, AdamConfig, AnnotatorModel, Checkpoint, InputSpec, ModelConfig, NetError, PreparedInput};
use crate::corpus::{Inventory, LabelBundle, Task, Utterance};
use crate::features::{load_streams, PhonemeLayers, StreamConfig};
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_steps: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Seeds parameter initialization and batch shuffling.
    pub seed: u64,
    /// Multipliers on the per-task losses before summing.
    pub task_weights: [f64; 4],
    /// Evaluate on the dev set every this many steps; 0 disables.
    pub eval_every: u64,
    /// Stop after this many evaluations without a new best.
    pub patience: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-5,
            batch_size: 4,
            max_steps: 100_000,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            task_weights: [1.0; 4],
            eval_every: 500,
            patience: None,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |m: &str| Err(NetError::InvalidConfig(m.to_owned()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return bad("Adam needs 0 <= beta < 1 and eps > 0");
        }
        if self.task_weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return bad("task weights must be finite and non-negative");
        }
        Ok(())
    }
}

/// One utterance's pooled layers with its gold labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub layers: PhonemeLayers,
    pub mask: Vec<bool>,
    pub labels: Option<Vec<LabelBundle>>,
}

/// Loads and pools the configured streams of every utterance. With
/// `require_labels`, unlabeled utterances and utterances without a
/// mora-core position are errors.
pub fn load_samples(
    utterances: &[Utterance],
    streams: &StreamConfig,
    base_dir: &Path,
    inventory: &Inventory,
    require_labels: bool,
) -> Result<Vec<Sample>, NetError> {
    utterances
        .par_iter()
        .map(|u| {
            if require_labels {
                if u.labels.is_none() {
                    return Err(NetError::Unlabeled(u.id.clone()));
                }
                if u.num_mora_cores() == 0 {
                    return Err(NetError::EmptyMask);
                }
            }
            let loaded = load_streams(u, streams, base_dir, inventory)?;
            let layers = PhonemeLayers::from_streams(u, &loaded).map_err(|e| crate::features::FeatureError::InUtterance {
                utterance: u.id.clone(),
                source: Box::new(e),
            })?;
            Ok(Sample {
                id: u.id.clone(),
                layers,
                mask: u.mora_core_mask(),
                labels: u.labels.clone(),
            })
        })
        .collect()
}

impl Checkpoint {
    /// Fits input statistics on `samples` and initializes a model from the
    /// training seed.
    pub fn for_samples(
        samples: &[Sample],
        streams: StreamConfig,
        model: ModelConfig,
        train: TrainConfig,
    ) -> Result<Self, NetError> {
        train.validate()?;
        streams.validate()?;
        let layers: Vec<&PhonemeLayers> = samples.iter().map(|s| &s.layers).collect();
        let input = InputSpec::fit(&layers, model.normalize_inputs)?;
        let model = AnnotatorModel::new(model, input, train.seed)?;
        Ok(Checkpoint::init(model, streams, train))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRow {
    pub step: u64,
    pub total: f64,
    pub per_task: [f64; 4],
}

impl LossRow {
    pub const CSV_HEADER: &'static str = "step,total,acc,hl,bi,pau";

    pub fn csv(&self) -> String {
        let [a, h, b, p] = self.per_task;
        format!("{},{},{},{},{},{}", self.step, self.total, a, h, b, p)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EvalRow {
    pub step: u64,
    pub accuracy: [f64; 4],
}

impl EvalRow {
    pub fn mean(&self) -> f64 {
        self.accuracy.iter().sum::<f64>() / 4.0
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub last: Checkpoint,
    /// Checkpoint with the best mean dev accuracy, or the last one without a
    /// dev set.
    pub best: Checkpoint,
    pub losses: Vec<LossRow>,
    pub evals: Vec<EvalRow>,
}

struct Prepared<'a> {
    sample: &'a Sample,
    input: PreparedInput,
    targets: [Vec<Option<usize>>; 4],
}

fn prepare<'a>(model: &AnnotatorModel, samples: &'a [Sample]) -> Result<Vec<Prepared<'a>>, NetError> {
    samples
        .iter()
        .map(|s| {
            let labels = s.labels.as_ref().ok_or_else(|| NetError::Unlabeled(s.id.clone()))?;
            if !s.mask.iter().any(|&m| m) {
                return Err(NetError::EmptyMask);
            }
            let mut targets: [Vec<Option<usize>>; 4] = Default::default();
            for t in Task::ALL {
                targets[t.index()] = task_targets(labels, &s.mask, t)?;
            }
            Ok(Prepared {
                sample: s,
                input: model.prepare(&s.layers)?,
                targets,
            })
        })
        .collect()
}

/// Loss and parameter gradients for one utterance.
fn sample_gradients(model: &AnnotatorModel, p: &Prepared, weights: [f64; 4]) -> (LossRow, Vec<Option<Matrix>>) {
    let mut tape = Tape::new();
    let logits = model.graph(&mut tape, &p.input);
    let mut terms = Vec::with_capacity(4);
    let mut per_task = [0.0; 4];
    for t in Task::ALL {
        let ce = tape.cross_entropy(logits[t.index()], p.targets[t.index()].clone());
        per_task[t.index()] = tape.value(ce).get(0, 0);
        terms.push((ce, weights[t.index()]));
    }
    let root = tape.weighted_sum(terms);
    let total = tape.value(root).get(0, 0);
    let grads = tape.backward(root, model.params().len());
    (LossRow { step: 0, total, per_task }, grads)
}

/// Full-graph loss and gradients of one labeled sample, for gradient checks.
pub fn loss_and_gradients(model: &AnnotatorModel, sample: &Sample, weights: [f64; 4]) -> Result<(f64, Vec<Option<Matrix>>), NetError> {
    let prepared = prepare(model, std::slice::from_ref(sample))?;
    let (row, grads) = sample_gradients(model, &prepared[0], weights);
    Ok((row.total, grads))
}

/// Per-task accuracy over mora-core positions.
pub fn evaluate(model: &AnnotatorModel, samples: &[Sample]) -> Result<[f64; 4], NetError> {
    let prepared = prepare(model, samples)?;
    Ok(accuracy(model, &prepared))
}

fn accuracy(model: &AnnotatorModel, prepared: &[Prepared]) -> [f64; 4] {
    let per_utt: Vec<([usize; 4], usize)> = prepared
        .par_iter()
        .map(|p| {
            let hyp = decode(&model.forward_prepared(&p.input), &p.sample.mask);
            let mut hits = [0usize; 4];
            let mut n = 0;
            for (pos, h) in hyp.iter().enumerate() {
                if !p.sample.mask[pos] {
                    continue;
                }
                n += 1;
                for t in Task::ALL {
                    if h.class_index(t) == p.targets[t.index()][pos] {
                        hits[t.index()] += 1;
                    }
                }
            }
            (hits, n)
        })
        .collect();
    let mut hits = [0usize; 4];
    let mut n = 0;
    for (h, c) in per_utt {
        for i in 0..4 {
            hits[i] += h[i];
        }
        n += c;
    }
    hits.map(|h| h as f64 / n.max(1) as f64)
}

/// Sample order for one pass over the data.
fn epoch_order(seed: u64, epoch: u64, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch + 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Runs Adam from `start` until `start.train.max_steps`, calling `on_step`
/// after every update. Per-utterance gradients are computed in parallel and
/// summed in batch order, so results do not depend on the thread count.
pub fn train(
    start: Checkpoint,
    train_set: &[Sample],
    dev_set: &[Sample],
    mut on_step: impl FnMut(&LossRow),
) -> Result<TrainOutcome, NetError> {
    let cfg = start.train.clone();
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(NetError::InvalidConfig("empty training set".into()));
    }
    let mut ckpt = start;
    let prepared = prepare(&ckpt.model, train_set)?;
    let dev = prepare(&ckpt.model, dev_set)?;
    let n = prepared.len();
    let per_epoch = n.div_ceil(cfg.batch_size) as u64;

    let mut losses = Vec::new();
    let mut evals = Vec::new();
    let mut best: Option<(f64, Checkpoint)> = None;
    let mut stale = 0u64;
    let mut order_epoch = u64::MAX;
    let mut order = Vec::new();

    while ckpt.step < cfg.max_steps {
        let epoch = ckpt.step / per_epoch;
        if epoch != order_epoch {
            order = epoch_order(cfg.seed, epoch, n);
            order_epoch = epoch;
        }
        let slot = (ckpt.step % per_epoch) as usize * cfg.batch_size;
        let batch = &order[slot..(slot + cfg.batch_size).min(n)];

        let model = &ckpt.model;
        let results: Vec<(LossRow, Vec<Option<Matrix>>)> = batch
            .par_iter()
            .map(|&i| sample_gradients(model, &prepared[i], cfg.task_weights))
            .collect();
        let scale = 1.0 / batch.len() as f64;
        let mut grads: Vec<Option<Matrix>> = vec![None; model.params().len()];
        let mut row = LossRow {
            step: ckpt.step + 1,
            total: 0.0,
            per_task: [0.0; 4],
        };
        for (r, g) in results {
            row.total += r.total * scale;
            for t in 0..4 {
                row.per_task[t] += r.per_task[t] * scale;
            }
            for (acc, gi) in grads.iter_mut().zip(g) {
                let Some(gi) = gi else { continue };
                match acc {
                    Some(a) => a.add_scaled(&gi, scale),
                    None => *acc = Some(gi.map(|v| v * scale)),
                }
            }
        }
        for (i, g) in grads.iter().enumerate() {
            if g.as_ref().is_some_and(|g| !g.is_finite()) || !row.total.is_finite() {
                return Err(NetError::NonFiniteGradient {
                    step: ckpt.step + 1,
                    param: model.param_names()[i].clone(),
                    utterances: batch.iter().map(|&b| prepared[b].sample.id.clone()).collect(),
                });
            }
        }
        ckpt.optimizer.step(ckpt.model.params_mut(), &grads);
        ckpt.step += 1;
        on_step(&row);
        losses.push(row);

        if cfg.eval_every > 0 && !dev.is_empty() && (ckpt.step.is_multiple_of(cfg.eval_every) || ckpt.step == cfg.max_steps) {
            let e = EvalRow {
                step: ckpt.step,
                accuracy: accuracy(&ckpt.model, &dev),
            };
            evals.push(e);
            if best.as_ref().is_none_or(|(b, _)| e.mean() > *b) {
                best = Some((e.mean(), ckpt.clone()));
                stale = 0;
            } else {
                stale += 1;
                if cfg.patience.is_some_and(|p| stale >= p) {
                    break;
                }
            }
        }
    }
    let best = best.map_or_else(|| ckpt.clone(), |(_, c)| c);
    Ok(TrainOutcome {
        last: ckpt,
        best,
        losses,
        evals,
    })
}
