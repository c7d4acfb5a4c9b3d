//! Independent reference computations shared by the integration tests and
//! the acceptance runner. Nothing here calls into the code it checks.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use prosolabel::corpus::{LabelBundle, Task};
use prosolabel::features::synth::{Plant, SynthConfig, CLASS_PRIORS};
use prosolabel::features::{AxisKind, FeatureTensor};
use prosolabel::tensor::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(r: &mut impl Rng) -> f64 {
    // Box-Muller, so the oracle does not share the generator's sampler.
    let u1: f64 = r.random_range(f64::EPSILON..1.0);
    let u2: f64 = r.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Slice-and-mean pooling of one `T x D` layer.
///
/// Frame `f` belongs to the phoneme whose cumulative duration interval holds
/// it; frames past the duration total belong to the last phoneme. A phoneme
/// that owns no frame copies the frame just before where it would start.
pub fn pool_oracle(layer: &[Vec<f64>], durations: &[u32]) -> Vec<Vec<f64>> {
    let t = layer.len();
    let d = layer[0].len();
    let mut starts = Vec::new();
    let mut acc = 0usize;
    for &dur in durations {
        starts.push(acc);
        acc += dur as usize;
    }
    let owner = |f: usize| -> usize {
        let mut p = 0;
        for (i, &s) in starts.iter().enumerate() {
            if durations[i] > 0 && f >= s {
                p = i;
            }
        }
        if f >= acc {
            durations.len() - 1
        } else {
            p
        }
    };
    let mut sums = vec![vec![0.0; d]; durations.len()];
    let mut counts = vec![0usize; durations.len()];
    for (f, row) in layer.iter().enumerate() {
        let p = owner(f);
        counts[p] += 1;
        for k in 0..d {
            sums[p][k] += row[k];
        }
    }
    (0..durations.len())
        .map(|p| {
            if counts[p] > 0 {
                sums[p].iter().map(|s| s / counts[p] as f64).collect()
            } else {
                let src = starts[p].min(t).saturating_sub(1).min(t - 1);
                layer[src].clone()
            }
        })
        .collect()
}

/// Random frame tensor and durations whose total is within two frames of T.
pub fn random_pool_case(r: &mut impl Rng) -> (FeatureTensor, Vec<u32>) {
    let p = r.random_range(1..8usize);
    let durations: Vec<u32> = (0..p).map(|_| r.random_range(0..6u32)).collect();
    let total: i64 = durations.iter().map(|&d| i64::from(d)).sum();
    let t = (total + r.random_range(-2..=2i64)).max(1) as usize;
    let l = r.random_range(1..4usize);
    let d = r.random_range(1..5usize);
    let data: Vec<f64> = (0..l * t * d).map(|_| r.random_range(-3.0..3.0)).collect();
    (FeatureTensor::new(l, t, d, AxisKind::Frame, data).unwrap(), durations)
}

pub fn layer_rows(t: &FeatureTensor, l: usize) -> Vec<Vec<f64>> {
    (0..t.steps())
        .map(|s| (0..t.dim()).map(|k| t.get(l, s, k)).collect())
        .collect()
}

/// Accuracy, per-class F1 and macro F1 counted position by position. Classes
/// with no reference and no hypothesis occurrence score zero and stay in the
/// average.
pub fn brute_force_scores(reference: &[usize], hypothesis: &[usize], k: usize) -> (f64, Vec<f64>, f64) {
    let n = reference.len();
    let correct = reference.iter().zip(hypothesis).filter(|(a, b)| a == b).count();
    let acc = if n == 0 { 0.0 } else { correct as f64 / n as f64 };
    let mut f1s = Vec::new();
    for c in 0..k {
        let mut tp = 0u64;
        let mut fp = 0u64;
        let mut fnn = 0u64;
        for (&r, &h) in reference.iter().zip(hypothesis) {
            match (r == c, h == c) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fnn += 1,
                _ => {}
            }
        }
        let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let rc = if tp + fnn == 0 { 0.0 } else { tp as f64 / (tp + fnn) as f64 };
        f1s.push(if p + rc == 0.0 { 0.0 } else { 2.0 * p * rc / (p + rc) });
    }
    let macro_f1 = f1s.iter().sum::<f64>() / k as f64;
    (acc, f1s, macro_f1)
}

/// Mean negative log-likelihood over rows with a target, by plain
/// log-sum-exp without shifting.
pub fn brute_cross_entropy(logits: &Matrix, targets: &[Option<usize>]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0;
    for (r, t) in targets.iter().enumerate() {
        if let Some(t) = t {
            let row = logits.row(r);
            let lse = row.iter().map(|v| v.exp()).sum::<f64>().ln();
            sum += lse - row[*t];
            n += 1;
        }
    }
    sum / n as f64
}

/// Central-difference relative error between analytic and numeric gradients,
/// as `||a - n|| / max(||a|| + ||n||, 1e-12)` over every parameter entry.
pub fn finite_difference_error(
    params: &mut [Matrix],
    analytic: &[Option<Matrix>],
    mut loss: impl FnMut(&[Matrix]) -> f64,
    h: f64,
) -> f64 {
    let mut diff2 = 0.0;
    let mut a2 = 0.0;
    let mut n2 = 0.0;
    for i in 0..params.len() {
        for j in 0..params[i].data().len() {
            let orig = params[i].data()[j];
            params[i].data_mut()[j] = orig + h;
            let up = loss(params);
            params[i].data_mut()[j] = orig - h;
            let down = loss(params);
            params[i].data_mut()[j] = orig;
            let num = (up - down) / (2.0 * h);
            let ana = analytic[i].as_ref().map_or(0.0, |g| g.data()[j]);
            diff2 += (ana - num).powi(2);
            a2 += ana * ana;
            n2 += num * num;
        }
    }
    diff2.sqrt() / (a2.sqrt() + n2.sqrt()).max(1e-12)
}

/// Per-task class guess from a pooled signal-layer vector: the class whose
/// planted direction is nearest.
pub fn nearest_class(plant: &Plant, task: Task, v: &[f64]) -> usize {
    let dirs = &plant.directions[task.index()];
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, dir) in dirs.iter().enumerate() {
        let d: f64 = dir.iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum();
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    best
}

/// Monte-Carlo accuracy of `nearest_class` under the generative model: class
/// from the prior, core duration uniform, and per-frame Gaussian noise that
/// averages down over the phoneme. Other tasks' directions are orthogonal to
/// this task's block, so only this task's block is simulated.
pub fn monte_carlo_nearest_accuracy(cfg: &SynthConfig, amplitude: f64, draws: usize, seed: u64) -> [f64; 4] {
    let mut r = rng(seed);
    Task::ALL.map(|task| {
        let priors = CLASS_PRIORS[task.index()];
        let k = priors.len();
        let mut hits = 0usize;
        for _ in 0..draws {
            let u: f64 = r.random();
            let mut c = 0;
            let mut cum = 0.0;
            for (i, p) in priors.iter().enumerate() {
                cum += p;
                if u < cum {
                    c = i;
                    break;
                }
                c = i;
            }
            let n = r.random_range(cfg.core_frames.0..=cfg.core_frames.1) as f64;
            let sd = cfg.noise / n.sqrt();
            let v: Vec<f64> = (0..k)
                .map(|i| if i == c { amplitude } else { 0.0 } + sd * gaussian(&mut r))
                .collect();
            let guess = (0..k).fold(0, |b, i| if v[i] > v[b] { i } else { b });
            hits += usize::from(guess == c);
        }
        hits as f64 / draws as f64
    })
}

pub fn bundle(indices: [usize; 4]) -> LabelBundle {
    LabelBundle::from_indices(indices).unwrap()
}

pub fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_prosolabel"))
}

pub fn run_cli(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

/// Mono 16-bit WAV written without the library's writer.
pub fn write_pcm_wav(path: &Path, samples: &[f64], rate: u32) {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).unwrap();
    for &s in samples {
        w.write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16).unwrap();
    }
    w.finalize().unwrap();
}

pub fn tone(freq: impl Fn(f64) -> f64, seconds: f64, rate: u32, amp: f64) -> Vec<f64> {
    let n = (seconds * rate as f64) as usize;
    let mut phase = 0.0f64;
    (0..n)
        .map(|i| {
            let s = amp * phase.sin();
            phase += 2.0 * std::f64::consts::PI * freq(i as f64 / rate as f64) / rate as f64;
            s
        })
        .collect()
}
