//! F0 estimation in the DIO style.
//!
//! The signal is low-cut filtered, then passed through a bank of Nuttall
//! low-pass filters whose cutoffs step up from the F0 floor in half-octave
//! increments. In each band the intervals between four event types
//! (downward and upward zero crossings, peaks and dips) give four F0 tracks;
//! their mean is the band's candidate and their relative spread its score.
//! A candidate only counts if it lies between half the band's cutoff and the
//! cutoff. The best-scoring candidate per frame then goes through the DIO
//! contour clean-up (jump removal, edge erosion, bidirectional extension)
//! and finally a normalized-autocorrelation period refinement.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{DspError, FrameGrid, Waveform};
use crate::features::{AxisKind, FeatureTensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct F0Config {
    pub floor: f64,
    pub ceil: f64,
    pub channels_per_octave: f64,
    /// Largest relative frame-to-frame change kept by the contour clean-up.
    pub allowed_range: f64,
    /// Candidates whose relative spread across the four event tracks
    /// exceeds this are discarded.
    pub max_spread: f64,
    /// Frames quieter than this fraction of the loudest frame's RMS are
    /// unvoiced.
    pub silence_ratio: f64,
    /// Minimum normalized autocorrelation for the refinement to replace
    /// the candidate.
    pub refine_min_corr: f64,
}

impl Default for F0Config {
    fn default() -> Self {
        F0Config {
            floor: 70.0,
            ceil: 400.0,
            channels_per_octave: 2.0,
            allowed_range: 0.1,
            max_spread: 0.2,
            silence_ratio: 1e-3,
            refine_min_corr: 0.5,
        }
    }
}

/// `1 x T x 2` contour: channel 0 is ln F0 (0 when unvoiced), channel 1 the
/// voiced flag.
pub fn estimate_f0(w: &Waveform, grid: FrameGrid, f0_floor: f64, f0_ceil: f64) -> Result<FeatureTensor, DspError> {
    estimate_f0_with(
        w,
        grid,
        &F0Config {
            floor: f0_floor,
            ceil: f0_ceil,
            ..F0Config::default()
        },
    )
}

pub fn estimate_f0_with(w: &Waveform, grid: FrameGrid, cfg: &F0Config) -> Result<FeatureTensor, DspError> {
    grid.check()?;
    if w.is_empty() {
        return Err(DspError::EmptyWaveform);
    }
    let fs = w.sample_rate() as f64;
    if !(cfg.floor > 0.0 && cfg.floor < cfg.ceil && cfg.ceil <= fs / 2.0) {
        return Err(DspError::BandError(format!(
            "need 0 < floor < ceil <= {}, got {}..{}",
            fs / 2.0,
            cfg.floor,
            cfg.ceil
        )));
    }
    if cfg.channels_per_octave <= 0.0 {
        return Err(DspError::BandError("channels_per_octave must be positive".into()));
    }
    let f0 = track(w, grid, cfg);
    let mut data = Vec::with_capacity(2 * f0.len());
    for v in f0 {
        if v > 0.0 {
            data.extend([v.ln(), 1.0]);
        } else {
            data.extend([0.0, 0.0]);
        }
    }
    let frames = data.len() / 2;
    FeatureTensor::new(1, frames, 2, AxisKind::Frame, data).map_err(|e| DspError::InvalidWaveform(e.to_string()))
}

/// Raw F0 per frame in Hz, 0 for unvoiced frames.
fn track(w: &Waveform, grid: FrameGrid, cfg: &F0Config) -> Vec<f64> {
    let fs = w.sample_rate() as f64;
    let frames = grid.num_frames(w.len());
    let x = low_cut(w.samples(), fs);
    let positions: Vec<f64> = (0..frames).map(|t| grid.center(t) as f64).collect();

    let n_bands = 1 + ((cfg.ceil / cfg.floor).log2() * cfg.channels_per_octave) as usize;
    let mut candidates = Vec::with_capacity(n_bands);
    let mut scores = Vec::with_capacity(n_bands);
    for b in 0..n_bands {
        let boundary = cfg.floor * 2f64.powf((b + 1) as f64 / cfg.channels_per_octave);
        let (c, s) = band_candidates(&x, fs, boundary, &positions, cfg);
        candidates.push(c);
        scores.push(s);
    }

    let mut best: Vec<f64> = (0..frames)
        .map(|t| {
            let mut f = 0.0;
            let mut s = f64::INFINITY;
            for b in 0..n_bands {
                if scores[b][t] < s {
                    s = scores[b][t];
                    f = candidates[b][t];
                }
            }
            if s <= cfg.max_spread {
                f
            } else {
                0.0
            }
        })
        .collect();

    let rms = frame_rms(w.samples(), grid);
    let loudest = rms.iter().copied().fold(0.0, f64::max);
    for (f, r) in best.iter_mut().zip(&rms) {
        if loudest == 0.0 || *r < cfg.silence_ratio * loudest {
            *f = 0.0;
        }
    }

    let frame_ms = 1000.0 * grid.hop as f64 / fs;
    let fixed = fix_contour(&best, &candidates, frame_ms, cfg);
    fixed
        .iter()
        .enumerate()
        .map(|(t, &f)| {
            if f > 0.0 && rms[t] >= cfg.silence_ratio * loudest && loudest > 0.0 {
                refine(&x, fs, positions[t], f, grid.window, cfg)
            } else {
                0.0
            }
        })
        .collect()
}

fn frame_rms(x: &[f64], grid: FrameGrid) -> Vec<f64> {
    let half = grid.window as isize / 2;
    (0..grid.num_frames(x.len()))
        .map(|t| {
            let c = grid.center(t) as isize;
            let lo = (c - half).max(0) as usize;
            let hi = ((c + half) as usize).min(x.len());
            if hi <= lo {
                return 0.0;
            }
            (x[lo..hi].iter().map(|v| v * v).sum::<f64>() / (hi - lo) as f64).sqrt()
        })
        .collect()
}

/// Linear convolution trimmed to the input length, with the kernel centered
/// at index `delay`.
fn convolve_same(x: &[f64], kernel: &[f64], delay: usize) -> Vec<f64> {
    let n = (x.len() + kernel.len()).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut a: Vec<Complex<f64>> = (0..n).map(|i| Complex::new(x.get(i).copied().unwrap_or(0.0), 0.0)).collect();
    let mut b: Vec<Complex<f64>> = (0..n)
        .map(|i| Complex::new(kernel.get(i).copied().unwrap_or(0.0), 0.0))
        .collect();
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (u, v) in a.iter_mut().zip(&b) {
        *u *= v;
    }
    inv.process(&mut a);
    let scale = 1.0 / n as f64;
    (0..x.len()).map(|i| a[i + delay].re * scale).collect()
}

/// Removes components below roughly 50 Hz by subtracting a Hann-smoothed
/// copy of the signal.
fn low_cut(x: &[f64], fs: f64) -> Vec<f64> {
    let half = (fs / 50.0).round() as usize;
    let n = 2 * half + 1;
    let mut h: Vec<f64> = (1..=n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (n + 1) as f64).cos())
        .collect();
    let total: f64 = h.iter().sum();
    for v in &mut h {
        *v = -*v / total;
    }
    h[half] += 1.0;
    convolve_same(x, &h, half)
}

fn nuttall(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| {
            let t = i as f64 / (n - 1) as f64;
            0.355768 - 0.487396 * (2.0 * PI * t).cos() + 0.144232 * (4.0 * PI * t).cos()
                - 0.012604 * (6.0 * PI * t).cos()
        })
        .collect()
}

/// Locations (in samples) and frequencies (Hz) from successive downward
/// zero crossings of `y`.
fn crossing_intervals(y: &[f64], fs: f64) -> (Vec<f64>, Vec<f64>) {
    let edges: Vec<f64> = y
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[0] > 0.0 && w[1] <= 0.0)
        .map(|(i, w)| i as f64 + w[0] / (w[0] - w[1]))
        .collect();
    let mut locs = Vec::with_capacity(edges.len().saturating_sub(1));
    let mut freqs = Vec::with_capacity(edges.len().saturating_sub(1));
    for e in edges.windows(2) {
        locs.push(0.5 * (e[0] + e[1]));
        freqs.push(fs / (e[1] - e[0]));
    }
    (locs, freqs)
}

/// Piecewise-linear interpolation; `None` outside the sampled range.
fn interp(xs: &[f64], ys: &[f64], at: f64) -> Option<f64> {
    if xs.len() < 2 || at < xs[0] || at > xs[xs.len() - 1] {
        return None;
    }
    let k = xs.partition_point(|&v| v <= at).clamp(1, xs.len() - 1);
    let (x0, x1) = (xs[k - 1], xs[k]);
    let (y0, y1) = (ys[k - 1], ys[k]);
    if x1 == x0 {
        return Some(y0);
    }
    Some(y0 + (y1 - y0) * (at - x0) / (x1 - x0))
}

/// Candidate F0 and relative spread per frame for one low-pass band.
fn band_candidates(x: &[f64], fs: f64, boundary: f64, positions: &[f64], cfg: &F0Config) -> (Vec<f64>, Vec<f64>) {
    let half_avg = (fs / boundary / 2.0).round().max(1.0) as usize;
    let kernel = nuttall(half_avg * 4);
    let filtered = convolve_same(x, &kernel, half_avg * 2);
    let neg: Vec<f64> = filtered.iter().map(|v| -v).collect();
    let slope: Vec<f64> = filtered.windows(2).map(|w| w[0] - w[1]).collect();
    let neg_slope: Vec<f64> = slope.iter().map(|v| -v).collect();
    // Slopes are sampled between samples; shift their event positions by half a sample.
    let tracks = [
        (crossing_intervals(&filtered, fs), 0.0),
        (crossing_intervals(&neg, fs), 0.0),
        (crossing_intervals(&slope, fs), 0.5),
        (crossing_intervals(&neg_slope, fs), 0.5),
    ];
    let mut cand = vec![0.0; positions.len()];
    let mut score = vec![f64::INFINITY; positions.len()];
    for (t, &pos) in positions.iter().enumerate() {
        let mut vals = [0.0; 4];
        let mut ok = true;
        for (k, ((locs, freqs), shift)) in tracks.iter().enumerate() {
            match interp(locs, freqs, pos - shift) {
                Some(v) => vals[k] = v,
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            continue;
        }
        let mean = vals.iter().sum::<f64>() / 4.0;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0).sqrt();
        if mean > boundary || mean < boundary / 2.0 || mean > cfg.ceil || mean < cfg.floor {
            continue;
        }
        cand[t] = mean;
        score[t] = sd / mean;
    }
    (cand, score)
}

fn nearest_candidate(reference: f64, candidates: &[Vec<f64>], t: usize, allowed_range: f64) -> f64 {
    let mut best = 0.0;
    let mut err = f64::INFINITY;
    for band in candidates {
        let e = (reference - band[t]).abs();
        if e < err {
            err = e;
            best = band[t];
        }
    }
    if reference <= 0.0 || (1.0 - best / reference).abs() > allowed_range {
        0.0
    } else {
        best
    }
}

/// DIO contour clean-up.
fn fix_contour(best: &[f64], candidates: &[Vec<f64>], frame_ms: f64, cfg: &F0Config) -> Vec<f64> {
    let n = best.len();
    let voice_range_minimum = (0.5 + 1000.0 / frame_ms / cfg.floor) as usize * 2 + 1;
    if n <= voice_range_minimum {
        return best.to_vec();
    }
    // 1: drop abrupt jumps.
    let mut step1 = vec![0.0; n];
    for t in 1..n {
        let (cur, prev) = (best[t], best[t - 1]);
        step1[t] = if cur > 0.0 && prev > 0.0 && ((cur - prev) / cur).abs() < cfg.allowed_range {
            cur
        } else {
            0.0
        };
    }
    // 2: erode voiced runs so that only frames with a voiced neighborhood survive.
    let center = (voice_range_minimum - 1) / 2;
    let mut step2 = step1.clone();
    for t in 0..n {
        let lo = t.saturating_sub(center);
        let hi = (t + center).min(n - 1);
        if (lo..=hi).any(|k| step1[k] == 0.0) || t < center || t + center >= n {
            step2[t] = 0.0;
        }
    }
    // 3: extend voiced runs forward using the candidates.
    let mut step3 = step2.clone();
    for t in 2..n {
        if step3[t] == 0.0 && step3[t - 1] > 0.0 && step3[t - 2] > 0.0 && step2[t] == 0.0 {
            let reference = (3.0 * step3[t - 1] - step3[t - 2]) / 2.0;
            step3[t] = nearest_candidate(reference, candidates, t, cfg.allowed_range);
        }
    }
    // 4: extend voiced runs backward.
    let mut step4 = step3.clone();
    for t in (0..n.saturating_sub(2)).rev() {
        if step4[t] == 0.0 && step4[t + 1] > 0.0 && step4[t + 2] > 0.0 {
            let reference = (3.0 * step4[t + 1] - step4[t + 2]) / 2.0;
            step4[t] = nearest_candidate(reference, candidates, t, cfg.allowed_range);
        }
    }
    step4
}

/// Refines a candidate with the normalized autocorrelation peak near its
/// period, interpolated parabolically.
fn refine(x: &[f64], fs: f64, center: f64, f0: f64, window: usize, cfg: &F0Config) -> f64 {
    let period = fs / f0;
    let min_lag = ((period / 1.15).floor() as usize).max((fs / cfg.ceil).floor() as usize).max(2);
    let max_lag = ((period * 1.15).ceil() as usize).min((fs / cfg.floor).ceil() as usize);
    if max_lag <= min_lag + 1 {
        return f0;
    }
    let span = window.max((2.0 * period).ceil() as usize);
    let corr = |lag: usize| -> Option<f64> {
        let start = center as isize - ((span + lag) / 2) as isize;
        if start < 0 || start as usize + span + lag > x.len() {
            return None;
        }
        let s = start as usize;
        let (a, b) = (&x[s..s + span], &x[s + lag..s + lag + span]);
        let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
        for (u, v) in a.iter().zip(b) {
            ab += u * v;
            aa += u * u;
            bb += v * v;
        }
        if aa == 0.0 || bb == 0.0 {
            return None;
        }
        Some(ab / (aa * bb).sqrt())
    };
    let values: Vec<Option<f64>> = (min_lag - 1..=max_lag + 1).map(corr).collect();
    let mut best: Option<(usize, f64)> = None;
    for i in 1..values.len() - 1 {
        if let Some(v) = values[i] {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
    }
    let Some((i, peak)) = best else {
        return f0;
    };
    if peak < cfg.refine_min_corr {
        return f0;
    }
    let lag = (min_lag - 1 + i) as f64;
    let offset = match (values[i - 1], values[i + 1]) {
        (Some(l), Some(r)) => {
            let denom = l - 2.0 * peak + r;
            if denom < 0.0 {
                (0.5 * (l - r) / denom).clamp(-0.5, 0.5)
            } else {
                0.0
            }
        }
        _ => 0.0,
    };
    fs / (lag + offset)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn voiced_f0(t: &FeatureTensor) -> Vec<Option<f64>> {
        (0..t.steps())
            .map(|i| (t.get(0, i, 1) == 1.0).then(|| t.get(0, i, 0).exp()))
            .collect()
    }

    fn tone(freq: f64, secs: f64, amp: f64) -> Waveform {
        let sr = 16_000;
        let n = (secs * sr as f64) as usize;
        let s = (0..n)
            .map(|i| amp * (2.0 * PI * freq * i as f64 / sr as f64).sin())
            .collect();
        Waveform::new(s, sr).unwrap()
    }

    #[test]
    fn silence_is_unvoiced() {
        let w = Waveform::new(vec![0.0; 8000], 16_000).unwrap();
        let t = estimate_f0(&w, FrameGrid::canonical(16_000), 70.0, 400.0).unwrap();
        assert_eq!(t.steps(), 25);
        assert!(t.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn steady_tone() {
        let w = tone(200.0, 0.6, 0.5);
        let t = estimate_f0(&w, FrameGrid::canonical(16_000), 70.0, 400.0).unwrap();
        let f = voiced_f0(&t);
        let n = f.len();
        for (i, v) in f.iter().enumerate().take(n - 3).skip(3) {
            let v = v.unwrap_or_else(|| panic!("frame {i} unvoiced"));
            assert!((v - 200.0).abs() <= 4.0, "frame {i}: {v}");
        }
    }

    #[test]
    fn glide_and_amplitude() {
        let sr = 16_000usize;
        let n = sr;
        let (f_a, f_b) = (120.0, 240.0);
        let mut phase = 0.0f64;
        let mut s = Vec::with_capacity(n);
        for i in 0..n {
            let f = f_a + (f_b - f_a) * i as f64 / n as f64;
            s.push(0.5 * phase.sin());
            phase += 2.0 * PI * f / sr as f64;
        }
        let g = FrameGrid::canonical(sr as u32);
        let w = Waveform::new(s.clone(), sr as u32).unwrap();
        let t = estimate_f0(&w, g, 70.0, 400.0).unwrap();
        let f = voiced_f0(&t);
        let mut errs: Vec<f64> = f
            .iter()
            .enumerate()
            .filter_map(|(i, v)| {
                let truth = f_a + (f_b - f_a) * g.center(i) as f64 / n as f64;
                v.map(|v| (v - truth).abs() / truth)
            })
            .collect();
        assert!(errs.len() * 10 >= f.len() * 9, "{} voiced of {}", errs.len(), f.len());
        errs.sort_by(f64::total_cmp);
        assert!(errs[errs.len() / 2] < 0.03, "median {}", errs[errs.len() / 2]);

        let quiet = Waveform::new(s.iter().map(|v| v * 0.01).collect(), sr as u32).unwrap();
        let tq = estimate_f0(&quiet, g, 70.0, 400.0).unwrap();
        for (a, b) in t.data().iter().zip(tq.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn white_noise_is_mostly_unvoiced() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let s: Vec<f64> = (0..16_000).map(|_| rng.random_range(-0.5..0.5)).collect();
        let w = Waveform::new(s, 16_000).unwrap();
        let t = estimate_f0(&w, FrameGrid::canonical(16_000), 70.0, 400.0).unwrap();
        let voiced = voiced_f0(&t).iter().filter(|v| v.is_some()).count();
        assert!(voiced * 5 < t.steps(), "{voiced} of {} frames voiced", t.steps());
    }

    #[test]
    fn band_errors() {
        let w = tone(200.0, 0.1, 0.5);
        let g = FrameGrid::canonical(16_000);
        assert!(matches!(estimate_f0(&w, g, 400.0, 70.0), Err(DspError::BandError(_))));
        assert!(matches!(estimate_f0(&w, g, 70.0, 9000.0), Err(DspError::BandError(_))));
        assert!(matches!(estimate_f0(&w, g, 0.0, 400.0), Err(DspError::BandError(_))));
        let empty = Waveform::new(vec![], 16_000).unwrap();
        assert!(matches!(estimate_f0(&empty, g, 70.0, 400.0), Err(DspError::EmptyWaveform)));
    }

    #[test]
    fn interp_bounds() {
        let xs = [0.0, 1.0, 3.0];
        let ys = [0.0, 10.0, 30.0];
        assert_eq!(interp(&xs, &ys, 2.0), Some(20.0));
        assert_eq!(interp(&xs, &ys, 3.0), Some(30.0));
        assert_eq!(interp(&xs, &ys, 3.5), None);
        assert_eq!(interp(&xs[..1], &ys[..1], 0.0), None);
    }
}
