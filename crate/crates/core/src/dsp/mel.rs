use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{DspError, FrameGrid, Waveform};
use crate::features::{AxisKind, FeatureTensor};

/// Added to mel power before the natural log.
pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MelConfig {
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
}

impl MelConfig {
    /// 80 bands from 0 Hz to Nyquist.
    pub fn default_for(sample_rate: u32) -> Self {
        MelConfig {
            n_mels: 80,
            fmin: 0.0,
            fmax: sample_rate as f64 / 2.0,
        }
    }
}

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters over the `n_fft / 2 + 1` FFT bins, with band edges
/// equally spaced on the mel scale. Each triangle peaks at 1.
pub fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate: u32, fmin: f64, fmax: f64) -> Vec<Vec<f64>> {
    let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    let mut edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    edges[0] = fmin;
    edges[n_mels + 1] = fmax;
    let n_bins = n_fft / 2 + 1;
    let bin_hz = sample_rate as f64 / n_fft as f64;
    (0..n_mels)
        .map(|m| {
            let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..n_bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    if f <= left || f >= right {
                        0.0
                    } else if f <= center {
                        (f - left) / (center - left)
                    } else {
                        (right - f) / (right - center)
                    }
                })
                .collect()
        })
        .collect()
}

pub(crate) fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

/// Log-mel energies, `1 x T x n_mels`.
pub fn melspectrogram(w: &Waveform, grid: FrameGrid, cfg: &MelConfig) -> Result<FeatureTensor, DspError> {
    grid.check()?;
    if w.is_empty() {
        return Err(DspError::EmptyWaveform);
    }
    let nyquist = w.sample_rate() as f64 / 2.0;
    if cfg.n_mels == 0 {
        return Err(DspError::InvalidBand("n_mels must be at least 1".into()));
    }
    if !(cfg.fmin >= 0.0 && cfg.fmin < cfg.fmax && cfg.fmax <= nyquist) {
        return Err(DspError::InvalidBand(format!(
            "need 0 <= fmin < fmax <= {nyquist}, got {}..{}",
            cfg.fmin, cfg.fmax
        )));
    }
    let n_fft = grid.window.next_power_of_two();
    let bank = mel_filterbank(cfg.n_mels, n_fft, w.sample_rate(), cfg.fmin, cfg.fmax);
    let window = hann(grid.window);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let x = w.samples();
    let frames = grid.num_frames(x.len());
    let half = grid.window as isize / 2;

    let mut data = Vec::with_capacity(frames * cfg.n_mels);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut power = vec![0.0; n_fft / 2 + 1];
    for t in 0..frames {
        let start = grid.center(t) as isize - half;
        for (i, slot) in buf.iter_mut().enumerate() {
            let idx = start + i as isize;
            let v = if i < grid.window && idx >= 0 && (idx as usize) < x.len() {
                x[idx as usize] * window[i]
            } else {
                0.0
            };
            *slot = Complex::new(v, 0.0);
        }
        fft.process(&mut buf);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p = c.norm_sqr();
        }
        for filt in &bank {
            let e: f64 = filt.iter().zip(&power).map(|(a, b)| a * b).sum();
            data.push((e + LOG_FLOOR).ln());
        }
    }
    FeatureTensor::new(1, frames, cfg.n_mels, AxisKind::Frame, data)
        .map_err(|e| DspError::InvalidWaveform(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, sr: u32, n: usize, amp: f64) -> Waveform {
        let s = (0..n)
            .map(|i| amp * (2.0 * PI * freq * i as f64 / sr as f64).sin())
            .collect();
        Waveform::new(s, sr).unwrap()
    }

    #[test]
    fn silence_is_floor() {
        let w = Waveform::new(vec![0.0; 4000], 16_000).unwrap();
        let m = melspectrogram(&w, FrameGrid::canonical(16_000), &MelConfig::default_for(16_000)).unwrap();
        assert_eq!(m.steps(), 13);
        assert!(m.data().iter().all(|&v| v == LOG_FLOOR.ln()));
    }

    #[test]
    fn one_hop_is_one_frame() {
        let w = sine(440.0, 16_000, 320, 0.5);
        let m = melspectrogram(&w, FrameGrid::canonical(16_000), &MelConfig::default_for(16_000)).unwrap();
        assert_eq!((m.layers(), m.steps(), m.dim()), (1, 1, 80));
    }

    #[test]
    fn band_validation() {
        let w = sine(440.0, 16_000, 320, 0.5);
        let g = FrameGrid::canonical(16_000);
        let bad = |fmin, fmax, n_mels| melspectrogram(&w, g, &MelConfig { n_mels, fmin, fmax });
        assert!(matches!(bad(100.0, 100.0, 10), Err(DspError::InvalidBand(_))));
        assert!(matches!(bad(0.0, 9000.0, 10), Err(DspError::InvalidBand(_))));
        assert!(matches!(bad(0.0, 8000.0, 0), Err(DspError::InvalidBand(_))));
        let empty = Waveform::new(vec![], 16_000).unwrap();
        assert!(matches!(
            melspectrogram(&empty, g, &MelConfig::default_for(16_000)),
            Err(DspError::EmptyWaveform)
        ));
    }

    #[test]
    fn mel_scale_roundtrip() {
        for hz in [0.0, 100.0, 1000.0, 7999.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
        assert!((hz_to_mel(1000.0) - 1000.0).abs() < 0.5);
    }

    #[test]
    fn filters_are_triangles_within_band() {
        let bank = mel_filterbank(10, 512, 16_000, 300.0, 4000.0);
        for f in &bank {
            assert!(f.iter().all(|&v| (0.0..=1.0).contains(&v)));
            assert!(f.iter().any(|&v| v > 0.0));
        }
        let bin_hz = 16_000.0 / 512.0;
        for f in &bank {
            for (k, &v) in f.iter().enumerate() {
                if v > 0.0 {
                    let hz = k as f64 * bin_hz;
                    assert!(hz > 300.0 && hz < 4000.0);
                }
            }
        }
    }
}
