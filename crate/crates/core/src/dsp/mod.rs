//! Native acoustic baselines: log-mel spectrogram and F0 contour, both on the
//! canonical frame grid.
//!
//! Frame `t` is centered on sample `t * hop + hop / 2`; the analysis window
//! extends `window / 2` samples to either side, zero-padded at the edges. A
//! waveform of `N` samples yields `ceil(N / hop)` frames.

mod f0;
mod mel;
mod wav;

use thiserror::Error;

pub use f0::{estimate_f0, estimate_f0_with, F0Config};
pub use mel::{hz_to_mel, mel_filterbank, mel_to_hz, melspectrogram, MelConfig, LOG_FLOOR};
pub use wav::{read_wav, write_wav};

#[derive(Debug, Error)]
pub enum DspError {
    #[error("empty waveform")]
    EmptyWaveform,
    #[error("invalid mel band: {0}")]
    InvalidBand(String),
    #[error("invalid F0 search band: {0}")]
    BandError(String),
    #[error("invalid waveform: {0}")]
    InvalidWaveform(String),
    #[error("invalid frame grid: hop {hop}, window {window}")]
    InvalidGrid { hop: usize, window: usize },
    #[error("audio file {path}: {message}")]
    Audio { path: String, message: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, DspError> {
        if sample_rate == 0 {
            return Err(DspError::InvalidWaveform("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(DspError::InvalidWaveform(format!("non-finite sample at {i}")));
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Hop and window lengths in samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrameGrid {
    pub hop: usize,
    pub window: usize,
}

impl FrameGrid {
    pub fn new(hop: usize, window: usize) -> Result<Self, DspError> {
        if hop == 0 || window < hop {
            return Err(DspError::InvalidGrid { hop, window });
        }
        Ok(FrameGrid { hop, window })
    }

    /// 20 ms hop and 40 ms window at the given rate.
    pub fn canonical(sample_rate: u32) -> Self {
        let hop = (sample_rate as usize / 50).max(1);
        FrameGrid { hop, window: 2 * hop }
    }

    pub fn num_frames(&self, samples: usize) -> usize {
        samples.div_ceil(self.hop)
    }

    /// Center sample of frame `t`.
    pub fn center(&self, t: usize) -> usize {
        t * self.hop + self.hop / 2
    }

    fn check(&self) -> Result<(), DspError> {
        FrameGrid::new(self.hop, self.window).map(|_| ())
    }
}
