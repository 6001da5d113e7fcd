//! Deterministic audio and time-frequency primitives.
//!
//! Everything here is a pure function of its inputs. Audio is mono, stored
//! as `f64` samples nominally in `[-1, 1]`.

mod mel;
mod sdr;
mod stft;
mod wav;

pub use mel::{log_mel, MelFilterbank, MelSpectrogram, LOG_FLOOR_EPS};
pub use sdr::{format_db, global_sdr};
pub use stft::{
    hadamard_separate, hann_window, istft, stft, ComplexSpectrogram, MagnitudeSpectrogram, Mask,
    StftConfig,
};
pub use wav::{read_wav, write_wav, WavFormat};

use crate::error::{invalid, Result};

/// Default sampling rate of stored audio.
pub const DEFAULT_SAMPLE_RATE: u32 = 44_100;

/// A mono audio signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(invalid("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(invalid(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        Self {
            samples: vec![0.0; len],
            sample_rate: sample_rate.max(1),
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
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

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Copies `len` samples starting at `start`. Panics when out of range.
    pub fn slice(&self, start: usize, len: usize) -> Waveform {
        Waveform {
            samples: self.samples[start..start + len].to_vec(),
            sample_rate: self.sample_rate,
        }
    }

    pub fn scaled(&self, gain: f64) -> Waveform {
        Waveform {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64).sqrt()
    }

    /// Sample-wise sum of equally long waveforms sharing one sample rate.
    pub fn sum<'a>(parts: impl IntoIterator<Item = &'a Waveform>) -> Result<Waveform> {
        let mut iter = parts.into_iter();
        let first = iter
            .next()
            .ok_or_else(|| invalid("cannot sum zero waveforms"))?;
        let mut acc = first.samples.clone();
        for w in iter {
            if w.len() != acc.len() || w.sample_rate != first.sample_rate {
                return Err(invalid(format!(
                    "cannot sum waveforms of {}@{} and {}@{}",
                    acc.len(),
                    first.sample_rate,
                    w.len(),
                    w.sample_rate
                )));
            }
            for (a, s) in acc.iter_mut().zip(&w.samples) {
                *a += s;
            }
        }
        Ok(Waveform {
            samples: acc,
            sample_rate: first.sample_rate,
        })
    }
}
