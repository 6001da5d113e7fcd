use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::Waveform;
use crate::error::{invalid, shape, Result};

/// Analysis window length and frame shift, both in samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub window: usize,
    pub hop: usize,
}

impl StftConfig {
    pub fn new(window: usize, hop: usize) -> Result<Self> {
        if window == 0 || !window.is_power_of_two() {
            return Err(invalid(format!("window {window} is not a power of two")));
        }
        if hop == 0 || hop > window {
            return Err(invalid(format!("hop {hop} must be in 1..={window}")));
        }
        Ok(Self { window, hop })
    }

    pub fn bins(&self) -> usize {
        self.window / 2 + 1
    }

    /// Number of frames produced for a signal of `len` samples (no padding).
    pub fn frames_for(&self, len: usize) -> usize {
        if len < self.window {
            0
        } else {
            (len - self.window) / self.hop + 1
        }
    }
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            window: 2048,
            hop: 512,
        }
    }
}

/// Periodic Hann window.
pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
        .collect()
}

/// Frames x bins complex matrix, row-major by frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    frames: usize,
    config: StftConfig,
    sample_rate: u32,
    data: Vec<Complex64>,
}

impl ComplexSpectrogram {
    pub fn new(
        config: StftConfig,
        sample_rate: u32,
        frames: usize,
        data: Vec<Complex64>,
    ) -> Result<Self> {
        if frames == 0 {
            return Err(invalid("spectrogram needs at least one frame"));
        }
        if data.len() != frames * config.bins() {
            return Err(shape(format!(
                "{} values for {frames} frames x {} bins",
                data.len(),
                config.bins()
            )));
        }
        Ok(Self {
            frames,
            config,
            sample_rate,
            data,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.config.bins()
    }

    pub fn config(&self) -> StftConfig {
        self.config
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn get(&self, frame: usize, bin: usize) -> Complex64 {
        self.data[frame * self.bins() + bin]
    }

    pub fn magnitude(&self) -> MagnitudeSpectrogram {
        MagnitudeSpectrogram {
            frames: self.frames,
            bins: self.bins(),
            data: self.data.iter().map(|c| c.norm()).collect(),
        }
    }

    /// Replaces magnitudes while keeping this spectrogram's phase.
    pub fn with_magnitude(&self, mag: &MagnitudeSpectrogram) -> Result<ComplexSpectrogram> {
        if mag.frames != self.frames || mag.bins != self.bins() {
            return Err(shape(format!(
                "magnitude {}x{} vs complex {}x{}",
                mag.frames,
                mag.bins,
                self.frames,
                self.bins()
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&mag.data)
            .map(|(c, &m)| {
                let n = c.norm();
                if n > 0.0 {
                    c * (m / n)
                } else {
                    Complex64::new(m, 0.0)
                }
            })
            .collect();
        Ok(ComplexSpectrogram {
            data,
            ..self.clone()
        })
    }
}

/// Frames x bins matrix of non-negative reals.
#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeSpectrogram {
    frames: usize,
    bins: usize,
    data: Vec<f64>,
}

impl MagnitudeSpectrogram {
    pub fn new(frames: usize, bins: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != frames * bins {
            return Err(shape(format!(
                "{} values for {frames}x{bins}",
                data.len()
            )));
        }
        if data.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(invalid("magnitudes must be finite and non-negative"));
        }
        Ok(Self { frames, bins, data })
    }

    pub fn zeros(frames: usize, bins: usize) -> Self {
        Self {
            frames,
            bins,
            data: vec![0.0; frames * bins],
        }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, frame: usize, bin: usize) -> f64 {
        self.data[frame * self.bins + bin]
    }

    pub fn frame(&self, frame: usize) -> &[f64] {
        &self.data[frame * self.bins..(frame + 1) * self.bins]
    }

    pub fn scaled(&self, gain: f64) -> MagnitudeSpectrogram {
        MagnitudeSpectrogram {
            data: self.data.iter().map(|v| v * gain.abs()).collect(),
            ..self.clone()
        }
    }
}

/// Separation mask with entries in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    frames: usize,
    bins: usize,
    data: Vec<f64>,
}

impl Mask {
    pub fn new(frames: usize, bins: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != frames * bins {
            return Err(shape(format!(
                "{} mask values for {frames}x{bins}",
                data.len()
            )));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(invalid("mask entries must lie in [0, 1]"));
        }
        Ok(Self { frames, bins, data })
    }

    pub fn filled(frames: usize, bins: usize, value: f64) -> Result<Self> {
        Self::new(frames, bins, vec![value; frames * bins])
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Short-time Fourier transform with a periodic Hann analysis window and no
/// edge padding.
pub fn stft(w: &Waveform, window: usize, hop: usize) -> Result<ComplexSpectrogram> {
    let config = StftConfig::new(window, hop)?;
    if w.len() < window {
        return Err(invalid(format!(
            "signal of {} samples is shorter than one window ({window})",
            w.len()
        )));
    }
    let frames = config.frames_for(w.len());
    let bins = config.bins();
    let win = hann_window(window);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(window);
    let mut buf = vec![Complex64::new(0.0, 0.0); window];
    let mut data = Vec::with_capacity(frames * bins);
    for f in 0..frames {
        let start = f * hop;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex64::new(w.samples()[start + i] * win[i], 0.0);
        }
        fft.process(&mut buf);
        data.extend_from_slice(&buf[..bins]);
    }
    ComplexSpectrogram::new(config, w.sample_rate(), frames, data)
}

/// Sum of squared Hann windows overlapped at `hop`, one value per phase
/// offset. Weighted overlap-add is exact when these are all equal.
fn squared_window_overlap(win: &[f64], hop: usize) -> Vec<f64> {
    (0..hop)
        .map(|n| {
            (n..win.len())
                .step_by(hop)
                .map(|i| win[i] * win[i])
                .sum::<f64>()
        })
        .collect()
}

/// Inverse STFT by weighted overlap-add with a Hann synthesis window.
///
/// Requires the squared Hann window to overlap-add to a constant at the
/// spectrogram's hop (true for `hop = window / 4`, false for `window / 2`).
/// The first and last `window - hop` samples fade in and out.
pub fn istft(s: &ComplexSpectrogram) -> Result<Waveform> {
    let StftConfig { window, hop } = s.config();
    let win = hann_window(window);
    let overlap = squared_window_overlap(&win, hop);
    let (lo, hi) = overlap
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    if window % hop != 0 || hi <= 0.0 || (hi - lo) > 1e-9 * hi {
        return Err(invalid(format!(
            "hop {hop} with window {window} does not satisfy the overlap-add condition"
        )));
    }

    let bins = s.bins();
    let len = (s.frames() - 1) * hop + window;
    let mut out = vec![0.0; len];
    let mut norm = vec![0.0; len];
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(window);
    let mut buf = vec![Complex64::new(0.0, 0.0); window];
    for f in 0..s.frames() {
        let row = &s.data()[f * bins..(f + 1) * bins];
        buf[..bins].copy_from_slice(row);
        for k in bins..window {
            buf[k] = row[window - k].conj();
        }
        ifft.process(&mut buf);
        let start = f * hop;
        for i in 0..window {
            out[start + i] += buf[i].re / window as f64 * win[i];
            norm[start + i] += win[i] * win[i];
        }
    }
    // Edge samples are covered by fewer windows; dividing by their small
    // window sum would blow up any inconsistency of a modified spectrogram,
    // so they are tapered instead.
    for (o, n) in out.iter_mut().zip(&norm) {
        *o /= n.max(hi);
    }
    Waveform::new(out, s.sample_rate())
}

/// Applies a separation mask by elementwise product.
pub fn hadamard_separate(mix: &MagnitudeSpectrogram, mask: &Mask) -> Result<MagnitudeSpectrogram> {
    if mix.frames != mask.frames || mix.bins != mask.bins {
        return Err(shape(format!(
            "mix {}x{} vs mask {}x{}",
            mix.frames, mix.bins, mask.frames, mask.bins
        )));
    }
    Ok(MagnitudeSpectrogram {
        frames: mix.frames,
        bins: mix.bins,
        data: mix.data.iter().zip(&mask.data).map(|(a, m)| a * m).collect(),
    })
}
