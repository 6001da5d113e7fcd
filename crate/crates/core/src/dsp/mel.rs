use super::MagnitudeSpectrogram;
use crate::error::{invalid, shape, Result};

/// Offset added before the logarithm so silent bands stay finite.
pub const LOG_FLOOR_EPS: f64 = 1e-6;

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters with HTK mel spacing between 0 Hz and Nyquist.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    n_mels: usize,
    bins: usize,
    /// `n_mels x bins`, row-major.
    weights: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(n_mels: usize, bins: usize, sample_rate: u32) -> Result<Self> {
        if n_mels == 0 {
            return Err(invalid("n_mels must be at least 1"));
        }
        if bins < 2 {
            return Err(invalid("need at least two frequency bins"));
        }
        if n_mels > bins {
            return Err(invalid(format!("n_mels {n_mels} exceeds {bins} bins")));
        }
        let nyquist = sample_rate as f64 / 2.0;
        let top = hz_to_mel(nyquist);
        let points: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
            .collect();
        let bin_hz = nyquist / (bins - 1) as f64;
        let mut weights = vec![0.0; n_mels * bins];
        for m in 0..n_mels {
            let (lo, mid, hi) = (points[m], points[m + 1], points[m + 2]);
            for k in 0..bins {
                let f = k as f64 * bin_hz;
                let w = if f <= lo || f >= hi {
                    0.0
                } else if f <= mid {
                    (f - lo) / (mid - lo)
                } else {
                    (hi - f) / (hi - mid)
                };
                weights[m * bins + k] = w;
            }
        }
        Ok(Self {
            n_mels,
            bins,
            weights,
        })
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn apply(&self, m: &MagnitudeSpectrogram) -> Result<MelSpectrogram> {
        if m.bins() != self.bins {
            return Err(shape(format!(
                "spectrogram has {} bins, filterbank expects {}",
                m.bins(),
                self.bins
            )));
        }
        let mut data = Vec::with_capacity(m.frames() * self.n_mels);
        for t in 0..m.frames() {
            let frame = m.frame(t);
            for row in self.weights.chunks_exact(self.bins) {
                let e: f64 = row.iter().zip(frame).map(|(w, x)| w * x).sum();
                data.push((e + LOG_FLOOR_EPS).ln());
            }
        }
        Ok(MelSpectrogram {
            frames: m.frames(),
            n_mels: self.n_mels,
            data,
        })
    }
}

/// Frames x n_mels log-magnitude matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    frames: usize,
    n_mels: usize,
    data: Vec<f64>,
}

impl MelSpectrogram {
    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, frame: usize, band: usize) -> f64 {
        self.data[frame * self.n_mels + band]
    }
}

/// Log-mel spectrogram of a magnitude spectrogram.
///
/// The filterbank assumes the spectrogram spans 0 Hz to Nyquist of
/// `sample_rate`.
pub fn log_mel(m: &MagnitudeSpectrogram, n_mels: usize, sample_rate: u32) -> Result<MelSpectrogram> {
    MelFilterbank::new(n_mels, m.bins(), sample_rate)?.apply(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_magnitude_sits_on_floor() {
        let m = MagnitudeSpectrogram::zeros(3, 129);
        let mel = log_mel(&m, 20, 8000).unwrap();
        assert!(mel.data().iter().all(|v| *v == LOG_FLOOR_EPS.ln()));
        assert_eq!(mel.n_mels(), 20);
    }

    #[test]
    fn single_bin_impulse_touches_at_most_two_adjacent_bands() {
        let bins = 129;
        let fb = MelFilterbank::new(24, bins, 8000).unwrap();
        for k in 0..bins {
            let mut data = vec![0.0; bins];
            data[k] = 1.0;
            let mel = fb
                .apply(&MagnitudeSpectrogram::new(1, bins, data).unwrap())
                .unwrap();
            // Oracle: a bin contributes to band m iff it lies strictly inside
            // that triangle's support, read straight off the weight table.
            let lit: Vec<usize> = (0..24)
                .filter(|&m| mel.get(0, m) > LOG_FLOOR_EPS.ln())
                .collect();
            let support: Vec<usize> = (0..24).filter(|&m| fb.weights()[m * bins + k] > 0.0).collect();
            assert_eq!(lit, support);
            assert!(lit.len() <= 2, "bin {k} lit {lit:?}");
            if lit.len() == 2 {
                assert_eq!(lit[1], lit[0] + 1);
            }
        }
    }

    #[test]
    fn doubling_increases_every_band() {
        let bins = 129;
        let data: Vec<f64> = (0..bins * 2).map(|i| 0.1 + (i % 7) as f64).collect();
        let m = MagnitudeSpectrogram::new(2, bins, data).unwrap();
        let a = log_mel(&m, 16, 8000).unwrap();
        let b = log_mel(&m.scaled(2.0), 16, 8000).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!(y > x);
        }
    }

    #[test]
    fn rejects_too_many_bands() {
        assert!(log_mel(&MagnitudeSpectrogram::zeros(1, 9), 10, 8000).is_err());
        assert!(log_mel(&MagnitudeSpectrogram::zeros(1, 9), 0, 8000).is_err());
    }
}
