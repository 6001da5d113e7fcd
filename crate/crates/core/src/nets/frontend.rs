use candle_core::{DType, Device, Tensor};

use super::ModelConfig;
use crate::dsp::{stft, MagnitudeSpectrogram, MelFilterbank, StftConfig, Waveform, LOG_FLOOR_EPS};
use crate::error::{invalid, shape, Result};

/// Waveform to tensor conversion and the fixed log-mel projection.
#[derive(Debug, Clone)]
pub struct Frontend {
    stft: StftConfig,
    sample_rate: u32,
    n_mels: usize,
    /// `(n_mels, bins)`, not trainable.
    mel: Tensor,
    dtype: DType,
}

impl Frontend {
    pub fn new(cfg: &ModelConfig, dtype: DType) -> Result<Self> {
        let stft = StftConfig::new(cfg.window, cfg.hop)?;
        let fb = MelFilterbank::new(cfg.n_mels, stft.bins(), cfg.sample_rate)?;
        let mel = Tensor::from_vec(fb.weights().to_vec(), (cfg.n_mels, stft.bins()), &Device::Cpu)?
            .to_dtype(dtype)?;
        Ok(Self {
            stft,
            sample_rate: cfg.sample_rate,
            n_mels: cfg.n_mels,
            mel,
            dtype,
        })
    }

    pub fn bins(&self) -> usize {
        self.stft.bins()
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn stft_config(&self) -> StftConfig {
        self.stft
    }

    pub fn magnitude(&self, w: &Waveform) -> Result<MagnitudeSpectrogram> {
        if w.sample_rate() != self.sample_rate {
            return Err(invalid(format!(
                "audio at {} Hz, model configured for {} Hz",
                w.sample_rate(),
                self.sample_rate
            )));
        }
        Ok(stft(w, self.stft.window, self.stft.hop)?.magnitude())
    }

    /// `(B, 1, bins, frames)` tensor from equally long spectrograms.
    pub fn batch(&self, mags: &[MagnitudeSpectrogram]) -> Result<Tensor> {
        let first = mags.first().ok_or_else(|| invalid("empty batch"))?;
        let (t, f) = (first.frames(), first.bins());
        let mut data = Vec::with_capacity(mags.len() * t * f);
        for m in mags {
            if (m.frames(), m.bins()) != (t, f) {
                return Err(shape(format!(
                    "batch mixes {}x{} and {t}x{f} spectrograms",
                    m.frames(),
                    m.bins()
                )));
            }
            data.extend_from_slice(m.data());
        }
        let x = Tensor::from_vec(data, (mags.len(), 1, t, f), &Device::Cpu)?;
        Ok(x.transpose(2, 3)?.contiguous()?.to_dtype(self.dtype)?)
    }

    pub fn batch_waveforms(&self, ws: &[&Waveform]) -> Result<Tensor> {
        let mags = ws.iter().map(|w| self.magnitude(w)).collect::<Result<Vec<_>>>()?;
        self.batch(&mags)
    }

    /// Normalized log-mel `(ln(mel + eps) - ln eps) / |ln eps|` of a
    /// `(B, 1, bins, frames)` magnitude batch; differentiable.
    pub fn log_mel(&self, mag: &Tensor) -> Result<Tensor> {
        let (b, _, f, t) = mag.dims4()?;
        if f != self.bins() {
            return Err(shape(format!("expected {} bins, got {f}", self.bins())));
        }
        let mel = self.mel.broadcast_matmul(&mag.reshape((b, f, t))?)?;
        let ln_eps = LOG_FLOOR_EPS.ln();
        let y = ((mel + LOG_FLOOR_EPS)?.log()? - ln_eps)? / ln_eps.abs();
        Ok(y?.unsqueeze(1)?)
    }

    /// Item `index` of a `(B, 1, bins, frames)` batch.
    pub fn to_spectrogram(&self, t: &Tensor, index: usize) -> Result<MagnitudeSpectrogram> {
        let x = t.get(index)?.squeeze(0)?.t()?.contiguous()?;
        let (frames, bins) = x.dims2()?;
        let data = x.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
        MagnitudeSpectrogram::new(frames, bins, data.into_iter().map(|v| v.max(0.0)).collect())
    }
}
