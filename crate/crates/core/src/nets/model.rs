use std::collections::BTreeMap;

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use super::conditioning::conditioning_3d;
use super::frontend::Frontend;
use super::params::ParamStore;
use super::unet::{crop, pad_to_multiple, pool_and_project, Decoder, Encoder, Linear};
use super::ModelConfig;
use crate::corpus::{Instrument, StemSet};
use crate::error::{invalid, shape, Error, Result};

pub const MSS_PREFIX: &str = "mss.";
pub const EXT_PREFIX: &str = "ext.";
pub const DIRECT_PREFIX: &str = "direct.";
pub const RECON_PREFIX: &str = "recon.";

/// Model families by how embeddings are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// One extractor per instrument applied to the clean stem.
    Clean,
    /// Separation U-Net followed by an extractor, per instrument.
    Cascade,
    /// One disentangled extractor on the mix, plus reconstruction decoders.
    Direct,
}

impl Family {
    pub fn instruments(self) -> &'static [Instrument] {
        match self {
            Family::Cascade => &Instrument::ALL[..4],
            Family::Clean | Family::Direct => &Instrument::ALL,
        }
    }
}

#[derive(Debug, Clone)]
struct Unet {
    enc: Encoder,
    dec: Decoder,
}

#[derive(Debug, Clone)]
struct Extractor {
    enc: Encoder,
    head: Linear,
}

/// Output of the disentangled extractor at padded resolution.
#[derive(Debug, Clone)]
pub struct DirectOutput {
    /// Encoder outputs; the last is the bottleneck sequence.
    pub skips: Vec<Tensor>,
    /// `(B, 5 * embed_dim)`.
    pub embedding: Tensor,
    bins: usize,
    frames: usize,
}

impl DirectOutput {
    /// Rows `indices` (a u32 tensor) of every part.
    pub fn select(&self, indices: &Tensor) -> Result<DirectOutput> {
        Ok(DirectOutput {
            skips: self
                .skips
                .iter()
                .map(|s| s.index_select(indices, 0))
                .collect::<candle_core::Result<_>>()?,
            embedding: self.embedding.index_select(indices, 0)?,
            bins: self.bins,
            frames: self.frames,
        })
    }
}

/// One trainable model of any family, with all parameters in one store.
///
/// Clones share parameter storage; use [`InMsrl::load_params_from`] on a
/// fresh model for an independent copy.
#[derive(Debug, Clone)]
pub struct InMsrl {
    cfg: ModelConfig,
    family: Family,
    store: ParamStore,
    frontend: Frontend,
    mss: BTreeMap<Instrument, Unet>,
    ext: BTreeMap<Instrument, Extractor>,
    direct: Option<Extractor>,
    recon: BTreeMap<Instrument, Decoder>,
}

fn padded(n: usize, depth: usize) -> usize {
    n.next_multiple_of(1 << depth)
}

impl InMsrl {
    pub fn new(cfg: &ModelConfig, family: Family, seed: u64, dtype: DType) -> Result<Self> {
        cfg.validate()?;
        let mut ps = ParamStore::new(seed, dtype);
        let frontend = Frontend::new(cfg, dtype)?;
        let k = cfg.kernel;
        let mut mss = BTreeMap::new();
        let mut ext = BTreeMap::new();
        let mut recon = BTreeMap::new();
        let mut direct = None;
        match family {
            Family::Clean | Family::Cascade => {
                let d = cfg.depth();
                let head_in = cfg.channels[d - 1] * padded(cfg.n_mels, d) / (1 << d);
                for &inst in family.instruments() {
                    if family == Family::Cascade {
                        let p = format!("{MSS_PREFIX}{inst}");
                        mss.insert(
                            inst,
                            Unet {
                                enc: Encoder::new(&mut ps, &format!("{p}.enc"), &cfg.channels, k)?,
                                dec: Decoder::new(&mut ps, &format!("{p}.dec"), &cfg.channels, k)?,
                            },
                        );
                    }
                    let p = format!("{EXT_PREFIX}{inst}");
                    ext.insert(
                        inst,
                        Extractor {
                            enc: Encoder::new(&mut ps, &format!("{p}.enc"), &cfg.channels, k)?,
                            head: Linear::new(&mut ps, &format!("{p}.head"), head_in, cfg.embed_dim)?,
                        },
                    );
                }
            }
            Family::Direct => {
                let ch = &cfg.direct_channels;
                let d = ch.len();
                let head_in = ch[d - 1] * padded(frontend.bins(), d) / (1 << d);
                direct = Some(Extractor {
                    enc: Encoder::new(&mut ps, &format!("{DIRECT_PREFIX}enc"), ch, k)?,
                    head: Linear::new(
                        &mut ps,
                        &format!("{DIRECT_PREFIX}head"),
                        head_in,
                        Instrument::COUNT * cfg.embed_dim,
                    )?,
                });
                for inst in Instrument::ALL {
                    recon.insert(inst, Decoder::new(&mut ps, &format!("{RECON_PREFIX}{inst}"), ch, k)?);
                }
            }
        }
        Ok(Self {
            cfg: cfg.clone(),
            family,
            store: ps,
            frontend,
            mss,
            ext,
            direct,
            recon,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn frontend(&self) -> &Frontend {
        &self.frontend
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    /// Dimension of the vectors returned by [`InMsrl::embed`].
    pub fn embedding_dim(&self) -> usize {
        match self.family {
            Family::Direct => Instrument::COUNT * self.cfg.embed_dim,
            _ => self.cfg.embed_dim,
        }
    }

    /// Parameter prefixes of the feature-extraction part.
    pub fn extractor_prefixes(&self) -> Vec<&'static str> {
        match self.family {
            Family::Direct => vec![DIRECT_PREFIX],
            _ => vec![EXT_PREFIX],
        }
    }

    fn check_frames(&self, x: &Tensor, depth: usize) -> Result<()> {
        let (_, _, _, t) = x.dims4()?;
        if t < 1 << depth {
            return Err(shape(format!("{t} frames, model needs at least {}", 1 << depth)));
        }
        Ok(())
    }

    fn check_inst<'a, T>(&self, map: &'a BTreeMap<Instrument, T>, inst: Instrument) -> Result<&'a T> {
        map.get(&inst)
            .ok_or_else(|| invalid(format!("{:?} model has no {inst} branch", self.family)))
    }

    /// Separation mask for `inst` of a `(B, 1, bins, frames)` mix magnitude.
    pub fn separation_mask(&self, inst: Instrument, mix: &Tensor) -> Result<Tensor> {
        let net = self.check_inst(&self.mss, inst)?;
        self.check_frames(mix, self.cfg.depth())?;
        let (_, _, f, t) = mix.dims4()?;
        let x = pad_to_multiple(&(mix + 1.0)?.log()?, 1 << self.cfg.depth())?;
        let skips = net.enc.forward(&x)?;
        let mask = net.dec.forward(skips.last().expect("depth > 0"), &skips)?;
        crop(&mask, f, t)
    }

    pub fn separate(&self, inst: Instrument, mix: &Tensor) -> Result<Tensor> {
        Ok((self.separation_mask(inst, mix)? * mix)?)
    }

    /// `(B, embed_dim)` feature of a magnitude batch via log-mel.
    pub fn feature(&self, inst: Instrument, mag: &Tensor) -> Result<Tensor> {
        let net = self.check_inst(&self.ext, inst)?;
        self.check_frames(mag, self.cfg.depth())?;
        let x = pad_to_multiple(&self.frontend.log_mel(mag)?, 1 << self.cfg.depth())?;
        let skips = net.enc.forward(&x)?;
        pool_and_project(skips.last().expect("depth > 0"), &net.head)
    }

    pub fn disentangled(&self, mix: &Tensor) -> Result<DirectOutput> {
        let net = self
            .direct
            .as_ref()
            .ok_or_else(|| invalid(format!("{:?} model has no disentangled extractor", self.family)))?;
        let depth = self.cfg.direct_channels.len();
        self.check_frames(mix, depth)?;
        let (_, _, f, t) = mix.dims4()?;
        let x = pad_to_multiple(&(mix + 1.0)?.log()?, 1 << depth)?;
        let skips = net.enc.forward(&x)?;
        let embedding = pool_and_project(skips.last().expect("depth > 0"), &net.head)?;
        Ok(DirectOutput {
            skips,
            embedding,
            bins: f,
            frames: t,
        })
    }

    /// Mask-based reconstruction of `inst` from the bottleneck with the other
    /// instruments' channel groups zeroed. Skips pass unmasked.
    pub fn reconstruct(&self, inst: Instrument, out: &DirectOutput, mix: &Tensor) -> Result<Tensor> {
        let dec = self.check_inst(&self.recon, inst)?;
        if mix.dims4()?.2 != out.bins || mix.dims4()?.3 != out.frames {
            return Err(shape("mix does not match the extractor input"));
        }
        let cond = conditioning_3d(out.skips.last().expect("depth > 0"), inst)?;
        let mask = crop(&dec.forward(&cond, &out.skips)?, out.bins, out.frames)?;
        Ok((mask * mix)?)
    }

    /// Embeddings of equally long stem sets for `inst`. Direct models return
    /// the full disentangled vector.
    pub fn embed(&self, inst: Instrument, stems: &[&StemSet]) -> Result<Tensor> {
        match self.family {
            Family::Clean => {
                let ws: Vec<_> = stems.iter().map(|s| s.stem_in_mix(inst)).collect();
                let refs: Vec<_> = ws.iter().collect();
                self.feature(inst, &self.frontend.batch_waveforms(&refs)?)
            }
            Family::Cascade => {
                let mix = self.frontend.batch_waveforms(&stems.iter().map(|s| s.mix()).collect::<Vec<_>>())?;
                self.feature(inst, &self.separate(inst, &mix)?)
            }
            Family::Direct => {
                let mix = self.frontend.batch_waveforms(&stems.iter().map(|s| s.mix()).collect::<Vec<_>>())?;
                Ok(self.disentangled(&mix)?.embedding)
            }
        }
    }

    /// Detached embeddings as plain vectors, in chunks of `batch`.
    pub fn embed_vectors(&self, inst: Instrument, stems: &[&StemSet], batch: usize) -> Result<Vec<Vec<f32>>> {
        let mut out = Vec::with_capacity(stems.len());
        for chunk in stems.chunks(batch.max(1)) {
            let e = self.embed(inst, chunk)?.detach().to_dtype(DType::F32)?;
            out.extend(e.to_vec2::<f32>()?);
        }
        Ok(out)
    }

    /// Copies parameters from a model of the same configuration (e.g. a
    /// trained Clean model into a fresh one).
    pub fn load_params_from(&mut self, other: &InMsrl) -> Result<()> {
        if other.cfg != self.cfg {
            return Err(Error::Config("model configurations differ".into()));
        }
        self.store.copy_from(&other.store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synth_corpus;

    fn ones(f: usize, t: usize) -> Tensor {
        Tensor::ones((2, 1, f, t), DType::F32, &candle_core::Device::Cpu).unwrap()
    }

    #[test]
    fn output_shapes_and_bounds() {
        let cfg = ModelConfig::desk();
        let m = InMsrl::new(&cfg, Family::Cascade, 0, DType::F32).unwrap();
        let f = m.frontend().bins();
        let mix = (ones(f, 30) * 3.0).unwrap();
        let sep = m.separate(Instrument::Bass, &mix).unwrap();
        assert_eq!(sep.dims(), mix.dims());
        let bounded = sep.le(&mix).unwrap().min_all().unwrap().to_scalar::<u8>().unwrap();
        assert_eq!(bounded, 1);
        assert!(m.separate(Instrument::Residuals, &mix).is_err());
        assert!(m.separate(Instrument::Bass, &ones(f, 4)).is_err());
        for t in [47, 188, 625] {
            let e = m.feature(Instrument::Drums, &ones(f, t)).unwrap();
            assert_eq!(e.dims(), &[2, 128]);
        }
    }

    #[test]
    fn zero_mix_separates_to_zero() {
        let m = InMsrl::new(&ModelConfig::desk(), Family::Cascade, 1, DType::F32).unwrap();
        let z = ones(m.frontend().bins(), 16).zeros_like().unwrap();
        let s = m.separate(Instrument::Drums, &z).unwrap();
        assert_eq!(s.abs().unwrap().sum_all().unwrap().to_scalar::<f32>().unwrap(), 0.0);
    }

    #[test]
    fn direct_shapes_and_reconstruction_bound() {
        let m = InMsrl::new(&ModelConfig::desk(), Family::Direct, 2, DType::F32).unwrap();
        let f = m.frontend().bins();
        let mix = (ones(f, 37) * 2.0).unwrap();
        let out = m.disentangled(&mix).unwrap();
        assert_eq!(out.embedding.dims(), &[2, 640]);
        let r = m.reconstruct(Instrument::Piano, &out, &mix).unwrap();
        assert_eq!(r.dims(), mix.dims());
        assert_eq!(r.le(&mix).unwrap().min_all().unwrap().to_scalar::<u8>().unwrap(), 1);
    }

    #[test]
    fn embeddings_are_deterministic_and_input_dependent() {
        let c = synth_corpus(2, 2.0, 3, 4000).unwrap().corpus;
        let m = InMsrl::new(&ModelConfig::desk(), Family::Clean, 4, DType::F32).unwrap();
        let a = &c.pieces()[0].stems;
        let b = &c.pieces()[1].stems;
        let e1 = m.embed_vectors(Instrument::Drums, &[a, b], 2).unwrap();
        let e2 = m.embed_vectors(Instrument::Drums, &[a, b], 1).unwrap();
        assert_eq!(e1.len(), 2);
        for (x, y) in e1[0].iter().zip(&e2[0]) {
            assert!((x - y).abs() < 1e-5);
        }
        let d: f32 = e1[0].iter().zip(&e1[1]).map(|(x, y)| (x - y).powi(2)).sum::<f32>().sqrt();
        assert!(d >= 1e-6);
    }
}
