//! Deterministic synthetic multi-stem corpus.
//!
//! Every piece gets its own signature per instrument: drums are resonant
//! noise/body hits on a piece-specific beat interval, the pitched
//! instruments cycle through a piece-specific set of fundamentals with
//! piece-specific timbre and envelopes. Segments of one piece therefore
//! resemble each other and differ from other pieces, instrument by
//! instrument.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{write_manifest, Corpus, Instrument, Piece, PieceManifest, StemSet};
use crate::dsp::{write_wav, WavFormat, Waveform};
use crate::error::{io_at, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrumParams {
    /// Inter-onset interval of the beat, unique per piece.
    pub interval_s: f64,
    pub resonance_hz: f64,
    pub body_hz: f64,
    pub decay_s: f64,
    pub noise_mix: f64,
    /// Every n-th hit is accented.
    pub accent_every: u32,
    pub level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToneParams {
    pub fundamentals_hz: Vec<f64>,
    /// Index into `fundamentals_hz` per note slot; `None` is a rest.
    pub sequence: Vec<Option<usize>>,
    pub note_s: f64,
    /// Harmonic `h` has amplitude `h^-rolloff`.
    pub rolloff: f64,
    /// Extra gain on odd harmonics.
    pub odd_gain: f64,
    /// Exponential note decay; large values sustain.
    pub decay_s: f64,
    pub tremolo_hz: f64,
    /// Silence before the instrument enters.
    pub entry_s: f64,
    pub level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PieceParams {
    pub piece_id: String,
    pub drums: DrumParams,
    pub bass: ToneParams,
    pub piano: ToneParams,
    pub guitar: ToneParams,
    pub residuals: ToneParams,
}

/// A rendered synthetic corpus with the parameter table that produced it.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub corpus: Corpus,
    pub params: Vec<PieceParams>,
    pub seed: u64,
}

fn piece_id(i: usize) -> String {
    format!("piece_{i:04}")
}

fn tone_params(
    rng: &mut ChaCha8Rng,
    range_hz: (f64, f64),
    note_s: (f64, f64),
    decay_s: (f64, f64),
    rest_p: f64,
    entry_p: f64,
    level: (f64, f64),
) -> ToneParams {
    let (lo, hi) = range_hz;
    let fundamentals_hz: Vec<f64> = (0..3)
        .map(|_| lo * (hi / lo).powf(rng.random::<f64>()))
        .collect();
    let sequence = (0..8)
        .map(|_| (!rng.random_bool(rest_p)).then(|| rng.random_range(0..3)))
        .collect();
    ToneParams {
        fundamentals_hz,
        sequence,
        note_s: rng.random_range(note_s.0..note_s.1),
        rolloff: rng.random_range(0.6..2.2),
        odd_gain: rng.random_range(0.5..1.5),
        decay_s: rng.random_range(decay_s.0..decay_s.1),
        tremolo_hz: rng.random_range(0.0..6.0),
        entry_s: if rng.random_bool(entry_p) {
            rng.random_range(2.0..8.0)
        } else {
            0.0
        },
        level: rng.random_range(level.0..level.1),
    }
}

fn draw_params(i: usize, interval_s: f64, rng: &mut ChaCha8Rng) -> PieceParams {
    let drums = DrumParams {
        interval_s,
        resonance_hz: 150.0 * (1600.0f64 / 150.0).powf(rng.random::<f64>()),
        body_hz: rng.random_range(45.0..140.0),
        decay_s: rng.random_range(0.03..0.15),
        noise_mix: rng.random_range(0.2..0.8),
        accent_every: rng.random_range(2..5),
        level: rng.random_range(0.25..0.4),
    };
    PieceParams {
        piece_id: piece_id(i),
        drums,
        bass: tone_params(rng, (40.0, 120.0), (0.3, 0.8), (0.3, 1.5), 0.1, 0.0, (0.2, 0.35)),
        piano: tone_params(rng, (180.0, 720.0), (0.2, 0.6), (0.1, 0.5), 0.1, 0.0, (0.15, 0.3)),
        guitar: tone_params(rng, (110.0, 450.0), (0.15, 0.5), (0.15, 0.8), 0.1, 0.3, (0.15, 0.3)),
        residuals: tone_params(rng, (250.0, 900.0), (0.8, 2.0), (2.0, 6.0), 0.0, 0.0, (0.08, 0.18)),
    }
}

fn quantize(samples: Vec<f64>, sample_rate: u32) -> Result<Waveform> {
    // Keep values representable in float32 so WAV round trips are exact.
    Waveform::new(samples.into_iter().map(|v| v as f32 as f64).collect(), sample_rate)
}

fn render_tone(p: &ToneParams, n: usize, sr: u32) -> Vec<f64> {
    let srf = sr as f64;
    let nyquist_guard = 0.45 * srf;
    let note_len = (p.note_s * srf).round().max(1.0) as usize;
    let entry = (p.entry_s * srf).round() as usize;
    let mut out = vec![0.0; n];
    for (t, o) in out.iter_mut().enumerate().skip(entry) {
        let local = t - entry;
        let slot = local / note_len;
        let Some(idx) = p.sequence[slot % p.sequence.len()] else {
            continue;
        };
        let f0 = p.fundamentals_hz[idx];
        let tau = (local % note_len) as f64 / srf;
        let env = (1.0 - (-tau / 0.01).exp()) * (-tau / p.decay_s).exp();
        let trem = 1.0 + 0.2 * (2.0 * PI * p.tremolo_hz * t as f64 / srf).sin();
        let mut v = 0.0;
        let mut h = 1;
        while h as f64 * f0 < nyquist_guard && h <= 8 {
            let odd = if h % 2 == 1 { p.odd_gain } else { 1.0 };
            v += odd * (h as f64).powf(-p.rolloff) * (2.0 * PI * h as f64 * f0 * tau).sin();
            h += 1;
        }
        *o = p.level * env * trem * v / 2.0;
    }
    out
}

fn render_drums(p: &DrumParams, n: usize, sr: u32, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let srf = sr as f64;
    let interval = (p.interval_s * srf).round().max(1.0) as usize;
    let hit_len = ((p.decay_s * 6.0) * srf).round() as usize;
    let resonance = p.resonance_hz.min(0.45 * srf);
    // Two-pole resonator driven by white noise.
    let r = (-PI * resonance / srf * 0.25).exp().min(0.995);
    let c1 = 2.0 * r * (2.0 * PI * resonance / srf).cos();
    let c2 = -r * r;
    let mut out = vec![0.0; n];
    let mut onset = 0usize;
    let mut k = 0u32;
    while onset < n {
        let accent = if k % p.accent_every == 0 { 1.0 } else { 0.6 };
        let (mut y1, mut y2) = (0.0, 0.0);
        for j in 0..hit_len.min(n - onset) {
            let tau = j as f64 / srf;
            let x = rng.random_range(-1.0..1.0);
            let y = (1.0 - r) * x + c1 * y1 + c2 * y2;
            y2 = y1;
            y1 = y;
            let body = (2.0 * PI * p.body_hz * tau).sin();
            let env = (-tau / p.decay_s).exp();
            out[onset + j] += p.level * accent * env * (p.noise_mix * 4.0 * y + (1.0 - p.noise_mix) * body);
        }
        onset += interval;
        k += 1;
    }
    for v in &mut out {
        *v = v.clamp(-1.0, 1.0);
    }
    out
}

fn render_piece(p: &PieceParams, n: usize, sr: u32, rng: &mut ChaCha8Rng) -> Result<StemSet> {
    let drums = quantize(render_drums(&p.drums, n, sr, rng), sr)?;
    let tone = |t: &ToneParams| quantize(render_tone(t, n, sr), sr);
    StemSet::new([
        drums,
        tone(&p.bass)?,
        tone(&p.piano)?,
        tone(&p.guitar)?,
        tone(&p.residuals)?,
    ])
}

/// Renders `n_pieces` pieces of `duration_s` seconds. Same arguments give
/// bit-identical audio.
pub fn synth_corpus(n_pieces: usize, duration_s: f64, seed: u64, sample_rate: u32) -> Result<SynthCorpus> {
    if n_pieces < 2 {
        return Err(Error::Insufficient(format!(
            "synthetic corpus needs at least 2 pieces, got {n_pieces}"
        )));
    }
    if !(duration_s > 0.0) || sample_rate == 0 {
        return Err(Error::InvalidInput("duration and sample rate must be positive".into()));
    }
    let n = (duration_s * sample_rate as f64).round() as usize;
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    // One interval bin per piece keeps beat intervals pairwise distinct.
    let mut bins: Vec<usize> = (0..n_pieces).collect();
    bins.shuffle(&mut master);
    let mut params = Vec::with_capacity(n_pieces);
    let mut pieces = Vec::with_capacity(n_pieces);
    for (i, bin) in bins.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64 + 1);
        let jitter = rng.random_range(0.1..0.9);
        let interval_s = 0.2 + 0.5 * (bin as f64 + jitter) / n_pieces as f64;
        let p = draw_params(i, interval_s, &mut rng);
        let stems = render_piece(&p, n, sample_rate, &mut rng)?;
        pieces.push(Piece {
            id: p.piece_id.clone(),
            stems,
        });
        params.push(p);
    }
    Ok(SynthCorpus {
        corpus: Corpus::new(pieces)?,
        params,
        seed,
    })
}

/// Writes float32 WAV stems, `manifest.json` and the `params.json` sidecar
/// under `out_dir`. Returns the manifest path.
pub fn write_synth_corpus(synth: &SynthCorpus, out_dir: &Path) -> Result<PathBuf> {
    let mut entries = Vec::with_capacity(synth.corpus.len());
    for piece in synth.corpus.pieces() {
        let dir = out_dir.join("stems").join(&piece.id);
        std::fs::create_dir_all(&dir).map_err(io_at(&dir))?;
        let mut stem_paths = std::collections::BTreeMap::new();
        for inst in Instrument::ALL {
            let p = dir.join(format!("{}.wav", inst.name()));
            write_wav(&p, piece.stems.stem(inst), WavFormat::Float32)?;
            stem_paths.insert(inst, p);
        }
        entries.push(PieceManifest {
            piece_id: piece.id.clone(),
            stem_paths,
        });
    }
    let manifest = out_dir.join("manifest.json");
    write_manifest(&manifest, &entries)?;
    let sidecar = out_dir.join("params.json");
    let doc = serde_json::json!({ "seed": synth.seed, "pieces": synth.params });
    std::fs::write(&sidecar, serde_json::to_string_pretty(&doc)? + "\n").map_err(io_at(&sidecar))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{load_corpus, load_manifest};

    #[test]
    fn same_seed_same_audio() {
        let a = synth_corpus(3, 2.0, 11, 4000).unwrap();
        let b = synth_corpus(3, 2.0, 11, 4000).unwrap();
        assert_eq!(a.corpus, b.corpus);
        assert_eq!(a.params, b.params);
        let c = synth_corpus(3, 2.0, 12, 4000).unwrap();
        assert_ne!(a.corpus, c.corpus);
    }

    #[test]
    fn too_few_pieces() {
        assert!(synth_corpus(0, 1.0, 1, 4000).is_err());
        assert!(synth_corpus(1, 1.0, 1, 4000).is_err());
    }

    #[test]
    fn drum_intervals_pairwise_distinct() {
        let s = synth_corpus(25, 1.0, 5, 4000).unwrap();
        for i in 0..s.params.len() {
            for j in i + 1..s.params.len() {
                assert_ne!(s.params[i].drums.interval_s, s.params[j].drums.interval_s);
            }
        }
    }

    #[test]
    fn disk_roundtrip_is_lossless() {
        let s = synth_corpus(2, 1.0, 3, 4000).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_synth_corpus(&s, dir.path()).unwrap();
        let loaded = load_corpus(&load_manifest(&manifest).unwrap()).unwrap();
        assert_eq!(loaded, s.corpus);
        assert!(dir.path().join("params.json").exists());
    }
}
