use std::collections::{BTreeMap, HashMap};

use super::abx::{AbxEmbeddings, AbxRecord};
use super::index::{EmbeddingIndex, EmbeddingRow};
use super::sets::{test_piece_segments, MesPseudoSet, VisSegment};
use crate::corpus::{slice_segments, Corpus, Instrument, StemSet};
use crate::dsp::{global_sdr, istft, stft};
use crate::error::{Error, Result};
use crate::nets::{Family, InMsrl};

/// Segment length of MES test segments, seconds.
pub const MES_SEGMENT_S: f64 = 10.0;
/// Segment length of ABX stimuli, seconds.
pub const ABX_SEGMENT_S: f64 = 5.0;
/// Segments embedded per forward pass.
pub const EMBED_BATCH: usize = 8;

/// Maps equally long stem sets to one embedding each.
pub trait Embedder {
    fn embed(&self, inst: Instrument, stems: &[&StemSet]) -> Result<Vec<Vec<f32>>>;
    /// Whether vectors carry one subspace per instrument.
    fn disentangled(&self) -> bool;
}

impl Embedder for InMsrl {
    fn embed(&self, inst: Instrument, stems: &[&StemSet]) -> Result<Vec<Vec<f32>>> {
        self.embed_vectors(inst, stems, EMBED_BATCH)
    }

    fn disentangled(&self) -> bool {
        self.family() == Family::Direct
    }
}

/// Non-overlapping segments of every piece, embedded for `inst`.
pub fn mes_normal_index(model: &dyn Embedder, corpus: &Corpus, inst: Instrument, duration_s: f64) -> Result<EmbeddingIndex> {
    let mut rows = Vec::new();
    for piece in corpus.pieces() {
        let refs = slice_segments(piece, duration_s, duration_s)?;
        let sets = refs.iter().map(|r| corpus.segment(r)).collect::<Result<Vec<_>>>()?;
        let vs = model.embed(inst, &sets.iter().collect::<Vec<_>>())?;
        rows.extend(
            vs.into_iter()
                .enumerate()
                .map(|(k, v)| EmbeddingRow::normal(&piece.id, k, inst, v)),
        );
    }
    EmbeddingIndex::new(rows, model.disentangled())
}

/// Embedded segments of the 40 MES-Pseudo test pieces, labeled by the
/// source of their target stem.
pub fn mes_pseudo_index(model: &dyn Embedder, corpus: &Corpus, set: &MesPseudoSet, duration_s: f64) -> Result<EmbeddingIndex> {
    let mut rows = Vec::new();
    for piece in &set.pieces {
        let segs = test_piece_segments(corpus, set.target, piece, duration_s)?;
        let sets: Vec<&StemSet> = segs.iter().map(|s| &s.stems).collect();
        let vs = model.embed(set.target, &sets)?;
        rows.extend(vs.into_iter().enumerate().map(|(k, v)| EmbeddingRow {
            piece_id: piece.piece_id.clone(),
            segment_index: k,
            instrument: set.target,
            label: piece.target_label.clone(),
            shape_label: piece.nontarget_label.clone(),
            vector: v,
        }));
    }
    EmbeddingIndex::new(rows, model.disentangled())
}

/// Embeds nothing: every segment gets the same placeholder vector. Feed the
/// resulting index to [`one_hot_oracle`].
#[derive(Debug, Clone, Copy, Default)]
pub struct Placeholder;

impl Embedder for Placeholder {
    fn embed(&self, _: Instrument, stems: &[&StemSet]) -> Result<Vec<Vec<f32>>> {
        Ok(vec![vec![0.0; 5]; stems.len()])
    }

    fn disentangled(&self) -> bool {
        false
    }
}

/// Replaces every vector by a one-hot code of its label; a debugging
/// stand-in for a perfect model.
pub fn one_hot_oracle(index: &EmbeddingIndex) -> Result<EmbeddingIndex> {
    let mut codes: BTreeMap<&str, usize> = BTreeMap::new();
    for r in index.rows() {
        let n = codes.len();
        codes.entry(&r.label).or_insert(n);
    }
    let dim = codes.len().div_ceil(5) * 5;
    let rows = index
        .rows()
        .iter()
        .map(|r| {
            let mut v = vec![0.0; dim * 5];
            // Spread the code over every subspace so masking keeps it.
            for block in 0..5 {
                v[block * dim + codes[r.label.as_str()]] = 1.0;
            }
            EmbeddingRow { vector: v, ..r.clone() }
        })
        .collect();
    EmbeddingIndex::new(rows, false)
}

/// Embeddings of X, A and B of every record, keyed by record id.
pub fn abx_embeddings(model: &dyn Embedder, corpus: &Corpus, records: &[AbxRecord]) -> Result<HashMap<String, AbxEmbeddings>> {
    let mut out = HashMap::with_capacity(records.len());
    for inst in Instrument::ALL {
        let rs: Vec<&AbxRecord> = records.iter().filter(|r| r.instrument == inst).collect();
        if rs.is_empty() {
            continue;
        }
        let sets = rs
            .iter()
            .flat_map(|r| [&r.x, &r.a, &r.b])
            .map(|s| corpus.segment(s))
            .collect::<Result<Vec<_>>>()?;
        let vs = model.embed(inst, &sets.iter().collect::<Vec<_>>())?;
        for (r, v) in rs.iter().zip(vs.chunks(3)) {
            out.insert(
                r.record_id.clone(),
                AbxEmbeddings {
                    x: v[0].clone(),
                    a: v[1].clone(),
                    b: v[2].clone(),
                },
            );
        }
    }
    Ok(out)
}

/// Embeddings of visualization segments, ready for export.
pub fn visualization_rows(model: &dyn Embedder, corpus: &Corpus, target: Instrument, set: &[VisSegment]) -> Result<Vec<EmbeddingRow>> {
    let segs = set
        .iter()
        .map(|s| corpus.pseudo_segment(target, &s.target_ref, &s.other_ref))
        .collect::<Result<Vec<_>>>()?;
    let vs = model.embed(target, &segs.iter().map(|s| &s.stems).collect::<Vec<_>>())?;
    let mut counts: HashMap<(&str, &str), usize> = HashMap::new();
    Ok(set
        .iter()
        .zip(vs)
        .map(|(s, v)| {
            let k = counts.entry((&s.color_label, &s.shape_label)).or_default();
            *k += 1;
            EmbeddingRow {
                piece_id: format!("{}+{}", s.color_label, s.shape_label),
                segment_index: *k - 1,
                instrument: target,
                label: s.color_label.clone(),
                shape_label: s.shape_label.clone(),
                vector: v,
            }
        })
        .collect())
}

/// Mean SDR of a cascade's separated `inst` stem over non-overlapping
/// segments of every piece, reusing the mix phase and ignoring the tapered
/// segment edges. Segments whose reference stem is silent are skipped.
pub fn separation_sdr(model: &InMsrl, corpus: &Corpus, inst: Instrument, duration_s: f64) -> Result<f64> {
    if model.family() != Family::Cascade {
        return Err(Error::Config("separation SDR needs a Cascade model".into()));
    }
    let fe = model.frontend();
    let cfg = fe.stft_config();
    let (mut sum, mut n) = (0.0, 0usize);
    for piece in corpus.pieces() {
        for r in slice_segments(piece, duration_s, duration_s)? {
            let set = corpus.segment(&r)?;
            let reference = set.stem_in_mix(inst);
            if reference.peak() == 0.0 {
                continue;
            }
            let mix = stft(set.mix(), cfg.window, cfg.hop)?;
            let sep = model.separate(inst, &fe.batch(&[mix.magnitude()])?)?;
            let est = istft(&mix.with_magnitude(&fe.to_spectrogram(&sep, 0)?)?)?;
            // Skip the tapered edges of the inverse STFT.
            let edge = cfg.window - cfg.hop;
            let n_cmp = est.len().min(reference.len()).saturating_sub(2 * edge);
            if n_cmp == 0 {
                return Err(Error::Insufficient(format!("{duration_s} s segments are too short to score")));
            }
            sum += global_sdr(&est.slice(edge, n_cmp), &reference.slice(edge, n_cmp))?;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Insufficient(format!("no audible {inst} segments")));
    }
    Ok(sum / n as f64)
}
