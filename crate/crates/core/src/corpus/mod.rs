//! Multi-stem corpora, segment slicing and triplet construction.
//!
//! A [`Corpus`] holds full-length pieces in memory and is immutable once
//! built. Random sampling goes through a [`TripletSampler`], which owns its
//! own seeded rng; use one sampler per worker.

mod manifest;
mod paft;
mod segments;
mod synth;
mod triplets;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dsp::Waveform;
use crate::error::{invalid, Error, Result};

pub use manifest::{load_corpus, load_manifest, write_manifest, PieceManifest};
pub use paft::{build_paft_triplets, PaftRegime, PaftTriplets};
pub use segments::{
    is_silent, segment_starts, slice_segments, SegmentPool, DEFAULT_SILENCE_DBFS,
};
pub use synth::{synth_corpus, write_synth_corpus, PieceParams, SynthCorpus, ToneParams};
pub use triplets::{CombinationPattern, TripletSampler};

/// The five stem classes every piece carries, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Instrument {
    Drums,
    Bass,
    Piano,
    Guitar,
    Residuals,
}

impl Instrument {
    pub const ALL: [Instrument; 5] = [
        Instrument::Drums,
        Instrument::Bass,
        Instrument::Piano,
        Instrument::Guitar,
        Instrument::Residuals,
    ];

    pub const COUNT: usize = 5;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Instrument> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Instrument::Drums => "drums",
            Instrument::Bass => "bass",
            Instrument::Piano => "piano",
            Instrument::Guitar => "guitar",
            Instrument::Residuals => "residuals",
        }
    }
}

impl fmt::Display for Instrument {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Instrument {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Instrument::ALL
            .into_iter()
            .find(|i| i.name() == s)
            .ok_or_else(|| invalid(format!("unknown instrument {s:?}")))
    }
}

/// Per-instrument stems plus their mix.
///
/// The mix is the sample-wise stem sum, scaled by `1 / peak` when the sum
/// would clip. [`StemSet::gain`] reports that scale so targets can be put on
/// the same level as the mix.
#[derive(Debug, Clone, PartialEq)]
pub struct StemSet {
    stems: [Waveform; 5],
    mix: Waveform,
    gain: f64,
}

impl StemSet {
    pub fn new(stems: [Waveform; 5]) -> Result<Self> {
        let sum = Waveform::sum(stems.iter())?;
        let peak = sum.peak();
        let gain = if peak > 1.0 { 1.0 / peak } else { 1.0 };
        let mix = if gain == 1.0 { sum } else { sum.scaled(gain) };
        Ok(Self { stems, mix, gain })
    }

    pub fn stem(&self, inst: Instrument) -> &Waveform {
        &self.stems[inst.index()]
    }

    pub fn stems(&self) -> &[Waveform; 5] {
        &self.stems
    }

    pub fn mix(&self) -> &Waveform {
        &self.mix
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    /// The stem at the level it has inside the mix.
    pub fn stem_in_mix(&self, inst: Instrument) -> Waveform {
        self.stem(inst).scaled(self.gain)
    }

    pub fn len(&self) -> usize {
        self.mix.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mix.is_empty()
    }

    pub fn sample_rate(&self) -> u32 {
        self.mix.sample_rate()
    }

    pub fn duration_s(&self) -> f64 {
        self.mix.duration_s()
    }

    /// Re-mixed sub-range; normalization is recomputed for the slice.
    pub fn slice(&self, start: usize, len: usize) -> Result<StemSet> {
        if start + len > self.len() {
            return Err(invalid(format!(
                "slice {start}+{len} exceeds {} samples",
                self.len()
            )));
        }
        StemSet::new(self.stems.clone().map(|s| s.slice(start, len)))
    }

    /// Keeps only the stems present in `pattern`, zeroing the rest.
    pub fn with_pattern(&self, pattern: CombinationPattern) -> Result<StemSet> {
        let stems = Instrument::ALL.map(|i| {
            if pattern.contains(i) {
                self.stem(i).clone()
            } else {
                Waveform::zeros(self.len(), self.sample_rate())
            }
        });
        StemSet::new(stems)
    }

    /// A stem set holding only `inst`.
    pub fn only(&self, inst: Instrument) -> Result<StemSet> {
        self.with_pattern(CombinationPattern::single(inst))
    }
}

/// One full-length piece of a corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct Piece {
    pub id: String,
    pub stems: StemSet,
}

/// Pieces ordered by id; ids are unique.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pieces: Vec<Piece>,
}

impl Corpus {
    pub fn new(mut pieces: Vec<Piece>) -> Result<Self> {
        if pieces.is_empty() {
            return Err(Error::Insufficient("corpus has no pieces".into()));
        }
        pieces.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = pieces.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(invalid(format!("duplicate piece id {:?}", w[0].id)));
        }
        let sr = pieces[0].stems.sample_rate();
        if let Some(p) = pieces.iter().find(|p| p.stems.sample_rate() != sr) {
            return Err(invalid(format!(
                "piece {} has sample rate {}, expected {sr}",
                p.id,
                p.stems.sample_rate()
            )));
        }
        Ok(Self { pieces })
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn sample_rate(&self) -> u32 {
        self.pieces[0].stems.sample_rate()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.pieces.binary_search_by(|p| p.id.as_str().cmp(id)).ok()
    }

    pub fn piece(&self, id: &str) -> Result<&Piece> {
        self.index_of(id)
            .map(|i| &self.pieces[i])
            .ok_or_else(|| invalid(format!("unknown piece {id:?}")))
    }

    /// Audio for a segment reference, re-mixed over the segment.
    pub fn segment(&self, r: &SegmentRef) -> Result<StemSet> {
        let piece = self.piece(&r.piece_id)?;
        let (start, len) = r.sample_range(self.sample_rate());
        piece.stems.slice(start, len)
    }

    /// Segment whose `target` stem comes from `target_ref` and whose other
    /// stems come from `other_ref`. Both references must have equal length.
    pub fn pseudo_segment(
        &self,
        target: Instrument,
        target_ref: &SegmentRef,
        other_ref: &SegmentRef,
    ) -> Result<Segment> {
        let sr = self.sample_rate();
        let (ts, tl) = target_ref.sample_range(sr);
        let (os, ol) = other_ref.sample_range(sr);
        if tl != ol {
            return Err(invalid(format!("segment lengths differ: {tl} vs {ol} samples")));
        }
        let tp = self.piece(&target_ref.piece_id)?;
        let op = self.piece(&other_ref.piece_id)?;
        if ts + tl > tp.stems.len() || os + ol > op.stems.len() {
            return Err(invalid("segment reference exceeds its piece"));
        }
        let stems = Instrument::ALL.map(|i| {
            if i == target {
                tp.stems.stem(i).slice(ts, tl)
            } else {
                op.stems.stem(i).slice(os, ol)
            }
        });
        Ok(Segment {
            stems: StemSet::new(stems)?,
            sources: Instrument::ALL.map(|i| {
                if i == target {
                    target_ref.clone()
                } else {
                    other_ref.clone()
                }
            }),
        })
    }

    /// Splits pieces into `(train, validation)` with the validation share
    /// `val_fraction`, keeping at least one piece on each side.
    pub fn split(&self, val_fraction: f64) -> Result<(Corpus, Corpus)> {
        if self.len() < 2 {
            return Err(Error::Insufficient("need two pieces to split".into()));
        }
        let n_val = ((self.len() as f64 * val_fraction).round() as usize).clamp(1, self.len() - 1);
        let split = self.len() - n_val;
        Ok((
            Corpus::new(self.pieces[..split].to_vec())?,
            Corpus::new(self.pieces[split..].to_vec())?,
        ))
    }

    pub fn subset(&self, ids: &[String]) -> Result<Corpus> {
        Corpus::new(
            ids.iter()
                .map(|id| self.piece(id).cloned())
                .collect::<Result<_>>()?,
        )
    }
}

/// A time range inside one piece, in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRef {
    pub piece_id: String,
    pub start: f64,
    pub duration: f64,
}

impl SegmentRef {
    pub fn new(piece_id: impl Into<String>, start: f64, duration: f64) -> Self {
        Self {
            piece_id: piece_id.into(),
            start,
            duration,
        }
    }

    pub fn from_samples(piece_id: &str, start: usize, len: usize, sample_rate: u32) -> Self {
        Self::new(
            piece_id,
            start as f64 / sample_rate as f64,
            len as f64 / sample_rate as f64,
        )
    }

    pub fn sample_range(&self, sample_rate: u32) -> (usize, usize) {
        let sr = sample_rate as f64;
        ((self.start * sr).round() as usize, (self.duration * sr).round() as usize)
    }
}

/// A segment of (possibly pseudo) audio with the origin of every stem.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub stems: StemSet,
    pub sources: [SegmentRef; 5],
}

impl Segment {
    pub fn source(&self, inst: Instrument) -> &SegmentRef {
        &self.sources[inst.index()]
    }

    /// Piece that supplied the stem of `inst`.
    pub fn source_piece(&self, inst: Instrument) -> &str {
        &self.sources[inst.index()].piece_id
    }
}

/// Where a triplet came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    S4,
    PseudoBasic,
    PseudoAdditional,
    Abx,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Triplet {
    pub anchor: Segment,
    pub positive: Segment,
    pub negative: Segment,
    pub target: Instrument,
    pub provenance: Provenance,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn const_wave(v: f64, n: usize) -> Waveform {
        Waveform::new(vec![v; n], 100).unwrap()
    }

    #[test]
    fn mix_is_normalized_sum() {
        let s = StemSet::new([0.1, 0.2, 0.3, 0.4, 0.5].map(|v| const_wave(v, 4))).unwrap();
        assert!((s.gain() - 1.0 / 1.5).abs() < 1e-12);
        for v in s.mix().samples() {
            assert!((v - 1.0).abs() < 1e-12);
        }
        let quiet = StemSet::new([0.1; 5].map(|v| const_wave(v, 4))).unwrap();
        assert_eq!(quiet.gain(), 1.0);
        assert!((quiet.mix().samples()[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn stems_must_match() {
        let mut stems = [0.1; 5].map(|v| const_wave(v, 4));
        stems[2] = const_wave(0.1, 5);
        assert!(StemSet::new(stems).is_err());
    }

    #[test]
    fn instrument_names_roundtrip() {
        for i in Instrument::ALL {
            assert_eq!(i.name().parse::<Instrument>().unwrap(), i);
            assert_eq!(Instrument::from_index(i.index()), Some(i));
        }
        assert!("vocals".parse::<Instrument>().is_err());
    }
}
