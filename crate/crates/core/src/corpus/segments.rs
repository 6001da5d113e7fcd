use super::{Corpus, Instrument, Piece, SegmentRef};
use crate::dsp::Waveform;
use crate::error::{invalid, Result};

/// Segments quieter than this RMS level count as silent.
pub const DEFAULT_SILENCE_DBFS: f64 = -60.0;

/// True iff the RMS level in dBFS is strictly below `threshold_dbfs`.
pub fn is_silent(segment: &Waveform, threshold_dbfs: f64) -> bool {
    let rms = segment.rms();
    if rms == 0.0 {
        return true;
    }
    20.0 * rms.log10() < threshold_dbfs
}

/// Start offsets of every whole window of `len` samples stepping by `hop`.
/// A trailing partial window is dropped.
pub fn segment_starts(total: usize, len: usize, hop: usize) -> Vec<usize> {
    if len == 0 || hop == 0 || len > total {
        return Vec::new();
    }
    (0..=(total - len) / hop).map(|k| k * hop).collect()
}

/// Cuts a piece into fixed-length segment references.
pub fn slice_segments(piece: &Piece, duration_s: f64, hop_s: f64) -> Result<Vec<SegmentRef>> {
    if !(duration_s > 0.0) || !(hop_s > 0.0) {
        return Err(invalid("segment duration and hop must be positive"));
    }
    let sr = piece.stems.sample_rate();
    let len = (duration_s * sr as f64).round() as usize;
    let hop = (hop_s * sr as f64).round() as usize;
    if len > piece.stems.len() {
        return Err(invalid(format!(
            "segment of {duration_s} s is longer than piece {} ({:.3} s)",
            piece.id,
            piece.stems.duration_s()
        )));
    }
    Ok(segment_starts(piece.stems.len(), len, hop)
        .into_iter()
        .map(|s| SegmentRef::from_samples(&piece.id, s, len, sr))
        .collect())
}

/// Precomputed segment grid of a corpus with per-instrument silence flags.
#[derive(Debug, Clone)]
pub struct SegmentPool {
    len: usize,
    starts: Vec<Vec<usize>>,
    /// `audible[piece][inst]` lists grid indices where `inst` is not silent.
    audible: Vec<[Vec<usize>; 5]>,
}

impl SegmentPool {
    pub fn new(corpus: &Corpus, duration_s: f64, hop_s: f64, threshold_dbfs: f64) -> Result<Self> {
        let sr = corpus.sample_rate() as f64;
        let len = (duration_s * sr).round() as usize;
        let hop = (hop_s * sr).round() as usize;
        if len == 0 || hop == 0 {
            return Err(invalid("segment duration and hop must be positive"));
        }
        let mut starts = Vec::with_capacity(corpus.len());
        let mut audible = Vec::with_capacity(corpus.len());
        for piece in corpus.pieces() {
            let s = segment_starts(piece.stems.len(), len, hop);
            let flags = Instrument::ALL.map(|inst| {
                s.iter()
                    .enumerate()
                    .filter(|(_, &st)| !is_silent(&piece.stems.stem(inst).slice(st, len), threshold_dbfs))
                    .map(|(k, _)| k)
                    .collect()
            });
            starts.push(s);
            audible.push(flags);
        }
        Ok(Self {
            len,
            starts,
            audible,
        })
    }

    pub fn segment_len(&self) -> usize {
        self.len
    }

    pub fn starts(&self, piece: usize) -> &[usize] {
        &self.starts[piece]
    }

    pub fn audible(&self, piece: usize, inst: Instrument) -> &[usize] {
        &self.audible[piece][inst.index()]
    }

    pub fn is_audible(&self, piece: usize, inst: Instrument, grid: usize) -> bool {
        self.audible[piece][inst.index()].binary_search(&grid).is_ok()
    }

    /// Pieces with at least `min` audible segments of `inst`.
    pub fn eligible_pieces(&self, inst: Instrument, min: usize) -> Vec<usize> {
        (0..self.audible.len())
            .filter(|&p| self.audible[p][inst.index()].len() >= min)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::StemSet;

    fn piece(seconds: f64, sr: u32) -> Piece {
        let n = (seconds * sr as f64).round() as usize;
        let w = Waveform::new(vec![0.1; n], sr).unwrap();
        Piece {
            id: "p".into(),
            stems: StemSet::new([(); 5].map(|_| w.clone())).unwrap(),
        }
    }

    #[test]
    fn slicing_counts() {
        assert_eq!(slice_segments(&piece(30.0, 100), 3.0, 3.0).unwrap().len(), 10);
        assert_eq!(slice_segments(&piece(10.0, 100), 10.0, 10.0).unwrap().len(), 1);
        assert_eq!(slice_segments(&piece(9.5, 100), 3.0, 3.0).unwrap().len(), 3);
        assert!(slice_segments(&piece(2.0, 100), 3.0, 3.0).is_err());
    }

    #[test]
    fn non_overlapping_when_hop_equals_duration() {
        let segs = slice_segments(&piece(12.0, 100), 3.0, 3.0).unwrap();
        for w in segs.windows(2) {
            assert!((w[0].start + w[0].duration - w[1].start).abs() < 1e-9);
        }
    }

    #[test]
    fn silence_rule() {
        assert!(is_silent(&Waveform::zeros(100, 100), -60.0));
        let sine: Vec<f64> = (0..1000)
            .map(|n| (2.0 * std::f64::consts::PI * n as f64 / 50.0).sin())
            .collect();
        assert!(!is_silent(&Waveform::new(sine, 1000).unwrap(), -60.0));
        // Threshold placed exactly on the measured level: not silent.
        let at = Waveform::new(vec![1e-3; 64], 1000).unwrap();
        let level = 20.0 * at.rms().log10();
        assert!((level + 60.0).abs() < 1e-9);
        assert!(!is_silent(&at, level));
        assert!(is_silent(&Waveform::new(vec![0.9e-3; 64], 1000).unwrap(), -60.0));
    }
}
