use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{slice_segments, Corpus, Instrument, Segment, SegmentRef};
use crate::error::{Error, Result};

pub const MES_TARGET_PIECES: usize = 10;
pub const MES_NONTARGET_PER_TARGET: usize = 3;
pub const VIS_PIECES: usize = 10;
pub const VIS_SEGMENTS_PER_PAIR: usize = 10;

/// One piece of the MES-Pseudo test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestPiece {
    /// Identity used for same-piece exclusion.
    pub piece_id: String,
    pub target_label: String,
    pub nontarget_label: String,
}

impl TestPiece {
    pub fn is_pseudo(&self) -> bool {
        self.target_label != self.nontarget_label
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MesPseudoSet {
    pub target: Instrument,
    pub pieces: Vec<TestPiece>,
}

/// Ten target pieces, each paired with three further pieces that supply the
/// non-target stems, plus the ten unmodified target pieces.
pub fn build_mes_pseudo_set(corpus: &Corpus, target: Instrument, seed: u64) -> Result<MesPseudoSet> {
    let ids: Vec<String> = corpus.pieces().iter().map(|p| p.id.clone()).collect();
    build_mes_pseudo_set_from_ids(&ids, target, seed)
}

pub fn build_mes_pseudo_set_from_ids(ids: &[String], target: Instrument, seed: u64) -> Result<MesPseudoSet> {
    let need = MES_TARGET_PIECES * (1 + MES_NONTARGET_PER_TARGET);
    if ids.len() < need {
        return Err(Error::Insufficient(format!(
            "MES-Pseudo needs {need} pieces, corpus has {}",
            ids.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled = ids.to_vec();
    shuffled.shuffle(&mut rng);
    let (targets, rest) = shuffled.split_at(MES_TARGET_PIECES);
    let mut pieces = Vec::with_capacity(need);
    for (k, t) in targets.iter().enumerate() {
        for n in &rest[k * MES_NONTARGET_PER_TARGET..(k + 1) * MES_NONTARGET_PER_TARGET] {
            pieces.push(TestPiece {
                piece_id: format!("{t}+{n}"),
                target_label: t.clone(),
                nontarget_label: n.clone(),
            });
        }
        pieces.push(TestPiece {
            piece_id: t.clone(),
            target_label: t.clone(),
            nontarget_label: t.clone(),
        });
    }
    Ok(MesPseudoSet { target, pieces })
}

/// Aligned segments of one test piece: the target stem of `target_label`
/// and the other stems of `nontarget_label`, cut on a common grid.
pub fn test_piece_segments(
    corpus: &Corpus,
    target: Instrument,
    piece: &TestPiece,
    duration_s: f64,
) -> Result<Vec<Segment>> {
    let t = slice_segments(corpus.piece(&piece.target_label)?, duration_s, duration_s)?;
    let o = slice_segments(corpus.piece(&piece.nontarget_label)?, duration_s, duration_s)?;
    t.iter()
        .zip(&o)
        .map(|(tr, or)| corpus.pseudo_segment(target, tr, or))
        .collect()
}

/// A labeled pseudo segment for visualization export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisSegment {
    pub color_label: String,
    pub shape_label: String,
    pub target_ref: SegmentRef,
    pub other_ref: SegmentRef,
}

/// 10 x 10 (target, non-target) piece pairs with 10 random segments each.
/// Diagonal pairs use one piece in both roles.
pub fn build_visualization_set(
    corpus: &Corpus,
    target: Instrument,
    duration_s: f64,
    seed: u64,
) -> Result<Vec<VisSegment>> {
    if corpus.len() < VIS_PIECES {
        return Err(Error::Insufficient(format!(
            "visualization needs {VIS_PIECES} pieces, corpus has {}",
            corpus.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ target.index() as u64);
    let mut idx: Vec<usize> = (0..corpus.len()).collect();
    idx.shuffle(&mut rng);
    let grids: Vec<Vec<SegmentRef>> = idx[..VIS_PIECES]
        .iter()
        .map(|&i| slice_segments(&corpus.pieces()[i], duration_s, duration_s))
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(VIS_PIECES * VIS_PIECES * VIS_SEGMENTS_PER_PAIR);
    for tg in &grids {
        for og in &grids {
            for _ in 0..VIS_SEGMENTS_PER_PAIR {
                let tr = tg.choose(&mut rng).expect("slice_segments is non-empty");
                let or = og.choose(&mut rng).expect("slice_segments is non-empty");
                out.push(VisSegment {
                    color_label: tr.piece_id.clone(),
                    shape_label: or.piece_id.clone(),
                    target_ref: tr.clone(),
                    other_ref: or.clone(),
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::{BTreeMap, BTreeSet};

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i:03}")).collect()
    }

    #[test]
    fn pseudo_set_shape() {
        let s = build_mes_pseudo_set_from_ids(&ids(45), Instrument::Drums, 3).unwrap();
        assert_eq!(s.pieces.iter().filter(|p| p.is_pseudo()).count(), 30);
        assert_eq!(s.pieces.iter().filter(|p| !p.is_pseudo()).count(), 10);
        let mut per_target: BTreeMap<&str, usize> = BTreeMap::new();
        for p in &s.pieces {
            *per_target.entry(&p.target_label).or_default() += 1;
        }
        assert!(per_target.values().all(|&c| c == 4));
        let targets: BTreeSet<&str> = per_target.keys().copied().collect();
        let nontargets: BTreeSet<&str> =
            s.pieces.iter().filter(|p| p.is_pseudo()).map(|p| p.nontarget_label.as_str()).collect();
        assert_eq!(nontargets.len(), 30);
        assert!(targets.is_disjoint(&nontargets));
    }

    #[test]
    fn pseudo_set_too_small() {
        assert!(build_mes_pseudo_set_from_ids(&ids(39), Instrument::Bass, 0).is_err());
    }

    #[test]
    fn visualization_set() {
        let c = crate::corpus::synth_corpus(12, 2.0, 5, 2000).unwrap().corpus;
        let v = build_visualization_set(&c, Instrument::Drums, 0.5, 1).unwrap();
        assert_eq!(v.len(), 1000);
        let pairs: BTreeSet<(&str, &str)> =
            v.iter().map(|s| (s.color_label.as_str(), s.shape_label.as_str())).collect();
        assert_eq!(pairs.len(), 100);
        assert_eq!(pairs.iter().filter(|(a, b)| a == b).count(), 10);
        assert_eq!(v, build_visualization_set(&c, Instrument::Drums, 0.5, 1).unwrap());
        assert!(build_visualization_set(&c.subset(&c.pieces()[..9].iter().map(|p| p.id.clone()).collect::<Vec<_>>()).unwrap(), Instrument::Drums, 0.5, 1).is_err());
    }
}
