use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::segments::{SegmentPool, DEFAULT_SILENCE_DBFS};
use super::{Corpus, Instrument, Provenance, Segment, SegmentRef, StemSet, Triplet};
use crate::error::{invalid, Error, Result};

const MAX_RETRIES: usize = 64;

/// A non-empty subset of the five instruments, stored as a bit mask with
/// bit `i` set for `Instrument::ALL[i]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CombinationPattern(u8);

impl CombinationPattern {
    /// Number of non-silent patterns.
    pub const COUNT: usize = 31;

    pub fn new(bits: u8) -> Result<Self> {
        if bits == 0 || bits > 31 {
            return Err(invalid(format!("pattern bits {bits} outside 1..=31")));
        }
        Ok(Self(bits))
    }

    pub fn all() -> Self {
        Self(31)
    }

    pub fn single(inst: Instrument) -> Self {
        Self(1 << inst.index())
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn contains(self, inst: Instrument) -> bool {
        self.0 & (1 << inst.index()) != 0
    }

    pub fn instruments(self) -> Vec<Instrument> {
        Instrument::ALL.into_iter().filter(|i| self.contains(*i)).collect()
    }

    /// Uniform draw over the 31 patterns.
    pub fn random(rng: &mut impl Rng) -> Self {
        Self(rng.random_range(1..=31))
    }
}

/// Seeded sampler over a fixed segment grid of one corpus.
pub struct TripletSampler<'a> {
    corpus: &'a Corpus,
    pool: SegmentPool,
    rng: ChaCha8Rng,
}

impl<'a> TripletSampler<'a> {
    /// Non-overlapping grid of `duration_s` segments, default silence rule.
    pub fn new(corpus: &'a Corpus, duration_s: f64, seed: u64) -> Result<Self> {
        let pool = SegmentPool::new(corpus, duration_s, duration_s, DEFAULT_SILENCE_DBFS)?;
        Ok(Self::with_pool(corpus, pool, seed))
    }

    pub fn with_pool(corpus: &'a Corpus, pool: SegmentPool, seed: u64) -> Self {
        Self {
            corpus,
            pool,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn corpus(&self) -> &'a Corpus {
        self.corpus
    }

    pub fn pool(&self) -> &SegmentPool {
        &self.pool
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    fn seg_ref(&self, piece: usize, grid: usize) -> SegmentRef {
        let p = &self.corpus.pieces()[piece];
        SegmentRef::from_samples(
            &p.id,
            self.pool.starts(piece)[grid],
            self.pool.segment_len(),
            self.corpus.sample_rate(),
        )
    }

    fn compose(&self, target: Instrument, t: (usize, usize), o: (usize, usize)) -> Result<Segment> {
        let len = self.pool.segment_len();
        let pieces = self.corpus.pieces();
        let t_start = self.pool.starts(t.0)[t.1];
        let o_start = self.pool.starts(o.0)[o.1];
        let stems = Instrument::ALL.map(|i| {
            if i == target {
                pieces[t.0].stems.stem(i).slice(t_start, len)
            } else {
                pieces[o.0].stems.stem(i).slice(o_start, len)
            }
        });
        let t_ref = self.seg_ref(t.0, t.1);
        let o_ref = self.seg_ref(o.0, o.1);
        Ok(Segment {
            stems: StemSet::new(stems)?,
            sources: Instrument::ALL.map(|i| if i == target { t_ref.clone() } else { o_ref.clone() }),
        })
    }

    /// An unmodified segment of one piece.
    pub fn normal_segment(&self, piece: usize, grid: usize) -> Result<Segment> {
        self.compose(Instrument::Drums, (piece, grid), (piece, grid))
    }

    /// A random segment where `target` is audible.
    pub fn sample_segment(&mut self, target: Instrument) -> Result<Segment> {
        let eligible = self.pool.eligible_pieces(target, 1);
        let &p = eligible
            .choose(&mut self.rng)
            .ok_or_else(|| Error::Insufficient(format!("no audible {target} segment")))?;
        let &g = self.pool.audible(p, target).choose(&mut self.rng).expect("eligible");
        self.normal_segment(p, g)
    }

    /// Same-song triplet: anchor and positive are two different segments of
    /// one piece, the negative comes from another piece. All three have the
    /// target instrument audible.
    pub fn sample_s4_triplet(&mut self, target: Instrument) -> Result<Triplet> {
        let anchors = self.pool.eligible_pieces(target, 2);
        let others = self.pool.eligible_pieces(target, 1);
        if anchors.is_empty() || others.len() < 2 {
            return Err(Error::Insufficient(format!(
                "need two pieces with audible {target}, one of them with two segments"
            )));
        }
        let &pa = anchors.choose(&mut self.rng).expect("non-empty");
        let mut grid: Vec<usize> = self.pool.audible(pa, target).to_vec();
        let (ga, rest) = {
            let i = self.rng.random_range(0..grid.len());
            let ga = grid.swap_remove(i);
            (ga, grid)
        };
        let &gp = rest.choose(&mut self.rng).expect("two audible segments");
        let negatives: Vec<usize> = others.into_iter().filter(|&p| p != pa).collect();
        let &pn = negatives.choose(&mut self.rng).expect("another piece");
        let &gn = self.pool.audible(pn, target).choose(&mut self.rng).expect("eligible");
        Ok(Triplet {
            anchor: self.normal_segment(pa, ga)?,
            positive: self.normal_segment(pa, gp)?,
            negative: self.normal_segment(pn, gn)?,
            target,
            provenance: Provenance::S4,
        })
    }

    /// Pseudo piece: the target stem from a random audible segment of
    /// `target_src`, all other stems from a random segment of
    /// `nontarget_src`.
    pub fn make_pseudo_piece(
        &mut self,
        target: Instrument,
        target_src: usize,
        nontarget_src: usize,
    ) -> Result<Segment> {
        if self.pool.starts(nontarget_src).is_empty() {
            return Err(Error::Insufficient(format!("piece {nontarget_src} has no segments")));
        }
        let g = self.pick_audible(target_src, target, None)?;
        let o = self.random_grid(nontarget_src);
        self.compose(target, (target_src, g), (nontarget_src, o))
    }

    fn pick_audible(&mut self, piece: usize, inst: Instrument, exclude: Option<usize>) -> Result<usize> {
        let choices: Vec<usize> = self
            .pool
            .audible(piece, inst)
            .iter()
            .copied()
            .filter(|g| Some(*g) != exclude)
            .collect();
        choices.choose(&mut self.rng).copied().ok_or_else(|| {
            Error::Insufficient(format!(
                "piece {} has no audible {inst} segment",
                self.corpus.pieces()[piece].id
            ))
        })
    }

    fn random_grid(&mut self, piece: usize) -> usize {
        self.rng.random_range(0..self.pool.starts(piece).len())
    }

    /// Basic and additional pseudo-piece triplets for `target`.
    ///
    /// With target source `Pt`, anchor non-target source `Po`, a third piece
    /// `P3` and a negative target source `Pn`:
    /// anchor = (Pt, Po), positive = (Pt', P3), negative = (Pn, Po).
    /// The additional triplet swaps positive and negative and targets another
    /// instrument drawn uniformly from `additional_targets` minus `target`.
    pub fn sample_pseudo_triplet(
        &mut self,
        target: Instrument,
        additional_targets: &[Instrument],
    ) -> Result<(Triplet, Triplet)> {
        let n = self.corpus.len();
        if n < 3 {
            return Err(Error::Insufficient(format!(
                "pseudo triplets need at least 3 pieces, corpus has {n}"
            )));
        }
        let alternatives: Vec<Instrument> =
            additional_targets.iter().copied().filter(|i| *i != target).collect();
        if alternatives.is_empty() {
            return Err(invalid("no instrument available for the additional triplet"));
        }
        let t_sources = self.pool.eligible_pieces(target, 2);
        let n_sources = self.pool.eligible_pieces(target, 1);
        let nonempty: Vec<usize> = (0..n).filter(|&p| !self.pool.starts(p).is_empty()).collect();

        for _ in 0..MAX_RETRIES {
            let Some(&pt) = t_sources.choose(&mut self.rng) else {
                break;
            };
            let po_choices: Vec<usize> = nonempty.iter().copied().filter(|&p| p != pt).collect();
            let Some(&po) = po_choices.choose(&mut self.rng) else {
                break;
            };
            let p3_choices: Vec<usize> = po_choices.iter().copied().filter(|&p| p != po).collect();
            let Some(&p3) = p3_choices.choose(&mut self.rng) else {
                break;
            };
            let pn_choices: Vec<usize> =
                n_sources.iter().copied().filter(|&p| p != pt && p != po).collect();
            let Some(&pn) = pn_choices.choose(&mut self.rng) else {
                break;
            };

            let ga = self.pick_audible(pt, target, None)?;
            let gp = self.pick_audible(pt, target, Some(ga))?;
            let gn = self.pick_audible(pn, target, None)?;
            let (oa, op, on) = (self.random_grid(po), self.random_grid(p3), self.random_grid(po));
            let extra = *alternatives.choose(&mut self.rng).expect("non-empty");
            let extra_ok = self.pool.is_audible(po, extra, oa)
                && self.pool.is_audible(po, extra, on)
                && self.pool.is_audible(p3, extra, op);
            if !extra_ok {
                continue;
            }

            let anchor = self.compose(target, (pt, ga), (po, oa))?;
            let positive = self.compose(target, (pt, gp), (p3, op))?;
            let negative = self.compose(target, (pn, gn), (po, on))?;
            let additional = Triplet {
                anchor: anchor.clone(),
                positive: negative.clone(),
                negative: positive.clone(),
                target: extra,
                provenance: Provenance::PseudoAdditional,
            };
            let basic = Triplet {
                anchor,
                positive,
                negative,
                target,
                provenance: Provenance::PseudoBasic,
            };
            return Ok((basic, additional));
        }
        Err(Error::Insufficient(format!(
            "could not assemble a pseudo triplet for {target} with audible stems"
        )))
    }

    /// Mix of a uniformly drawn combination pattern of `stems`.
    pub fn sample_combination_input(&mut self, stems: &StemSet) -> Result<(StemSet, CombinationPattern)> {
        let pattern = CombinationPattern::random(&mut self.rng);
        Ok((stems.with_pattern(pattern)?, pattern))
    }
}
