use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::abx::{AbxCondition, AbxRecord};
use super::embed::Embedder;
use crate::corpus::{slice_segments, Corpus, Instrument, SegmentRef, StemSet};
use crate::dsp::{log_mel, stft};
use crate::error::{Error, Result};

const STATS_WINDOW: usize = 256;
const STATS_HOP: usize = 128;
const STATS_BANDS: usize = 16;

/// Frame-averaged log-mel profile of the `inst` stem of a segment.
pub fn stem_statistics(corpus: &Corpus, r: &SegmentRef, inst: Instrument) -> Result<Vec<f64>> {
    stem_set_statistics(&corpus.segment(r)?, inst)
}

pub fn stem_set_statistics(stems: &StemSet, inst: Instrument) -> Result<Vec<f64>> {
    let stem = stems.stem_in_mix(inst);
    let m = log_mel(&stft(&stem, STATS_WINDOW, STATS_HOP)?.magnitude(), STATS_BANDS, stem.sample_rate())?;
    let mut mean = vec![0.0; STATS_BANDS];
    for f in 0..m.frames() {
        for (b, v) in mean.iter_mut().enumerate() {
            *v += m.get(f, b) / m.frames() as f64;
        }
    }
    Ok(mean)
}

/// Embeds segments by the statistics the synthetic listeners use.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleStats;

impl Embedder for OracleStats {
    fn embed(&self, inst: Instrument, stems: &[&StemSet]) -> Result<Vec<Vec<f32>>> {
        stems
            .iter()
            .map(|s| Ok(stem_set_statistics(s, inst)?.into_iter().map(|v| v as f32).collect()))
            .collect()
    }

    fn disentangled(&self) -> bool {
        false
    }
}

fn dist(a: &[f64], b: &[f64], weights: &[f64]) -> f64 {
    let w = |k: usize| weights.get(k).copied().unwrap_or(1.0);
    a.iter().zip(b).enumerate().map(|(k, (x, y))| w(k) * (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Options for [`synth_abx_records`].
#[derive(Debug, Clone, PartialEq)]
pub struct SynthAbxOptions {
    pub n_records: usize,
    pub segment_s: f64,
    pub voters: u32,
    /// Vote noise as a fraction of the median distance gap.
    pub noise: f64,
    /// Listener attention per statistics band; empty weighs all bands
    /// equally.
    pub band_weights: Vec<f64>,
    pub seed: u64,
}

impl Default for SynthAbxOptions {
    fn default() -> Self {
        Self {
            n_records: 100,
            segment_s: super::ABX_SEGMENT_S,
            voters: 10,
            noise: 0.25,
            band_weights: Vec::new(),
            seed: 0,
        }
    }
}

/// ABX records for `inst` whose votes follow an oracle: listeners prefer
/// the candidate whose stem statistics are closer to X's, with logistic
/// noise. Conditions alternate between All-Diff and One-Shared.
pub fn synth_abx_records(corpus: &Corpus, inst: Instrument, opts: &SynthAbxOptions) -> Result<Vec<AbxRecord>> {
    if opts.band_weights.iter().any(|w| !(*w >= 0.0)) || opts.band_weights.len() > STATS_BANDS {
        return Err(Error::Config(format!("band_weights needs at most {STATS_BANDS} non-negative values")));
    }
    if corpus.len() < 3 {
        return Err(Error::Insufficient("synthetic ABX records need at least 3 pieces".into()));
    }
    let grids = corpus
        .pieces()
        .iter()
        .map(|p| slice_segments(p, opts.segment_s, opts.segment_s))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let ids: Vec<usize> = (0..corpus.len()).collect();
    let mut draws = Vec::with_capacity(opts.n_records);
    for k in 0..opts.n_records {
        let condition = if k % 2 == 0 { AbxCondition::AllDiff } else { AbxCondition::OneShared };
        let picked: Vec<usize> = ids.choose_multiple(&mut rng, 3).copied().collect();
        let (px, pa, pb) = (picked[0], picked[1], picked[2]);
        let pick = |p: usize, rng: &mut ChaCha8Rng| grids[p].choose(rng).cloned().expect("non-empty grid");
        let x = pick(px, &mut rng);
        let (mut a, mut b) = (pick(pa, &mut rng), pick(pb, &mut rng));
        if condition == AbxCondition::OneShared {
            if grids[px].len() < 2 {
                return Err(Error::Insufficient("One-Shared records need two segments per piece".into()));
            }
            let other = loop {
                let s = pick(px, &mut rng);
                if s != x {
                    break s;
                }
            };
            if rng.random_bool(0.5) {
                a = other;
            } else {
                b = other;
            }
        }
        let sx = stem_statistics(corpus, &x, inst)?;
        let w = &opts.band_weights;
        let gap = dist(&sx, &stem_statistics(corpus, &b, inst)?, w) - dist(&sx, &stem_statistics(corpus, &a, inst)?, w);
        draws.push((condition, x, a, b, gap));
    }
    let mut gaps: Vec<f64> = draws.iter().map(|d| d.4.abs()).collect();
    gaps.sort_by(f64::total_cmp);
    let temperature = (gaps.get(gaps.len() / 2).copied().unwrap_or(1.0) * opts.noise).max(1e-12);
    Ok(draws
        .into_iter()
        .enumerate()
        .map(|(k, (condition, x, a, b, gap))| {
            let p_a = 1.0 / (1.0 + (-gap / temperature).exp());
            let votes_a = (0..opts.voters).filter(|_| rng.random_bool(p_a)).count() as u32;
            AbxRecord {
                record_id: format!("{inst}-{k:05}"),
                instrument: inst,
                condition,
                x,
                a,
                b,
                votes_a,
                votes_b: opts.voters - votes_a,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synth_corpus;

    #[test]
    fn records_are_valid_and_seeded() {
        let c = synth_corpus(6, 12.0, 3, 4000).unwrap().corpus;
        let opts = SynthAbxOptions {
            n_records: 20,
            ..Default::default()
        };
        let r = synth_abx_records(&c, Instrument::Drums, &opts).unwrap();
        assert_eq!(r, synth_abx_records(&c, Instrument::Drums, &opts).unwrap());
        assert_eq!(r.len(), 20);
        for rec in &r {
            rec.validate().unwrap();
            assert_eq!(rec.total_votes(), 10);
        }
    }

    #[test]
    fn noiseless_votes_follow_oracle() {
        let c = synth_corpus(6, 12.0, 4, 4000).unwrap().corpus;
        let opts = SynthAbxOptions {
            n_records: 10,
            noise: 1e-9,
            ..Default::default()
        };
        for rec in synth_abx_records(&c, Instrument::Bass, &opts).unwrap() {
            let sx = stem_statistics(&c, &rec.x, Instrument::Bass).unwrap();
            let da = dist(&sx, &stem_statistics(&c, &rec.a, Instrument::Bass).unwrap(), &[]);
            let db = dist(&sx, &stem_statistics(&c, &rec.b, Instrument::Bass).unwrap(), &[]);
            assert_eq!(rec.votes_a == 10, da < db);
        }
    }
}
