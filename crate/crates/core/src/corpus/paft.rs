use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, Instrument, Provenance, Segment, SegmentRef, Triplet};
use crate::error::{Error, Result};
use crate::eval::{AbxChoice, AbxRecord};

/// How ABX segments are turned into model inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PaftRegime {
    /// Only the target stem of each segment is kept.
    #[default]
    Clean,
    /// Target stems are re-accompanied with non-target stems taken from other
    /// ABX segments of the same instrument.
    Pseudo,
}

impl std::str::FromStr for PaftRegime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clean" => Ok(PaftRegime::Clean),
            "pseudo" => Ok(PaftRegime::Pseudo),
            _ => Err(Error::Config(format!("unknown PAFT regime {s:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PaftTriplets {
    pub triplets: Vec<Triplet>,
    /// Records dropped because their votes were tied.
    pub excluded_ties: usize,
}

fn clean_segment(corpus: &Corpus, r: &SegmentRef, target: Instrument) -> Result<Segment> {
    Ok(Segment {
        stems: corpus.segment(r)?.only(target)?,
        sources: std::array::from_fn(|_| r.clone()),
    })
}

/// Triplets from ABX records: anchor = X, positive = the majority choice,
/// negative = the other candidate.
///
/// Records of other instruments are ignored. In the pseudo regime anchor and
/// negative share one accompaniment and the positive gets another, both from
/// ABX segments whose piece differs from X, A and B.
pub fn build_paft_triplets(
    records: &[AbxRecord],
    target: Instrument,
    corpus: &Corpus,
    regime: PaftRegime,
    seed: u64,
) -> Result<PaftTriplets> {
    let records: Vec<&AbxRecord> = records.iter().filter(|r| r.instrument == target).collect();
    let pool: Vec<&SegmentRef> = records.iter().flat_map(|r| [&r.x, &r.a, &r.b]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = PaftTriplets {
        triplets: Vec::new(),
        excluded_ties: 0,
    };
    for r in records {
        let Some(choice) = r.majority() else {
            out.excluded_ties += 1;
            continue;
        };
        let (pos, neg) = match choice {
            AbxChoice::A => (&r.a, &r.b),
            AbxChoice::B => (&r.b, &r.a),
        };
        let triplet = match regime {
            PaftRegime::Clean => Triplet {
                anchor: clean_segment(corpus, &r.x, target)?,
                positive: clean_segment(corpus, pos, target)?,
                negative: clean_segment(corpus, neg, target)?,
                target,
                provenance: Provenance::Abx,
            },
            PaftRegime::Pseudo => {
                let used = [&r.x.piece_id, &r.a.piece_id, &r.b.piece_id];
                let fits = |s: &&&SegmentRef, d: f64| {
                    !used.contains(&&s.piece_id) && (s.duration - d).abs() < 1e-9
                };
                let po_choices: Vec<&SegmentRef> =
                    pool.iter().filter(|s| fits(s, r.x.duration)).copied().collect();
                let po = *po_choices.choose(&mut rng).ok_or_else(|| {
                    Error::Insufficient(format!(
                        "record {}: no ABX segment outside its pieces to accompany it",
                        r.record_id
                    ))
                })?;
                let p3_choices: Vec<&SegmentRef> = po_choices
                    .iter()
                    .filter(|s| s.piece_id != po.piece_id)
                    .copied()
                    .collect();
                let p3 = *p3_choices.choose(&mut rng).ok_or_else(|| {
                    Error::Insufficient(format!(
                        "record {}: need two accompaniment pieces outside its pieces",
                        r.record_id
                    ))
                })?;
                Triplet {
                    anchor: corpus.pseudo_segment(target, &r.x, po)?,
                    positive: corpus.pseudo_segment(target, pos, p3)?,
                    negative: corpus.pseudo_segment(target, neg, po)?,
                    target,
                    provenance: Provenance::Abx,
                }
            }
        };
        out.triplets.push(triplet);
    }
    Ok(out)
}
