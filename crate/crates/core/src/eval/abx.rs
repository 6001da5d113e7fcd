use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};

use super::index::Subspace;
use crate::corpus::{Instrument, SegmentRef};
use crate::error::{invalid, io_at, Error, Result};

/// Default share of agreeing participants a record needs to be scored.
pub const DEFAULT_MIN_CONSENSUS: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AbxCondition {
    /// X, A and B come from three different pieces.
    #[serde(rename = "All-Diff")]
    AllDiff,
    /// Exactly one of A and B shares X's piece.
    #[serde(rename = "One-Shared")]
    OneShared,
}

impl std::fmt::Display for AbxCondition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AbxCondition::AllDiff => "All-Diff",
            AbxCondition::OneShared => "One-Shared",
        })
    }
}

impl std::str::FromStr for AbxCondition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "All-Diff" | "all-diff" => Ok(AbxCondition::AllDiff),
            "One-Shared" | "one-shared" => Ok(AbxCondition::OneShared),
            _ => Err(invalid(format!("unknown ABX condition {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbxChoice {
    A,
    B,
}

/// One ABX question with its human vote counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbxRecord {
    pub record_id: String,
    pub instrument: Instrument,
    pub condition: AbxCondition,
    pub x: SegmentRef,
    pub a: SegmentRef,
    pub b: SegmentRef,
    pub votes_a: u32,
    pub votes_b: u32,
}

impl AbxRecord {
    pub fn validate(&self) -> Result<()> {
        if self.total_votes() == 0 {
            return Err(invalid(format!("record {}: no votes", self.record_id)));
        }
        let shares_a = self.a.piece_id == self.x.piece_id;
        let shares_b = self.b.piece_id == self.x.piece_id;
        match self.condition {
            AbxCondition::OneShared if shares_a == shares_b => Err(invalid(format!(
                "record {}: One-Shared needs exactly one of A/B from X's piece",
                self.record_id
            ))),
            AbxCondition::AllDiff if shares_a || shares_b || self.a.piece_id == self.b.piece_id => {
                Err(invalid(format!(
                    "record {}: All-Diff needs three different pieces",
                    self.record_id
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn total_votes(&self) -> u32 {
        self.votes_a + self.votes_b
    }

    /// The option most participants picked; `None` on a tie.
    pub fn majority(&self) -> Option<AbxChoice> {
        match self.votes_a.cmp(&self.votes_b) {
            std::cmp::Ordering::Greater => Some(AbxChoice::A),
            std::cmp::Ordering::Less => Some(AbxChoice::B),
            std::cmp::Ordering::Equal => None,
        }
    }

    /// Share of votes for the more popular option.
    pub fn consensus(&self) -> f64 {
        self.votes_a.max(self.votes_b) as f64 / self.total_votes().max(1) as f64
    }

    pub fn votes_for(&self, choice: AbxChoice) -> u32 {
        match choice {
            AbxChoice::A => self.votes_a,
            AbxChoice::B => self.votes_b,
        }
    }
}

/// Reads JSON-lines ABX records, validating each.
pub fn read_abx_records(path: &Path) -> Result<Vec<AbxRecord>> {
    let file = std::fs::File::open(path).map_err(io_at(path))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: AbxRecord = serde_json::from_str(&line)
            .map_err(|e| invalid(format!("{}:{}: {e}", path.display(), n + 1)))?;
        r.validate()?;
        out.push(r);
    }
    Ok(out)
}

pub fn write_abx_records(path: &Path, records: &[AbxRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_at(path))?);
    for r in records {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

/// Stratified `(train, test)` split by instrument and condition. Each stratum
/// contributes `round(train_ratio * n)` records to the training side.
pub fn abx_split(records: &[AbxRecord], train_ratio: f64, seed: u64) -> Result<(Vec<AbxRecord>, Vec<AbxRecord>)> {
    if records.is_empty() {
        return Err(Error::Insufficient("no ABX records to split".into()));
    }
    if !(0.0..=1.0).contains(&train_ratio) {
        return Err(invalid(format!("train ratio {train_ratio} outside [0, 1]")));
    }
    let mut strata: BTreeMap<(Instrument, AbxCondition), Vec<&AbxRecord>> = BTreeMap::new();
    for r in records {
        strata.entry((r.instrument, r.condition)).or_default().push(r);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (_, mut group) in strata {
        group.shuffle(&mut rng);
        let k = (group.len() as f64 * train_ratio).round() as usize;
        train.extend(group[..k].iter().map(|r| (*r).clone()));
        test.extend(group[k..].iter().map(|r| (*r).clone()));
    }
    Ok((train, test))
}

/// Embeddings of one record's three segments.
#[derive(Debug, Clone, PartialEq)]
pub struct AbxEmbeddings {
    pub x: Vec<f32>,
    pub a: Vec<f32>,
    pub b: Vec<f32>,
}

/// How filtered records are scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AbxWeighting {
    /// One point per record when the model picks the majority option.
    #[default]
    PerRecord,
    /// Every individual response counts; the score is the share of responses
    /// that agree with the model.
    PerResponse,
}

/// Which records take part in an agreement score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbxFilter {
    pub min_consensus: f64,
    pub condition: Option<AbxCondition>,
    pub instrument: Option<Instrument>,
}

impl Default for AbxFilter {
    fn default() -> Self {
        Self {
            min_consensus: DEFAULT_MIN_CONSENSUS,
            condition: None,
            instrument: None,
        }
    }
}

impl AbxFilter {
    /// Consensus must be strictly above the threshold.
    pub fn keeps(&self, r: &AbxRecord) -> bool {
        r.consensus() > self.min_consensus
            && self.condition.is_none_or(|c| c == r.condition)
            && self.instrument.is_none_or(|i| i == r.instrument)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Agreement {
    pub value: f64,
    pub successes: u64,
    pub n: u64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Two-sided Clopper-Pearson interval for `k` successes out of `n`.
pub fn clopper_pearson(k: u64, n: u64, confidence: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let alpha = 1.0 - confidence;
    let lo = if k == 0 {
        0.0
    } else {
        Beta::new(k as f64, (n - k + 1) as f64)
            .expect("valid shape")
            .inverse_cdf(alpha / 2.0)
    };
    let hi = if k == n {
        1.0
    } else {
        Beta::new((k + 1) as f64, (n - k) as f64)
            .expect("valid shape")
            .inverse_cdf(1.0 - alpha / 2.0)
    };
    (lo, hi)
}

/// The model's pick: the candidate closer to X, A on exact ties.
pub fn model_choice(e: &AbxEmbeddings, subspace: Subspace) -> AbxChoice {
    let da = subspace.distance(&e.x, &e.a);
    let db = subspace.distance(&e.x, &e.b);
    if db < da {
        AbxChoice::B
    } else {
        AbxChoice::A
    }
}

/// Agreement between model choices and human majority votes on records that
/// pass `filter`.
pub fn abx_agreement(
    embeddings: &HashMap<String, AbxEmbeddings>,
    records: &[AbxRecord],
    filter: &AbxFilter,
    subspace: Subspace,
    weighting: AbxWeighting,
) -> Result<Agreement> {
    let (mut hits, mut n) = (0u64, 0u64);
    for r in records.iter().filter(|r| filter.keeps(r)) {
        let Some(majority) = r.majority() else {
            continue;
        };
        let e = embeddings
            .get(&r.record_id)
            .ok_or_else(|| invalid(format!("no embeddings for record {}", r.record_id)))?;
        let pick = model_choice(e, subspace);
        match weighting {
            AbxWeighting::PerRecord => {
                n += 1;
                hits += u64::from(pick == majority);
            }
            AbxWeighting::PerResponse => {
                n += u64::from(r.total_votes());
                hits += u64::from(r.votes_for(pick));
            }
        }
    }
    if n == 0 {
        return Err(Error::Insufficient("no ABX records left after filtering".into()));
    }
    let (ci_low, ci_high) = clopper_pearson(hits, n, 0.95);
    Ok(Agreement {
        value: hits as f64 / n as f64,
        successes: hits,
        n,
        ci_low,
        ci_high,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn record(id: usize, inst: Instrument, cond: AbxCondition, va: u32, vb: u32) -> AbxRecord {
        let p = |k: usize| format!("p{k}");
        let (xa, xb) = match cond {
            AbxCondition::AllDiff => (p(3 * id + 1), p(3 * id + 2)),
            AbxCondition::OneShared => (p(3 * id), p(3 * id + 2)),
        };
        AbxRecord {
            record_id: format!("r{id}"),
            instrument: inst,
            condition: cond,
            x: SegmentRef::new(p(3 * id), 0.0, 5.0),
            a: SegmentRef::new(xa, 5.0, 5.0),
            b: SegmentRef::new(xb, 0.0, 5.0),
            votes_a: va,
            votes_b: vb,
        }
    }

    #[test]
    fn consensus_threshold_is_strict() {
        let f = AbxFilter::default();
        assert!(f.keeps(&record(0, Instrument::Drums, AbxCondition::AllDiff, 8, 2)));
        assert!(!f.keeps(&record(0, Instrument::Drums, AbxCondition::AllDiff, 7, 3)));
        assert!(!f.keeps(&record(0, Instrument::Drums, AbxCondition::AllDiff, 3, 1)));
    }

    #[test]
    fn validation_rules() {
        assert!(record(1, Instrument::Bass, AbxCondition::OneShared, 1, 2).validate().is_ok());
        assert!(record(1, Instrument::Bass, AbxCondition::AllDiff, 1, 2).validate().is_ok());
        assert!(record(1, Instrument::Bass, AbxCondition::AllDiff, 0, 0).validate().is_err());
        let mut bad = record(1, Instrument::Bass, AbxCondition::OneShared, 1, 2);
        bad.b.piece_id = bad.x.piece_id.clone();
        assert!(bad.validate().is_err());
    }

    #[test]
    fn constructed_agreement_scores_one() {
        let records: Vec<_> = (0..50)
            .map(|i| record(i, Instrument::Piano, AbxCondition::AllDiff, 9, 1))
            .collect();
        let emb: HashMap<_, _> = records
            .iter()
            .map(|r| {
                (
                    r.record_id.clone(),
                    AbxEmbeddings { x: vec![0.0, 0.0], a: vec![1.0, 0.0], b: vec![0.0, 3.0] },
                )
            })
            .collect();
        let a = abx_agreement(&emb, &records, &AbxFilter::default(), Subspace::Full, AbxWeighting::PerRecord).unwrap();
        assert_eq!(a.value, 1.0);
        assert_eq!(a.n, 50);
        let w = abx_agreement(&emb, &records, &AbxFilter::default(), Subspace::Full, AbxWeighting::PerResponse).unwrap();
        assert!((w.value - 0.9).abs() < 1e-12);
    }

    #[test]
    fn empty_after_filter_is_error() {
        let records = vec![record(0, Instrument::Piano, AbxCondition::AllDiff, 5, 5)];
        let err = abx_agreement(&HashMap::new(), &records, &AbxFilter::default(), Subspace::Full, AbxWeighting::PerRecord);
        assert!(err.is_err());
    }

    #[test]
    fn random_embeddings_land_near_half() {
        // Monte-Carlo: with i.i.d. Gaussian embeddings the pick is a fair coin,
        // so 1000 records give 0.5 +- 3 * sqrt(0.25 / 1000).
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let records: Vec<_> = (0..1000)
            .map(|i| record(i, Instrument::Drums, AbxCondition::AllDiff, 9, 1))
            .collect();
        let mut v = || (0..16).map(|_| rng.random::<f32>() - 0.5).collect::<Vec<_>>();
        let emb: HashMap<_, _> = records
            .iter()
            .map(|r| (r.record_id.clone(), AbxEmbeddings { x: v(), a: v(), b: v() }))
            .collect();
        let a = abx_agreement(&emb, &records, &AbxFilter::default(), Subspace::Full, AbxWeighting::PerRecord).unwrap();
        assert!((a.value - 0.5).abs() < 3.0 * (0.25f64 / 1000.0).sqrt(), "{}", a.value);
    }

    #[test]
    fn split_is_stratified_disjoint_and_seeded() {
        let mut records = Vec::new();
        for i in 0..100 {
            let inst = Instrument::ALL[i % 2];
            let cond = if i % 4 < 2 { AbxCondition::AllDiff } else { AbxCondition::OneShared };
            records.push(record(i, inst, cond, 3, 1));
        }
        let (train, test) = abx_split(&records, 0.7, 3).unwrap();
        assert_eq!(train.len() + test.len(), 100);
        assert_eq!(train.len(), 4 * 18);
        assert!(train.iter().all(|t| !test.iter().any(|s| s.record_id == t.record_id)));
        let again = abx_split(&records, 0.7, 3).unwrap();
        assert_eq!(again.0, train);
        assert!(abx_split(&[], 0.7, 3).is_err());
    }

    #[test]
    fn clopper_pearson_known_values() {
        // Reference values from the exact binomial interval, k = 7, n = 10.
        let (lo, hi) = clopper_pearson(7, 10, 0.95);
        assert!((lo - 0.3475).abs() < 1e-3, "{lo}");
        assert!((hi - 0.9333).abs() < 1e-3, "{hi}");
        assert_eq!(clopper_pearson(0, 10, 0.95).0, 0.0);
        assert_eq!(clopper_pearson(10, 10, 0.95).1, 1.0);
    }

    #[test]
    fn jsonl_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("abx.jsonl");
        let rs = vec![record(0, Instrument::Guitar, AbxCondition::OneShared, 2, 1)];
        write_abx_records(&p, &rs).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.contains("\"One-Shared\""));
        assert_eq!(read_abx_records(&p).unwrap(), rs);
    }
}
