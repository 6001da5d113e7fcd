use std::collections::{BTreeMap, BTreeSet};

use super::index::{EmbeddingIndex, EmbeddingRow};
use crate::corpus::Instrument;
use crate::error::{invalid, Error, Result};

/// Neighbors consulted per query.
pub const K_NEIGHBORS: usize = 5;

/// Majority label among the five nearest eligible rows of `instrument`.
///
/// The query row itself and every row for which `exclude` is true are
/// skipped. Ties in the vote go to the label whose voting neighbors have the
/// smallest summed distance, then to the lexicographically smallest label.
pub fn knn5_predict(
    index: &EmbeddingIndex,
    query: usize,
    instrument: Instrument,
    exclude: impl Fn(&EmbeddingRow) -> bool,
) -> Result<String> {
    let rows = index.rows();
    let q = rows
        .get(query)
        .ok_or_else(|| invalid(format!("query row {query} out of range")))?;
    let subspace = index.subspace(instrument);
    let mut cands: Vec<(f64, usize)> = rows
        .iter()
        .enumerate()
        .filter(|(i, r)| *i != query && r.instrument == instrument && !exclude(r))
        .map(|(i, r)| (subspace.distance(&q.vector, &r.vector), i))
        .collect();
    if cands.len() < K_NEIGHBORS {
        return Err(Error::Insufficient(format!(
            "only {} eligible rows for a {K_NEIGHBORS}-NN query",
            cands.len()
        )));
    }
    cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut votes: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
    for &(d, i) in &cands[..K_NEIGHBORS] {
        let e = votes.entry(rows[i].label.as_str()).or_insert((0, 0.0));
        e.0 += 1;
        e.1 += d;
    }
    let best = votes
        .into_iter()
        .min_by(|a, b| {
            b.1 .0
                .cmp(&a.1 .0)
                .then(a.1 .1.total_cmp(&b.1 .1))
                .then(a.0.cmp(b.0))
        })
        .expect("k > 0");
    Ok(best.0.to_string())
}

fn accuracy(index: &EmbeddingIndex, instrument: Instrument, same_piece_excluded: bool) -> Result<(usize, usize)> {
    let (mut hits, mut n) = (0, 0);
    for (i, row) in index.rows().iter().enumerate() {
        if row.instrument != instrument {
            continue;
        }
        let predicted = if same_piece_excluded {
            knn5_predict(index, i, instrument, |r| r.piece_id == row.piece_id)?
        } else {
            knn5_predict(index, i, instrument, |_| false)?
        };
        n += 1;
        hits += usize::from(predicted == row.label);
    }
    if n == 0 {
        return Err(Error::Insufficient(format!("no {instrument} rows in the index")));
    }
    Ok((hits, n))
}

/// Leave-one-out 5NN music-ID accuracy, micro-averaged over segments.
/// Returns `(correct, total)`.
pub fn mes_normal_counts(index: &EmbeddingIndex, instrument: Instrument) -> Result<(usize, usize)> {
    accuracy(index, instrument, false)
}

pub fn mes_normal(index: &EmbeddingIndex, instrument: Instrument) -> Result<f64> {
    let (h, n) = mes_normal_counts(index, instrument)?;
    Ok(h as f64 / n as f64)
}

/// 5NN accuracy on target-source labels where every row of the query's own
/// (pseudo or normal) piece is excluded from the search.
pub fn mes_pseudo_counts(index: &EmbeddingIndex, instrument: Instrument) -> Result<(usize, usize)> {
    accuracy(index, instrument, true)
}

pub fn mes_pseudo(index: &EmbeddingIndex, instrument: Instrument) -> Result<f64> {
    let (h, n) = mes_pseudo_counts(index, instrument)?;
    Ok(h as f64 / n as f64)
}

/// Pieces that still carry the query's label once its own piece is
/// excluded.
pub fn eligible_correct_pieces(index: &EmbeddingIndex, query: usize) -> BTreeSet<String> {
    let q = &index.rows()[query];
    index
        .rows()
        .iter()
        .filter(|r| r.instrument == q.instrument && r.piece_id != q.piece_id && r.label == q.label)
        .map(|r| r.piece_id.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::index::Subspace;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn row(piece: &str, seg: usize, v: Vec<f32>) -> EmbeddingRow {
        EmbeddingRow::normal(piece, seg, Instrument::Drums, v)
    }

    #[test]
    fn unanimous_and_majority() {
        let mut rows = vec![row("q", 0, vec![0.0])];
        rows.extend((0..5).map(|i| row("A", i, vec![1.0 + i as f32 * 0.1])));
        rows.extend((0..3).map(|i| row("B", i, vec![50.0 + i as f32])));
        let idx = EmbeddingIndex::new(rows, false).unwrap();
        assert_eq!(knn5_predict(&idx, 0, Instrument::Drums, |_| false).unwrap(), "A");

        let mut rows = vec![row("q", 0, vec![0.0])];
        rows.extend((0..3).map(|i| row("A", i, vec![1.0 + i as f32])));
        rows.extend((0..2).map(|i| row("B", i, vec![0.5 + i as f32 * 0.1])));
        let idx = EmbeddingIndex::new(rows, false).unwrap();
        assert_eq!(knn5_predict(&idx, 0, Instrument::Drums, |_| false).unwrap(), "A");
    }

    #[test]
    fn tie_goes_to_smaller_summed_distance() {
        // A at 1,2 (sum 3), B at 1.5,1.6 (sum 3.1), C at 0.5: A wins 2-2-1 tie.
        let rows = vec![
            row("q", 0, vec![0.0]),
            row("A", 0, vec![1.0]),
            row("A", 1, vec![2.0]),
            row("B", 0, vec![1.5]),
            row("B", 1, vec![1.6]),
            row("C", 0, vec![0.5]),
            row("D", 0, vec![9.0]),
        ];
        let idx = EmbeddingIndex::new(rows, false).unwrap();
        assert_eq!(knn5_predict(&idx, 0, Instrument::Drums, |_| false).unwrap(), "A");
    }

    #[test]
    fn too_few_rows() {
        let rows = (0..5).map(|i| row("A", i, vec![i as f32])).collect();
        let idx = EmbeddingIndex::new(rows, false).unwrap();
        assert!(knn5_predict(&idx, 0, Instrument::Drums, |_| false).is_err());
    }

    #[test]
    fn one_hot_embeddings_score_perfectly() {
        let rows: Vec<_> = (0..8)
            .flat_map(|p| {
                (0..6).map(move |s| {
                    let mut v = vec![0.0; 8];
                    v[p] = 1.0;
                    row(&format!("p{p}"), s, v)
                })
            })
            .collect();
        let idx = EmbeddingIndex::new(rows, false).unwrap();
        assert_eq!(mes_normal(&idx, Instrument::Drums).unwrap(), 1.0);
    }

    #[test]
    fn gaussian_embeddings_sit_at_chance() {
        // Monte-Carlo oracle: 20 pieces x 10 segments of i.i.d. noise gives
        // accuracy ~ 1/20; the mean over 50 trials must be within 3 sigma.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let normal = Normal::new(0.0f32, 1.0).unwrap();
        let mut accs = Vec::new();
        for _ in 0..50 {
            let rows: Vec<_> = (0..20)
                .flat_map(|p| (0..10).map(move |s| (p, s)))
                .map(|(p, s)| row(&format!("p{p:02}"), s, (0..8).map(|_| normal.sample(&mut rng)).collect()))
                .collect();
            accs.push(mes_normal(&EmbeddingIndex::new(rows, false).unwrap(), Instrument::Drums).unwrap());
        }
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        let sigma = (0.05f64 * 0.95 / (200.0 * 50.0)).sqrt();
        assert!((mean - 0.05).abs() < 3.0 * sigma + 0.01, "mean {mean}");
    }

    #[test]
    fn subspace_masks_other_dims() {
        let a = vec![1.0f32; 10];
        let mut b = vec![1.0f32; 10];
        b[9] = 100.0;
        assert_eq!(Subspace::Instrument(Instrument::Drums).distance(&a, &b), 0.0);
        assert!(Subspace::Full.distance(&a, &b) > 0.0);
    }
}
