use std::collections::HashSet;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::corpus::Instrument;
use crate::error::{invalid, Result};

/// Which dimensions enter a distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subspace {
    /// All dimensions (per-instrument embeddings).
    #[default]
    Full,
    /// Only the instrument's fifth of a disentangled vector; other
    /// dimensions are masked out.
    Instrument(Instrument),
}

impl Subspace {
    pub fn range(self, dim: usize) -> Range<usize> {
        match self {
            Subspace::Full => 0..dim,
            Subspace::Instrument(i) => {
                let block = dim / Instrument::COUNT;
                block * i.index()..block * (i.index() + 1)
            }
        }
    }

    /// Euclidean distance restricted to this subspace.
    pub fn distance(self, a: &[f32], b: &[f32]) -> f64 {
        let r = self.range(a.len().min(b.len()));
        a[r.clone()]
            .iter()
            .zip(&b[r])
            .map(|(x, y)| {
                let d = *x as f64 - *y as f64;
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// One embedded segment.
///
/// `label` is the identity a query has to recover (the piece for MES-Normal,
/// the target-instrument source for MES-Pseudo; the color label in exports).
/// `shape_label` carries the non-target source where that applies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRow {
    pub piece_id: String,
    pub segment_index: usize,
    pub instrument: Instrument,
    pub label: String,
    pub shape_label: String,
    pub vector: Vec<f32>,
}

impl EmbeddingRow {
    /// Row whose labels are its own piece id.
    pub fn normal(piece_id: &str, segment_index: usize, instrument: Instrument, vector: Vec<f32>) -> Self {
        Self {
            piece_id: piece_id.to_string(),
            segment_index,
            instrument,
            label: piece_id.to_string(),
            shape_label: piece_id.to_string(),
            vector,
        }
    }
}

/// Read-only set of embedded segments with a distance rule.
#[derive(Debug, Clone)]
pub struct EmbeddingIndex {
    rows: Vec<EmbeddingRow>,
    disentangled: bool,
}

impl EmbeddingIndex {
    /// `disentangled` selects instrument-subspace distances for queries.
    pub fn new(rows: Vec<EmbeddingRow>, disentangled: bool) -> Result<Self> {
        let mut keys = HashSet::new();
        let mut dims: [Option<usize>; 5] = [None; 5];
        for r in &rows {
            if !keys.insert((r.piece_id.as_str(), r.segment_index, r.instrument)) {
                return Err(invalid(format!(
                    "duplicate row ({}, {}, {})",
                    r.piece_id, r.segment_index, r.instrument
                )));
            }
            let slot = &mut dims[r.instrument.index()];
            match slot {
                Some(d) if *d != r.vector.len() => {
                    return Err(invalid(format!(
                        "{} vectors mix dimensions {d} and {}",
                        r.instrument,
                        r.vector.len()
                    )))
                }
                _ => *slot = Some(r.vector.len()),
            }
            if disentangled && r.vector.len() % Instrument::COUNT != 0 {
                return Err(invalid(format!(
                    "disentangled vectors need a multiple of 5 dimensions, got {}",
                    r.vector.len()
                )));
            }
        }
        Ok(Self { rows, disentangled })
    }

    pub fn rows(&self) -> &[EmbeddingRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn subspace(&self, instrument: Instrument) -> Subspace {
        if self.disentangled {
            Subspace::Instrument(instrument)
        } else {
            Subspace::Full
        }
    }
}
