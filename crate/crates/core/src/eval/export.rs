use std::path::Path;

use serde::{Deserialize, Serialize};

use super::index::EmbeddingRow;
use crate::error::{invalid, io_at, Error, Result};

const FIXED_COLUMNS: [&str; 5] = ["piece_id", "segment_index", "instrument", "color_label", "shape_label"];

/// Writes labeled vectors as CSV for an external 2-D projection.
pub fn export_embeddings(rows: &[EmbeddingRow], path: &Path) -> Result<()> {
    let dim = rows
        .first()
        .ok_or_else(|| invalid("no rows to export"))?
        .vector
        .len();
    if let Some(r) = rows.iter().find(|r| r.vector.len() != dim) {
        return Err(invalid(format!(
            "row ({}, {}) has {} dims, expected {dim}",
            r.piece_id,
            r.segment_index,
            r.vector.len()
        )));
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io_at(parent))?;
    }
    let file = std::fs::File::create(path).map_err(io_at(path))?;
    let mut w = csv::Writer::from_writer(file);
    let header: Vec<String> = FIXED_COLUMNS
        .iter()
        .map(|s| s.to_string())
        .chain((0..dim).map(|d| format!("dim_{d}")))
        .collect();
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.piece_id.clone(),
            r.segment_index.to_string(),
            r.instrument.to_string(),
            r.label.clone(),
            r.shape_label.clone(),
        ];
        // Shortest representation that parses back to the same f32.
        rec.extend(r.vector.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(io_at(path))?;
    Ok(())
}

pub fn import_embeddings(path: &Path) -> Result<Vec<EmbeddingRow>> {
    let file = std::fs::File::open(path).map_err(io_at(path))?;
    let mut rd = csv::Reader::from_reader(file);
    let header = rd.headers()?.clone();
    if header.len() < FIXED_COLUMNS.len() || header.iter().zip(FIXED_COLUMNS).any(|(a, b)| a != b) {
        return Err(invalid(format!("{}: unexpected header", path.display())));
    }
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let bad = |what: &str| invalid(format!("{}: bad {what} in line {:?}", path.display(), rec.position()));
        let vector = rec
            .iter()
            .skip(FIXED_COLUMNS.len())
            .map(|s| s.parse::<f32>().map_err(|_| bad("value")))
            .collect::<Result<_>>()?;
        rows.push(EmbeddingRow {
            piece_id: rec[0].to_string(),
            segment_index: rec[1].parse().map_err(|_| bad("segment_index"))?,
            instrument: rec[2].parse()?,
            label: rec[3].to_string(),
            shape_label: rec[4].to_string(),
            vector,
        });
    }
    Ok(rows)
}

/// A metric value as written to report files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub instrument: String,
    pub condition: Option<String>,
    pub value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
    /// `micro`: averaged over segments (or records), not over pieces.
    pub averaging: String,
}

impl MetricReport {
    /// Accuracy with a 95% Clopper-Pearson interval.
    pub fn accuracy(metric: &str, instrument: &str, condition: Option<String>, hits: usize, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Insufficient(format!("{metric}: no samples")));
        }
        let (lo, hi) = super::abx::clopper_pearson(hits as u64, n as u64, 0.95);
        Ok(Self {
            metric: metric.to_string(),
            instrument: instrument.to_string(),
            condition,
            value: hits as f64 / n as f64,
            ci_low: lo,
            ci_high: hi,
            n,
            averaging: "micro".into(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Instrument;

    #[test]
    fn roundtrip_and_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        let rows: Vec<EmbeddingRow> = (0..4)
            .map(|i| EmbeddingRow {
                piece_id: format!("p{i}"),
                segment_index: i,
                instrument: Instrument::Piano,
                label: format!("c{i}"),
                shape_label: "s, with comma".into(),
                vector: vec![1.0 / 3.0, -1e-30, f32::MAX, i as f32 * 0.1],
            })
            .collect();
        export_embeddings(&rows, &path).unwrap();
        assert_eq!(import_embeddings(&path).unwrap(), rows);
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap().split(',').count(), 5 + 4);
    }

    #[test]
    fn empty_rows_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(export_embeddings(&[], &dir.path().join("e.csv")).is_err());
    }
}
