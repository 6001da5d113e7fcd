use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{io_at, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub stage: String,
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub components: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub timestamp: Option<f64>,
}

/// Append-only JSON-lines metrics, mirrored in memory.
#[derive(Debug, Default)]
pub struct MetricsLog {
    records: Vec<MetricRecord>,
    path: Option<PathBuf>,
    wallclock: bool,
}

impl MetricsLog {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn to_file(path: &Path, wallclock: bool) -> Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(io_at(parent))?;
        }
        Ok(Self {
            records: Vec::new(),
            path: Some(path.to_path_buf()),
            wallclock,
        })
    }

    pub fn set_wallclock(&mut self, on: bool) {
        self.wallclock = on;
    }

    pub fn records(&self) -> &[MetricRecord] {
        &self.records
    }

    pub fn push(
        &mut self,
        stage: &str,
        epoch: usize,
        split: &str,
        loss: f64,
        components: BTreeMap<String, f64>,
    ) -> Result<()> {
        let timestamp = self.wallclock.then(|| {
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs_f64())
                .unwrap_or(0.0)
        });
        let rec = MetricRecord {
            stage: stage.to_string(),
            epoch,
            split: split.to_string(),
            loss,
            components,
            timestamp,
        };
        log::info!("{stage} epoch {epoch} {split} loss {loss:.6}");
        if let Some(path) = &self.path {
            let mut f = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(io_at(path))?;
            writeln!(f, "{}", serde_json::to_string(&rec)?).map_err(io_at(path))?;
        }
        self.records.push(rec);
        Ok(())
    }

    /// Losses of one stage and split in epoch order.
    pub fn series(&self, stage: &str, split: &str) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.stage == stage && r.split == split)
            .map(|r| r.loss)
            .collect()
    }

    pub fn component_series(&self, stage: &str, split: &str, key: &str) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.stage == stage && r.split == split)
            .filter_map(|r| r.components.get(key).copied())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_lines_match_memory() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m/metrics.jsonl");
        let mut log = MetricsLog::to_file(&path, false).unwrap();
        log.push("mss", 0, "val", 1.5, BTreeMap::from([("l1".to_string(), 1.5)])).unwrap();
        log.push("mss", 1, "val", 1.0, BTreeMap::new()).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let parsed: Vec<MetricRecord> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(parsed, log.records());
        assert!(!text.contains("timestamp"));
        assert_eq!(log.series("mss", "val"), vec![1.5, 1.0]);
    }
}
