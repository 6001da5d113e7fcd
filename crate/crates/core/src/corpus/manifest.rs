use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Corpus, Instrument, Piece, StemSet};
use crate::dsp::read_wav;
use crate::error::{io_at, Error, Result};

/// One piece entry of a manifest, with stem paths resolved against the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq)]
pub struct PieceManifest {
    pub piece_id: String,
    pub stem_paths: BTreeMap<Instrument, PathBuf>,
}

#[derive(Serialize, Deserialize)]
struct ManifestFile {
    pieces: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    id: String,
    stems: BTreeMap<String, PathBuf>,
}

/// Reads and validates a manifest. Pieces come back ordered by id.
pub fn load_manifest(path: &Path) -> Result<Vec<PieceManifest>> {
    let text = std::fs::read_to_string(path).map_err(io_at(path))?;
    let file: ManifestFile = serde_json::from_str(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    if file.pieces.is_empty() {
        return Err(Error::Manifest(format!("{}: no pieces", path.display())));
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(file.pieces.len());
    for entry in file.pieces {
        if !seen.insert(entry.id.clone()) {
            return Err(Error::Manifest(format!("duplicate piece id {:?}", entry.id)));
        }
        let mut stem_paths = BTreeMap::new();
        for (name, p) in &entry.stems {
            let inst: Instrument = name.parse().map_err(|_| {
                Error::Manifest(format!("piece {:?}: unknown stem {name:?}", entry.id))
            })?;
            stem_paths.insert(inst, base.join(p));
        }
        if let Some(missing) = Instrument::ALL.iter().find(|i| !stem_paths.contains_key(i)) {
            return Err(Error::Manifest(format!(
                "piece {:?} is missing the {missing} stem",
                entry.id
            )));
        }
        out.push(PieceManifest {
            piece_id: entry.id,
            stem_paths,
        });
    }
    out.sort_by(|a, b| a.piece_id.cmp(&b.piece_id));
    Ok(out)
}

/// Writes a manifest; stem paths are stored relative to `path`'s directory
/// when possible.
pub fn write_manifest(path: &Path, pieces: &[PieceManifest]) -> Result<()> {
    let base = path.parent().unwrap_or(Path::new("."));
    let file = ManifestFile {
        pieces: pieces
            .iter()
            .map(|p| ManifestEntry {
                id: p.piece_id.clone(),
                stems: p
                    .stem_paths
                    .iter()
                    .map(|(i, sp)| {
                        let rel = sp.strip_prefix(base).unwrap_or(sp).to_path_buf();
                        (i.name().to_string(), rel)
                    })
                    .collect(),
            })
            .collect(),
    };
    std::fs::write(path, serde_json::to_string_pretty(&file)? + "\n").map_err(io_at(path))?;
    Ok(())
}

/// Loads every stem of every piece. Stems of one piece must agree in length
/// and sample rate.
pub fn load_corpus(manifest: &[PieceManifest]) -> Result<Corpus> {
    let mut pieces = Vec::with_capacity(manifest.len());
    for m in manifest {
        let mut stems = Vec::with_capacity(5);
        for inst in Instrument::ALL {
            let p = &m.stem_paths[&inst];
            if !p.exists() {
                return Err(Error::Manifest(format!(
                    "piece {:?}: {inst} stem {} does not exist",
                    m.piece_id,
                    p.display()
                )));
            }
            stems.push(read_wav(p)?);
        }
        let stems: [_; 5] = stems.try_into().expect("five stems");
        let stems = StemSet::new(stems)
            .map_err(|e| Error::Manifest(format!("piece {:?}: {e}", m.piece_id)))?;
        pieces.push(Piece {
            id: m.piece_id.clone(),
            stems,
        });
    }
    Corpus::new(pieces)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: &str, skip: Option<&str>) -> serde_json::Value {
        let stems: serde_json::Map<_, _> = Instrument::ALL
            .iter()
            .filter(|i| Some(i.name()) != skip)
            .map(|i| (i.name().to_string(), format!("{id}/{}.wav", i.name()).into()))
            .collect();
        serde_json::json!({"id": id, "stems": stems})
    }

    fn write(dir: &Path, pieces: Vec<serde_json::Value>) -> PathBuf {
        let p = dir.join("manifest.json");
        std::fs::write(&p, serde_json::json!({ "pieces": pieces }).to_string()).unwrap();
        p
    }

    #[test]
    fn two_valid_pieces() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), vec![entry("b", None), entry("a", None)]);
        let m = load_manifest(&p).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m[0].piece_id, "a");
        assert_eq!(m[0].stem_paths[&Instrument::Bass], dir.path().join("a/bass.wav"));
    }

    #[test]
    fn missing_stem_names_piece_and_instrument() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), vec![entry("a", None), entry("b", Some("bass"))]);
        let err = load_manifest(&p).unwrap_err().to_string();
        assert!(err.contains("\"b\"") && err.contains("bass"), "{err}");
    }

    #[test]
    fn empty_and_duplicate_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_manifest(&write(dir.path(), vec![])).is_err());
        let p = write(dir.path(), vec![entry("a", None), entry("a", None)]);
        assert!(load_manifest(&p).unwrap_err().to_string().contains("duplicate"));
    }
}
