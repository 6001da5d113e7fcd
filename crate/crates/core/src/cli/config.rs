use std::ffi::OsString;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Instrument, PaftRegime};
use crate::error::{io_at, Error, Result};
use crate::eval::{AbxWeighting, DEFAULT_MIN_CONSENSUS, MES_SEGMENT_S};
use crate::nets::{Family, ModelConfig};
use crate::training::{Regime, TrainPlan, VAL_FRACTION};

/// Environment variable that overrides `out_dir`.
pub const OUT_ENV: &str = "INMSRL_OUT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Training corpus manifest; defaults to the one `synth-data` writes.
    pub manifest: Option<PathBuf>,
    /// Evaluation corpus; defaults to the training corpus.
    pub test_manifest: Option<PathBuf>,
    /// ABX records (JSON lines); defaults to the synthetic ones if present.
    pub abx_records: Option<PathBuf>,
    pub n_pieces: usize,
    pub duration_s: f64,
    /// `None` renders at the model's rate.
    pub sample_rate: Option<u32>,
    /// Synthetic ABX records written per instrument.
    pub abx_per_instrument: usize,
    pub val_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            test_manifest: None,
            abx_records: None,
            n_pieces: 20,
            duration_s: 60.0,
            sample_rate: None,
            abx_per_instrument: 100,
            val_fraction: VAL_FRACTION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PaftConfig {
    /// Checkpoint PAFT starts from.
    pub base: Regime,
    pub triplets: PaftRegime,
    /// Share of ABX records used for training; the rest is held out.
    pub train_ratio: f64,
}

impl Default for PaftConfig {
    fn default() -> Self {
        Self {
            base: Regime::Cascade,
            triplets: PaftRegime::Clean,
            train_ratio: 0.7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbxSubset {
    /// Records held out from PAFT.
    #[default]
    Test,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Empty means every instrument of the model.
    pub instruments: Vec<Instrument>,
    pub segment_s: f64,
    pub min_consensus: f64,
    pub weighting: AbxWeighting,
    pub abx_subset: AbxSubset,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            instruments: Vec::new(),
            segment_s: MES_SEGMENT_S,
            min_consensus: DEFAULT_MIN_CONSENSUS,
            weighting: AbxWeighting::PerRecord,
            abx_subset: AbxSubset::Test,
        }
    }
}

/// Everything one command needs, loaded from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainPlan,
    pub paft: PaftConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("runs"),
            seed: 0,
            data: DataConfig::default(),
            model: ModelConfig::desk(),
            train: TrainPlan::default(),
            paft: PaftConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub regime: Option<Regime>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads `path` (defaults when `None`), then applies overrides and
    /// validates.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => Self::from_toml(&std::fs::read_to_string(p).map_err(io_at(p))?)?,
            None => Self::default(),
        };
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(r) = o.regime {
            self.train.regime = r;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(d) = &o.out_dir {
            self.out_dir = d.clone();
        }
        self.train.seed = self.seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.train.seed != self.seed {
            return Err(Error::Config("train.seed is taken from the top-level seed".into()));
        }
        if !(self.data.val_fraction > 0.0 && self.data.val_fraction < 1.0) {
            return Err(Error::Config("data.val_fraction must be in (0, 1)".into()));
        }
        if !(self.paft.train_ratio > 0.0 && self.paft.train_ratio < 1.0) {
            return Err(Error::Config("paft.train_ratio must be in (0, 1)".into()));
        }
        if !(self.eval.segment_s > 0.0) || !(0.5..1.0).contains(&self.eval.min_consensus) {
            return Err(Error::Config("eval.segment_s must be positive and min_consensus in [0.5, 1)".into()));
        }
        for p in [&self.data.manifest, &self.data.test_manifest, &self.data.abx_records]
            .into_iter()
            .flatten()
        {
            if !p.exists() {
                return Err(Error::Config(format!("{} does not exist", p.display())));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the resolved configuration, output location excluded.
    pub fn hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        Ok(hex::encode(Sha256::digest(serde_json::to_vec(&c)?)))
    }

    pub fn sample_rate(&self) -> u32 {
        self.data.sample_rate.unwrap_or(self.model.sample_rate)
    }
}

/// Output root: the environment override when set, else `out_dir`.
pub fn out_root(cfg: &RunConfig, env: Option<OsString>) -> PathBuf {
    match env {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => cfg.out_dir.clone(),
    }
}

/// Model family a regime trains.
pub fn family_of(regime: Regime, paft_base: Regime) -> Result<Family> {
    Ok(match regime {
        Regime::Mss | Regime::Cascade | Regime::CascadeFt | Regime::CascadePaft => Family::Cascade,
        Regime::Clean => Family::Clean,
        Regime::DirectPretrain | Regime::Direct | Regime::DirectMultitask => Family::Direct,
        Regime::Paft => {
            if matches!(paft_base, Regime::Paft | Regime::CascadePaft | Regime::Mss) {
                return Err(Error::Config(format!("paft cannot start from {paft_base}")));
            }
            family_of(paft_base, paft_base)?
        }
    })
}

/// Checkpoints a regime needs, in the order they are checked.
pub fn prerequisites(regime: Regime, paft_base: Regime) -> Vec<Regime> {
    match regime {
        Regime::Mss | Regime::Clean => vec![],
        Regime::Cascade => vec![Regime::Mss],
        Regime::CascadeFt => vec![Regime::Mss, Regime::Cascade],
        Regime::DirectPretrain => vec![Regime::Clean],
        Regime::Direct | Regime::DirectMultitask => vec![Regime::DirectPretrain],
        Regime::Paft | Regime::CascadePaft => vec![paft_base],
    }
}
