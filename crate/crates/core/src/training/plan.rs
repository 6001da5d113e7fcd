use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Instrument;
use crate::error::{Error, Result};

/// Validation share of the corpus: 270 validation pieces per 1,200
/// training pieces.
pub const VAL_FRACTION: f64 = 270.0 / 1470.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Separation U-Nets alone.
    Mss,
    Clean,
    /// Extractors behind frozen separation.
    Cascade,
    CascadeFt,
    /// PAFT with every cascade parameter trainable.
    CascadePaft,
    DirectPretrain,
    /// Multi-task training with the reconstruction weight forced to zero.
    Direct,
    DirectMultitask,
    Paft,
}

impl Regime {
    pub const ALL: [Regime; 9] = [
        Regime::Mss,
        Regime::Clean,
        Regime::Cascade,
        Regime::CascadeFt,
        Regime::CascadePaft,
        Regime::DirectPretrain,
        Regime::Direct,
        Regime::DirectMultitask,
        Regime::Paft,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Regime::Mss => "mss",
            Regime::Clean => "clean",
            Regime::Cascade => "cascade",
            Regime::CascadeFt => "cascade_ft",
            Regime::CascadePaft => "cascade_paft",
            Regime::DirectPretrain => "direct_pretrain",
            Regime::Direct => "direct",
            Regime::DirectMultitask => "direct_multitask",
            Regime::Paft => "paft",
        }
    }

    /// Learning rate used when the config does not set one.
    pub fn default_lr(self) -> f64 {
        match self {
            Regime::Mss | Regime::DirectPretrain | Regime::Direct | Regime::DirectMultitask => 1e-4,
            Regime::Clean | Regime::Cascade | Regime::Paft | Regime::CascadePaft => 5e-5,
            Regime::CascadeFt => 1e-5,
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Regime::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown regime {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainPlan {
    pub regime: Regime,
    /// `None` takes the regime's default.
    pub lr: Option<f64>,
    pub max_epochs: usize,
    pub patience: usize,
    pub paft_epochs: usize,
    pub lambda_sep: f64,
    pub lambda_rec: f64,
    pub margin: f64,
    pub seed: u64,
    pub batch_size: usize,
    /// Freshly sampled batches per epoch.
    pub steps_per_epoch: usize,
    /// Fixed validation batches, regenerated from the same seed each epoch.
    pub val_batches: usize,
    pub segment_s: f64,
    pub paft_segment_s: f64,
    /// Instruments to train; empty means every instrument of the model.
    pub instruments: Vec<Instrument>,
    /// Keep the auxiliary separation loss in cascade PAFT.
    pub paft_separation_loss: bool,
    /// Add wall-clock timestamps to metric records.
    pub wallclock: bool,
}

impl Default for TrainPlan {
    fn default() -> Self {
        Self {
            regime: Regime::Clean,
            lr: None,
            max_epochs: 400,
            patience: 100,
            paft_epochs: 100,
            lambda_sep: 1.0,
            lambda_rec: 1.0,
            margin: 1.0,
            seed: 0,
            batch_size: 16,
            steps_per_epoch: 50,
            val_batches: 4,
            segment_s: 3.0,
            paft_segment_s: 5.0,
            instruments: Vec::new(),
            paft_separation_loss: true,
            wallclock: false,
        }
    }
}

impl TrainPlan {
    pub fn for_regime(regime: Regime) -> Self {
        Self {
            regime,
            ..Self::default()
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr.unwrap_or_else(|| self.regime.default_lr())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate() > 0.0) {
            return bad(format!("lr must be positive, got {}", self.learning_rate()));
        }
        if self.patience == 0 || self.patience > self.max_epochs {
            return bad(format!(
                "patience {} must be in 1..={}",
                self.patience, self.max_epochs
            ));
        }
        if !(self.margin >= 0.0) || !(self.lambda_sep >= 0.0) || !(self.lambda_rec >= 0.0) {
            return bad("margin and loss weights must be non-negative".into());
        }
        if self.batch_size == 0 || self.steps_per_epoch == 0 || self.val_batches == 0 {
            return bad("batch_size, steps_per_epoch and val_batches must be positive".into());
        }
        if !(self.segment_s > 0.0) || !(self.paft_segment_s > 0.0) {
            return bad("segment lengths must be positive".into());
        }
        Ok(())
    }

    /// Instruments to train out of those the model supports.
    pub fn instruments_within(&self, supported: &[Instrument]) -> Result<Vec<Instrument>> {
        if self.instruments.is_empty() {
            return Ok(supported.to_vec());
        }
        if let Some(i) = self.instruments.iter().find(|i| !supported.contains(i)) {
            return Err(Error::Config(format!("model has no {i} branch")));
        }
        Ok(self.instruments.clone())
    }
}
