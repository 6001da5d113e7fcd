//! Command-line surface: configuration, the four commands and their
//! on-disk artifacts.
//!
//! Layout under the output root:
//! `data/` (corpus, manifest, ABX records), `<regime>/` (checkpoint,
//! metrics, report), `eval/<regime>/<metric>.json` and
//! `export/<regime>/<instrument>.csv`.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::{
    cmd_eval, cmd_export_embed, cmd_synth_data, cmd_train, EvalOutcome, EvalRequest, Metric, SdrReport,
    TrainOutcome,
};
pub use config::{
    family_of, out_root, prerequisites, AbxSubset, DataConfig, EvalConfig, Overrides, PaftConfig, RunConfig,
    OUT_ENV,
};

use crate::corpus::Instrument;
use crate::error::Result;
use crate::training::Regime;

#[derive(Debug, Parser)]
#[command(name = "inmsrl", version, about = "Instrument-wise music similarity representation learning")]
pub struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Training regime, or the checkpoint to evaluate.
    #[arg(long, global = true)]
    pub regime: Option<Regime>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the synthetic multi-stem corpus and oracle ABX records.
    SynthData {
        #[arg(long)]
        n_pieces: Option<usize>,
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Train one regime.
    Train,
    /// Evaluate a checkpoint: mes-normal, mes-pseudo, abx, sdr or export-embed.
    Eval {
        metric: Metric,
        /// Restrict to these instruments.
        #[arg(long = "instrument")]
        instruments: Vec<Instrument>,
        /// Bypass the model with label-perfect embeddings.
        #[arg(long)]
        oracle_embeddings: bool,
        /// With --reference: SDR of one WAV file against another.
        #[arg(long)]
        estimate: Option<PathBuf>,
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Write visualization embeddings as CSV.
    ExportEmbed {
        #[arg(long = "instrument")]
        instruments: Vec<Instrument>,
    },
}

/// Runs one parsed invocation and returns what to print.
pub fn run(cli: Cli) -> Result<String> {
    let overrides = Overrides {
        regime: cli.regime,
        seed: cli.seed,
        out_dir: None,
    };
    let mut cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    let root = out_root(&cfg, std::env::var_os(OUT_ENV));
    match cli.command {
        Command::SynthData { n_pieces, duration } => {
            if let Some(n) = n_pieces {
                cfg.data.n_pieces = n;
            }
            if let Some(d) = duration {
                cfg.data.duration_s = d;
            }
            let manifest = cmd_synth_data(&cfg, &root, cli.force)?;
            Ok(format!("wrote {}\n", manifest.display()))
        }
        Command::Train => {
            let out = cmd_train(&cfg, &root, cli.force)?;
            let mut s = String::new();
            for st in &out.stages {
                let (split, loss) = match st.val_history.is_empty() {
                    true => ("train", st.train_history.last().copied().unwrap_or(f64::NAN)),
                    false => ("val", st.best_val()),
                };
                s += &format!(
                    "{:<18} epochs {:>4}  kept {:>4}  {split} {loss:.5}\n",
                    st.stage, st.epochs_run, st.best_epoch
                );
            }
            s += &format!("checkpoint in {}\n", out.dir.display());
            Ok(s)
        }
        Command::Eval {
            metric,
            instruments,
            oracle_embeddings,
            estimate,
            reference,
        } => {
            if !instruments.is_empty() {
                cfg.eval.instruments = instruments;
            }
            let req = EvalRequest {
                oracle_embeddings,
                estimate,
                reference,
            };
            Ok(cmd_eval(&cfg, &root, metric, &req)?.table())
        }
        Command::ExportEmbed { instruments } => {
            if !instruments.is_empty() {
                cfg.eval.instruments = instruments;
            }
            Ok(cmd_export_embed(&cfg, &root)?.table())
        }
    }
}
