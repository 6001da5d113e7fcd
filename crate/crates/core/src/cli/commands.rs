use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use candle_core::DType;
use serde::Serialize;

use super::config::{family_of, prerequisites, AbxSubset, RunConfig};
use crate::corpus::{load_corpus, load_manifest, synth_corpus, write_synth_corpus, Corpus, Instrument};
use crate::dsp::{format_db, global_sdr, read_wav};
use crate::error::{io_at, Error, Result};
use crate::eval::{
    abx_agreement, abx_embeddings, abx_split, build_mes_pseudo_set, build_visualization_set, export_embeddings,
    mes_normal_counts, mes_normal_index, mes_pseudo_counts, mes_pseudo_index, one_hot_oracle, read_abx_records,
    separation_sdr, synth_abx_records, visualization_rows, write_abx_records, AbxCondition, AbxFilter, AbxRecord,
    Embedder, MetricReport, OracleStats, Placeholder, SynthAbxOptions,
};
use crate::nets::{load_checkpoint, save_checkpoint, CheckpointMeta, Family, InMsrl};
use crate::training::{
    finetune_e2e, pretrain_direct, run_paft, stream_seed, train_direct, train_extractors, train_mss, MetricsLog,
    Regime, StageReport,
};

const CHECKPOINT: &str = "model";

fn prepare_dir(dir: &Path, force: bool) -> Result<()> {
    let occupied = dir.exists() && std::fs::read_dir(dir).map_err(io_at(dir))?.next().is_some();
    if occupied {
        if !force {
            return Err(Error::Config(format!(
                "{} exists and is not empty; pass --force to overwrite",
                dir.display()
            )));
        }
        std::fs::remove_dir_all(dir).map_err(io_at(dir))?;
    }
    std::fs::create_dir_all(dir).map_err(io_at(dir))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io_at(parent))?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n").map_err(io_at(path))
}

fn data_dir(root: &Path) -> PathBuf {
    root.join("data")
}

fn manifest_path(cfg: &RunConfig, root: &Path) -> PathBuf {
    cfg.data.manifest.clone().unwrap_or_else(|| data_dir(root).join("manifest.json"))
}

fn abx_path(cfg: &RunConfig, root: &Path) -> PathBuf {
    cfg.data.abx_records.clone().unwrap_or_else(|| data_dir(root).join("abx.jsonl"))
}

fn read_corpus(path: &Path, sample_rate: u32) -> Result<Corpus> {
    if !path.exists() {
        return Err(Error::MissingPrerequisite(format!(
            "corpus manifest {} not found; run synth-data first",
            path.display()
        )));
    }
    let corpus = load_corpus(&load_manifest(path)?)?;
    if corpus.sample_rate() != sample_rate {
        return Err(Error::Config(format!(
            "corpus is at {} Hz, model expects {sample_rate} Hz",
            corpus.sample_rate()
        )));
    }
    Ok(corpus)
}

/// Renders the synthetic corpus and oracle ABX records under
/// `<root>/data`. Returns the manifest path.
pub fn cmd_synth_data(cfg: &RunConfig, root: &Path, force: bool) -> Result<PathBuf> {
    let dir = data_dir(root);
    let synth = synth_corpus(cfg.data.n_pieces, cfg.data.duration_s, cfg.seed, cfg.sample_rate())?;
    prepare_dir(&dir, force)?;
    let manifest = write_synth_corpus(&synth, &dir)?;
    if cfg.data.abx_per_instrument > 0 {
        let mut records = Vec::new();
        for inst in Instrument::ALL {
            let opts = SynthAbxOptions {
                n_records: cfg.data.abx_per_instrument,
                segment_s: cfg.train.paft_segment_s,
                seed: stream_seed(cfg.seed, &format!("abx/{inst}")),
                ..Default::default()
            };
            records.extend(synth_abx_records(&synth.corpus, inst, &opts)?);
        }
        write_abx_records(&dir.join("abx.jsonl"), &records)?;
    }
    log::info!("wrote {} pieces to {}", synth.corpus.len(), dir.display());
    Ok(manifest)
}

fn checkpoint_dir(root: &Path, regime: Regime) -> PathBuf {
    root.join(regime.name())
}

fn load_trained(cfg: &RunConfig, root: &Path, regime: Regime) -> Result<InMsrl> {
    let family = family_of(regime, cfg.paft.base)?;
    let mut m = InMsrl::new(&cfg.model, family, cfg.seed, DType::F32)?;
    let dir = checkpoint_dir(root, regime);
    if !dir.join(format!("{CHECKPOINT}.json")).exists() {
        return Err(Error::MissingPrerequisite(format!("no {regime} checkpoint under {}", root.display())));
    }
    load_checkpoint(m.store_mut(), &dir, CHECKPOINT)?;
    Ok(m)
}

/// Result of [`cmd_train`].
#[derive(Debug, Clone, Serialize)]
pub struct TrainOutcome {
    pub regime: Regime,
    pub config_hash: String,
    pub stages: Vec<StageReport>,
    pub dir: PathBuf,
}

/// Runs the configured regime and writes checkpoint, metrics and report
/// under `<root>/<regime>`.
pub fn cmd_train(cfg: &RunConfig, root: &Path, force: bool) -> Result<TrainOutcome> {
    let regime = cfg.train.regime;
    for dep in prerequisites(regime, cfg.paft.base) {
        if !checkpoint_dir(root, dep).join(format!("{CHECKPOINT}.json")).exists() {
            return Err(Error::MissingPrerequisite(format!("{regime} requires train_{dep}")));
        }
    }
    if regime == Regime::CascadePaft && family_of(cfg.paft.base, cfg.paft.base)? != Family::Cascade {
        return Err(Error::Config("cascade_paft needs a cascade base checkpoint".into()));
    }
    let corpus = read_corpus(&manifest_path(cfg, root), cfg.model.sample_rate)?;
    let records = if matches!(regime, Regime::Paft | Regime::CascadePaft) {
        Some(load_abx(cfg, root)?)
    } else {
        None
    };
    let dir = checkpoint_dir(root, regime);
    prepare_dir(&dir, force)?;
    let result = train_into(cfg, root, &dir, corpus, records);
    if result.is_err() {
        // A failed run leaves no partial checkpoint directory behind.
        let _ = std::fs::remove_dir_all(&dir);
    }
    result
}

fn train_into(
    cfg: &RunConfig,
    root: &Path,
    dir: &Path,
    corpus: Corpus,
    records: Option<Vec<AbxRecord>>,
) -> Result<TrainOutcome> {
    let regime = cfg.train.regime;
    let family = family_of(regime, cfg.paft.base)?;
    let config_hash = cfg.hash()?;
    write_json(&dir.join("config.json"), cfg)?;
    let mut log = MetricsLog::to_file(&dir.join("metrics.jsonl"), cfg.train.wallclock)?;
    let (train, val) = corpus.split(cfg.data.val_fraction)?;
    let plan = &cfg.train;

    let (model, stages) = match regime {
        Regime::Mss => {
            let mut m = InMsrl::new(&cfg.model, family, cfg.seed, DType::F32)?;
            let r = train_mss(&mut m, &train, &val, plan, &mut log)?;
            (m, r)
        }
        Regime::Clean => {
            let mut m = InMsrl::new(&cfg.model, family, cfg.seed, DType::F32)?;
            let r = train_extractors(&mut m, &train, &val, plan, &mut log)?;
            (m, vec![r])
        }
        Regime::Cascade => {
            let mut m = load_trained(cfg, root, Regime::Mss)?;
            let r = train_extractors(&mut m, &train, &val, plan, &mut log)?;
            (m, vec![r])
        }
        Regime::CascadeFt => {
            let mut m = load_trained(cfg, root, Regime::Cascade)?;
            let r = finetune_e2e(&mut m, &train, &val, plan, &mut log)?;
            (m, vec![r])
        }
        Regime::DirectPretrain => {
            let clean = load_trained(cfg, root, Regime::Clean)?;
            let mut m = InMsrl::new(&cfg.model, family, cfg.seed, DType::F32)?;
            let r = pretrain_direct(&mut m, &clean, &train, &val, plan, &mut log)?;
            (m, vec![r])
        }
        Regime::Direct | Regime::DirectMultitask => {
            let mut m = load_trained(cfg, root, Regime::DirectPretrain)?;
            let r = train_direct(&mut m, &train, &val, plan, &mut log)?;
            (m, vec![r])
        }
        Regime::Paft | Regime::CascadePaft => {
            let mut m = load_trained(cfg, root, cfg.paft.base)?;
            let records = records.expect("loaded above");
            let (paft_train, _) = abx_split(&records, cfg.paft.train_ratio, cfg.seed)?;
            let r = run_paft(&mut m, &paft_train, &corpus, cfg.paft.triplets, plan, &mut log)?;
            log::info!("PAFT on {} triplets, {} tied records excluded", r.triplets, r.excluded_ties);
            (m, vec![r.stage])
        }
    };
    let last = stages.last().expect("at least one stage");
    let meta = CheckpointMeta {
        regime: regime.name().into(),
        config_hash: config_hash.clone(),
        epoch: last.best_epoch,
        validation_loss: if last.val_history.is_empty() {
            last.train_history.last().copied().unwrap_or(f64::NAN)
        } else {
            last.best_val()
        },
    };
    save_checkpoint(model.store(), &meta, dir, CHECKPOINT)?;
    let outcome = TrainOutcome {
        regime,
        config_hash,
        stages,
        dir: dir.to_path_buf(),
    };
    write_json(&outcome.dir.join("report.json"), &outcome)?;
    Ok(outcome)
}

fn load_abx(cfg: &RunConfig, root: &Path) -> Result<Vec<AbxRecord>> {
    let path = abx_path(cfg, root);
    if !path.exists() {
        return Err(Error::MissingPrerequisite(format!(
            "ABX records file {} not found (set data.abx_records)",
            path.display()
        )));
    }
    read_abx_records(&path)
}

/// Evaluation protocols of `cmd_eval`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    MesNormal,
    MesPseudo,
    Abx,
    Sdr,
    ExportEmbed,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::MesNormal => "mes-normal",
            Metric::MesPseudo => "mes-pseudo",
            Metric::Abx => "abx",
            Metric::Sdr => "sdr",
            Metric::ExportEmbed => "export-embed",
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Metric::MesNormal, Metric::MesPseudo, Metric::Abx, Metric::Sdr, Metric::ExportEmbed]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown metric {s:?}")))
    }
}

/// Extra inputs of `cmd_eval`.
#[derive(Debug, Clone, Default)]
pub struct EvalRequest {
    /// Skip the model: MES uses one-hot label codes and ABX uses the
    /// listeners' oracle statistics.
    pub oracle_embeddings: bool,
    /// SDR between two WAV files instead of a model's separations.
    pub estimate: Option<PathBuf>,
    pub reference: Option<PathBuf>,
}

/// One SDR result; `value` is `"inf"` for a perfect estimate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SdrReport {
    pub metric: String,
    pub instrument: Option<String>,
    pub value: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalOutcome {
    pub metric: Metric,
    pub regime: Option<Regime>,
    pub config_hash: String,
    pub reports: Vec<MetricReport>,
    pub sdr: Vec<SdrReport>,
    pub files: Vec<PathBuf>,
    #[serde(skip)]
    pub path: PathBuf,
}

impl EvalOutcome {
    /// Plain-text summary table.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<14} {:<10} {:<11} {:>8} {:>17} {:>6}", "metric", "instrument", "condition", "value", "95% CI", "n");
        for r in &self.reports {
            let _ = writeln!(
                s,
                "{:<14} {:<10} {:<11} {:>8.4} {:>17} {:>6}",
                r.metric,
                r.instrument,
                r.condition.as_deref().unwrap_or("-"),
                r.value,
                format!("[{:.3}, {:.3}]", r.ci_low, r.ci_high),
                r.n
            );
        }
        for r in &self.sdr {
            let _ = writeln!(s, "{:<14} {:<10} {:<11} {:>8}", r.metric, r.instrument.as_deref().unwrap_or("-"), "-", r.value);
        }
        for f in &self.files {
            let _ = writeln!(s, "wrote {}", f.display());
        }
        s
    }
}

fn eval_instruments(cfg: &RunConfig, model: Option<&InMsrl>) -> Result<Vec<Instrument>> {
    let supported = model.map_or(&Instrument::ALL[..], |m| m.family().instruments());
    if cfg.eval.instruments.is_empty() {
        return Ok(supported.to_vec());
    }
    match cfg.eval.instruments.iter().find(|i| !supported.contains(i)) {
        Some(i) => Err(Error::Config(format!("model has no {i} branch"))),
        None => Ok(cfg.eval.instruments.clone()),
    }
}

/// Evaluates the checkpoint of `cfg.train.regime` and writes
/// `<root>/eval/<regime>/<metric>.json`.
pub fn cmd_eval(cfg: &RunConfig, root: &Path, metric: Metric, req: &EvalRequest) -> Result<EvalOutcome> {
    let file_sdr = req.estimate.is_some() || req.reference.is_some();
    let needs_model = !req.oracle_embeddings && !(metric == Metric::Sdr && file_sdr);
    let model = if needs_model {
        Some(load_trained(cfg, root, cfg.train.regime)?)
    } else {
        None
    };
    let label = if needs_model { cfg.train.regime.name() } else { "oracle" };
    let mut out = EvalOutcome {
        metric,
        regime: needs_model.then_some(cfg.train.regime),
        config_hash: cfg.hash()?,
        reports: Vec::new(),
        sdr: Vec::new(),
        files: Vec::new(),
        path: root.join("eval").join(label).join(format!("{}.json", metric.name())),
    };
    if metric == Metric::Sdr && file_sdr {
        let (Some(e), Some(r)) = (&req.estimate, &req.reference) else {
            return Err(Error::Config("file SDR needs both --estimate and --reference".into()));
        };
        out.sdr.push(SdrReport {
            metric: "sdr".into(),
            instrument: None,
            value: format_db(global_sdr(&read_wav(e)?, &read_wav(r)?)?),
        });
        write_json(&out.path, &out)?;
        return Ok(out);
    }
    if metric == Metric::Abx {
        let records = load_abx(cfg, root)?;
        let records = match cfg.eval.abx_subset {
            AbxSubset::All => records,
            AbxSubset::Test => abx_split(&records, cfg.paft.train_ratio, cfg.seed)?.1,
        };
        let instruments = eval_instruments(cfg, model.as_ref())?;
        let records: Vec<AbxRecord> = records.into_iter().filter(|r| instruments.contains(&r.instrument)).collect();
        let corpus = read_corpus(&manifest_path(cfg, root), cfg.model.sample_rate)?;
        let embedder: &dyn Embedder = match &model {
            Some(m) => m,
            None => &OracleStats,
        };
        let embeddings = abx_embeddings(embedder, &corpus, &records)?;
        for inst in instruments {
            if !records.iter().any(|r| r.instrument == inst) {
                continue;
            }
            let subspace = match &model {
                Some(m) if m.family() == Family::Direct => crate::eval::Subspace::Instrument(inst),
                _ => crate::eval::Subspace::Full,
            };
            for condition in [None, Some(AbxCondition::AllDiff), Some(AbxCondition::OneShared)] {
                let filter = AbxFilter {
                    min_consensus: cfg.eval.min_consensus,
                    condition,
                    instrument: Some(inst),
                };
                let a = match abx_agreement(&embeddings, &records, &filter, subspace, cfg.eval.weighting) {
                    Ok(a) => a,
                    Err(Error::Insufficient(_)) => continue,
                    Err(e) => return Err(e),
                };
                out.reports.push(MetricReport {
                    metric: "abx".into(),
                    instrument: inst.to_string(),
                    condition: condition.map(|c| c.to_string()),
                    value: a.value,
                    ci_low: a.ci_low,
                    ci_high: a.ci_high,
                    n: a.n as usize,
                    averaging: "micro".into(),
                });
            }
        }
        write_json(&out.path, &out)?;
        return Ok(out);
    }

    let test_path = cfg.data.test_manifest.clone().unwrap_or_else(|| manifest_path(cfg, root));
    let corpus = read_corpus(&test_path, cfg.model.sample_rate)?;
    let embedder: &dyn Embedder = match &model {
        Some(m) => m,
        None => &Placeholder,
    };
    for inst in eval_instruments(cfg, model.as_ref())? {
        match metric {
            Metric::MesNormal | Metric::MesPseudo => {
                let (index, counts): (_, fn(&_, _) -> _) = if metric == Metric::MesNormal {
                    (mes_normal_index(embedder, &corpus, inst, cfg.eval.segment_s)?, mes_normal_counts)
                } else {
                    let set = build_mes_pseudo_set(&corpus, inst, stream_seed(cfg.seed, &format!("mes/{inst}")))?;
                    (mes_pseudo_index(embedder, &corpus, &set, cfg.eval.segment_s)?, mes_pseudo_counts)
                };
                let index = if model.is_none() { one_hot_oracle(&index)? } else { index };
                let (hits, n) = counts(&index, inst)?;
                out.reports.push(MetricReport::accuracy(metric.name(), inst.name(), None, hits, n)?);
            }
            Metric::Sdr => {
                let m = model.as_ref().ok_or_else(|| Error::Config("model SDR has no oracle mode".into()))?;
                out.sdr.push(SdrReport {
                    metric: "sdr".into(),
                    instrument: Some(inst.to_string()),
                    value: format_db(separation_sdr(m, &corpus, inst, cfg.eval.segment_s)?),
                });
            }
            Metric::ExportEmbed => {
                let set = build_visualization_set(&corpus, inst, cfg.eval.segment_s, cfg.seed)?;
                let rows = visualization_rows(embedder, &corpus, inst, &set)?;
                let path = root.join("export").join(label).join(format!("{inst}.csv"));
                if let Some(parent) = path.parent() {
                    std::fs::create_dir_all(parent).map_err(io_at(parent))?;
                }
                export_embeddings(&rows, &path)?;
                out.files.push(path);
            }
            Metric::Abx => unreachable!("handled above"),
        }
    }
    write_json(&out.path, &out)?;
    Ok(out)
}

/// Writes visualization embeddings of the regime's checkpoint as CSV.
pub fn cmd_export_embed(cfg: &RunConfig, root: &Path) -> Result<EvalOutcome> {
    cmd_eval(cfg, root, Metric::ExportEmbed, &EvalRequest::default())
}
