use std::collections::BTreeMap;

use candle_core::{Tensor, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::batch::{
    clean_targets, multitask_step_loss, pretrain_step_loss, triplet_step_loss, ComboBatch, Counters, StepLoss,
    TripletBatch, TripletLossOptions,
};
use super::log::MetricsLog;
use super::losses::{l1_loss, scalar};
use super::plan::{Regime, TrainPlan};
use super::stop::early_stopper;
use crate::corpus::{build_paft_triplets, Corpus, Instrument, PaftRegime, Segment, Triplet, TripletSampler};
use crate::error::{invalid, Error, Result};
use crate::eval::AbxRecord;
use crate::nets::{Family, InMsrl, MSS_PREFIX, RECON_PREFIX, DIRECT_PREFIX, EXT_PREFIX};

/// Outcome of one training stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    pub epochs_run: usize,
    /// Epoch whose parameters were kept; 0 is the state before training.
    pub best_epoch: usize,
    pub stopped_early: bool,
    /// Validation loss before training, then after each epoch.
    pub val_history: Vec<f64>,
    /// Mean training loss of each epoch.
    pub train_history: Vec<f64>,
    pub counters: Counters,
    /// Hash of the parameters the stage must not touch, before and after.
    pub frozen_hash_before: String,
    pub frozen_hash_after: String,
}

impl StageReport {
    pub fn best_val(&self) -> f64 {
        self.val_history.get(self.best_epoch).copied().unwrap_or(f64::NAN)
    }
}

/// Deterministic per-purpose seed.
pub fn stream_seed(seed: u64, tag: &str) -> u64 {
    let d = Sha256::new().chain_update(seed.to_le_bytes()).chain_update(tag.as_bytes()).finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

type Components = BTreeMap<String, f64>;
type StepFn<'a> = dyn FnMut(&InMsrl, &mut Counters) -> Result<StepLoss> + 'a;
type ValFn<'a> = dyn FnMut(&InMsrl) -> Result<(f64, Components)> + 'a;

struct Fit<'a> {
    stage: String,
    vars: Vec<Var>,
    frozen_prefixes: Vec<String>,
    lr: f64,
    epochs: usize,
    steps_per_epoch: usize,
    patience: Option<usize>,
    step: &'a mut StepFn<'a>,
    validate: Option<&'a mut ValFn<'a>>,
}

fn snapshot(vars: &[Var]) -> Result<Vec<Tensor>> {
    Ok(vars.iter().map(|v| v.as_tensor().copy()).collect::<candle_core::Result<_>>()?)
}

fn frozen_hash(model: &InMsrl, trainable: &[String]) -> Result<String> {
    let p: Vec<&str> = trainable.iter().map(String::as_str).collect();
    model.store().hash_excluding(&p)
}

fn fit(model: &InMsrl, f: Fit<'_>, log: &mut MetricsLog) -> Result<StageReport> {
    if f.vars.is_empty() {
        return Err(invalid(format!("{}: nothing to train", f.stage)));
    }
    let frozen_hash_before = frozen_hash(model, &f.frozen_prefixes)?;
    let mut opt = AdamW::new(
        f.vars.clone(),
        ParamsAdamW {
            lr: f.lr,
            weight_decay: 0.0,
            ..Default::default()
        },
    )?;
    let mut counters = Counters::default();
    let mut val_history = Vec::new();
    let mut train_history = Vec::new();
    let mut validate = f.validate;
    if let Some(v) = validate.as_deref_mut() {
        let (loss, comps) = v(model)?;
        log.push(&f.stage, 0, "val", loss, comps)?;
        val_history.push(loss);
    }
    let mut best = snapshot(&f.vars)?;
    let mut best_epoch = 0;
    let mut stopped_early = false;
    let mut epochs_run = 0;
    for epoch in 1..=f.epochs {
        let mut total = 0.0;
        let mut comps: Components = BTreeMap::new();
        for _ in 0..f.steps_per_epoch {
            let s = (f.step)(model, &mut counters)?;
            let value = s.value()?;
            if !value.is_finite() {
                return Err(Error::Insufficient(format!("{}: non-finite loss at epoch {epoch}", f.stage)));
            }
            opt.backward_step(&s.loss)?;
            counters.steps += 1;
            total += value;
            for (k, v) in s.components {
                *comps.entry(k).or_default() += v;
            }
        }
        let n = f.steps_per_epoch as f64;
        comps.values_mut().for_each(|v| *v /= n);
        log.push(&f.stage, epoch, "train", total / n, comps)?;
        train_history.push(total / n);
        epochs_run = epoch;
        if let Some(v) = validate.as_deref_mut() {
            let (loss, comps) = v(model)?;
            log.push(&f.stage, epoch, "val", loss, comps)?;
            val_history.push(loss);
            if let Some(patience) = f.patience {
                let d = early_stopper(&val_history, patience)?;
                if d.best_epoch == epoch {
                    best = snapshot(&f.vars)?;
                    best_epoch = epoch;
                }
                if d.stop {
                    stopped_early = epoch < f.epochs;
                    break;
                }
            }
        }
    }
    if f.patience.is_some() && validate.is_some() {
        for (v, t) in f.vars.iter().zip(&best) {
            v.set(t)?;
        }
    } else {
        best_epoch = epochs_run;
    }
    Ok(StageReport {
        stage: f.stage,
        epochs_run,
        best_epoch,
        stopped_early,
        val_history,
        train_history,
        counters,
        frozen_hash_before,
        frozen_hash_after: frozen_hash(model, &f.frozen_prefixes)?,
    })
}

fn prefixes(base: &str, insts: &[Instrument]) -> Vec<String> {
    insts.iter().map(|i| format!("{base}{i}.")).collect()
}

fn vars_for(model: &InMsrl, prefixes: &[String]) -> Vec<Var> {
    let p: Vec<&str> = prefixes.iter().map(String::as_str).collect();
    model.store().vars_with_prefixes(&p)
}

fn require_family(model: &InMsrl, family: Family, what: &str) -> Result<()> {
    if model.family() != family {
        return Err(invalid(format!("{what} needs a {family:?} model, got {:?}", model.family())));
    }
    Ok(())
}

fn check_corpora(train: &Corpus, val: &Corpus) -> Result<()> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::Insufficient("training and validation corpora must be non-empty".into()));
    }
    Ok(())
}

fn sampler<'c>(corpus: &'c Corpus, plan: &TrainPlan, tag: &str) -> Result<TripletSampler<'c>> {
    TripletSampler::new(corpus, plan.segment_s, stream_seed(plan.seed, tag))
}

/// A random unmodified segment of any piece.
fn any_segment(s: &mut TripletSampler<'_>) -> Result<Segment> {
    let pieces: Vec<usize> = (0..s.corpus().len()).filter(|&p| !s.pool().starts(p).is_empty()).collect();
    let &p = pieces
        .choose(s.rng())
        .ok_or_else(|| Error::Insufficient("no piece is long enough for one segment".into()))?;
    let n = s.pool().starts(p).len();
    let g = s.rng().random_range(0..n);
    s.normal_segment(p, g)
}

/// Pseudo triplets: a basic and an additional one per entry of `targets`.
fn pseudo_triplets(
    s: &mut TripletSampler<'_>,
    targets: &[Instrument],
    extra_pool: &[Instrument],
    counters: &mut Counters,
) -> Result<Vec<Triplet>> {
    let mut out = Vec::with_capacity(2 * targets.len());
    for &t in targets {
        let (basic, additional) = s.sample_pseudo_triplet(t, extra_pool)?;
        out.push(basic);
        out.push(additional);
        counters.basic_triplets += 1;
        counters.additional_triplets += 1;
    }
    Ok(out)
}

fn extra_pool(model: &InMsrl, insts: &[Instrument]) -> Vec<Instrument> {
    if insts.len() >= 2 {
        insts.to_vec()
    } else {
        model.family().instruments().to_vec()
    }
}

/// Trains each separation U-Net on the L1 between masked mix and clean
/// stem, with early stopping per instrument.
pub fn train_mss(
    model: &mut InMsrl,
    train: &Corpus,
    val: &Corpus,
    plan: &TrainPlan,
    log: &mut MetricsLog,
) -> Result<Vec<StageReport>> {
    plan.validate()?;
    require_family(model, Family::Cascade, "train_mss")?;
    check_corpora(train, val)?;
    let insts = plan.instruments_within(model.family().instruments())?;
    let mut reports = Vec::new();
    for inst in insts {
        let stage = format!("mss/{inst}");
        let fe = model.frontend().clone();
        let mut vs = sampler(val, plan, &format!("{stage}/val"))?;
        let val_batches: Vec<(Tensor, Tensor)> = (0..plan.val_batches)
            .map(|_| {
                let segs = (0..plan.batch_size).map(|_| vs.sample_segment(inst)).collect::<Result<Vec<_>>>()?;
                seg_tensors(&fe, &segs, inst)
            })
            .collect::<Result<_>>()?;
        let mut ts = sampler(train, plan, &stage)?;
        let mut step = |m: &InMsrl, _: &mut Counters| -> Result<StepLoss> {
            let segs = (0..plan.batch_size).map(|_| ts.sample_segment(inst)).collect::<Result<Vec<_>>>()?;
            let (mix, stem) = seg_tensors(&fe, &segs, inst)?;
            let loss = l1_loss(&m.separate(inst, &mix)?, &stem)?;
            Ok(StepLoss {
                components: BTreeMap::from([("l1".to_string(), scalar(&loss)?)]),
                loss,
            })
        };
        let mut validate = |m: &InMsrl| -> Result<(f64, Components)> {
            let mut total = 0.0;
            for (mix, stem) in &val_batches {
                total += scalar(&l1_loss(&m.separate(inst, mix)?, stem)?)?;
            }
            let v = total / val_batches.len() as f64;
            Ok((v, BTreeMap::from([("l1".to_string(), v)])))
        };
        let trainable = prefixes(MSS_PREFIX, &[inst]);
        let report = fit(
            model,
            Fit {
                stage,
                vars: vars_for(model, &trainable),
                frozen_prefixes: trainable,
                lr: plan.learning_rate(),
                epochs: plan.max_epochs,
                steps_per_epoch: plan.steps_per_epoch,
                patience: Some(plan.patience),
                step: &mut step,
                validate: Some(&mut validate),
            },
            log,
        )?;
        reports.push(report);
    }
    Ok(reports)
}

fn seg_tensors(fe: &crate::nets::Frontend, segs: &[Segment], inst: Instrument) -> Result<(Tensor, Tensor)> {
    let mixes: Vec<_> = segs.iter().map(|s| s.stems.mix()).collect();
    let stems: Vec<_> = segs.iter().map(|s| s.stems.stem_in_mix(inst)).collect();
    Ok((fe.batch_waveforms(&mixes)?, fe.batch_waveforms(&stems.iter().collect::<Vec<_>>())?))
}

fn triplet_validator<'a>(
    batches: Vec<Vec<TripletBatch>>,
    opts: TripletLossOptions,
) -> impl FnMut(&InMsrl) -> Result<(f64, Components)> + 'a {
    move |m: &InMsrl| {
        let mut total = 0.0;
        let mut comps: Components = BTreeMap::new();
        let mut scratch = Counters::default();
        for b in &batches {
            let s = triplet_step_loss(m, b, &opts, &mut scratch)?;
            total += s.value()?;
            for (k, v) in s.components {
                *comps.entry(k).or_default() += v;
            }
        }
        let n = batches.len() as f64;
        comps.values_mut().for_each(|v| *v /= n);
        Ok((total / n, comps))
    }
}

/// Triplet training of per-instrument extractors.
///
/// Clean models see same-song triplets of clean stems. Cascade models see
/// basic and additional pseudo triplets through their frozen separation
/// networks.
pub fn train_extractors(
    model: &mut InMsrl,
    train: &Corpus,
    val: &Corpus,
    plan: &TrainPlan,
    log: &mut MetricsLog,
) -> Result<StageReport> {
    plan.validate()?;
    check_corpora(train, val)?;
    let family = model.family();
    if family == Family::Direct {
        return Err(invalid("train_extractors needs a Clean or Cascade model"));
    }
    let insts = plan.instruments_within(family.instruments())?;
    let pool = extra_pool(model, &insts);
    let stage = if family == Family::Clean { "clean" } else { "cascade" };
    let opts = TripletLossOptions {
        margin: plan.margin,
        lambda_sep: 0.0,
        detach_separation: true,
    };
    let fe = model.frontend().clone();
    let draw = |s: &mut TripletSampler<'_>, c: &mut Counters| -> Result<Vec<TripletBatch>> {
        let triplets = if family == Family::Clean {
            let mut v = Vec::new();
            for &i in &insts {
                for _ in 0..plan.batch_size {
                    v.push(s.sample_s4_triplet(i)?);
                    c.s4_triplets += 1;
                }
            }
            v
        } else {
            let targets: Vec<Instrument> =
                insts.iter().flat_map(|&i| std::iter::repeat_n(i, plan.batch_size)).collect();
            pseudo_triplets(s, &targets, &pool, c)?
        };
        TripletBatch::grouped(&fe, &triplets)
    };
    let mut vs = sampler(val, plan, &format!("{stage}/val"))?;
    let mut scratch = Counters::default();
    let val_batches = (0..plan.val_batches)
        .map(|_| draw(&mut vs, &mut scratch))
        .collect::<Result<Vec<_>>>()?;
    let mut ts = sampler(train, plan, stage)?;
    let mut step = |m: &InMsrl, c: &mut Counters| -> Result<StepLoss> {
        let b = draw(&mut ts, c)?;
        triplet_step_loss(m, &b, &opts, c)
    };
    let mut validate = triplet_validator(val_batches, opts);
    let trainable = prefixes(EXT_PREFIX, &insts);
    fit(
        model,
        Fit {
            stage: stage.into(),
            vars: vars_for(model, &trainable),
            frozen_prefixes: trainable,
            lr: plan.learning_rate(),
            epochs: plan.max_epochs,
            steps_per_epoch: plan.steps_per_epoch,
            patience: Some(plan.patience),
            step: &mut step,
            validate: Some(&mut validate),
        },
        log,
    )
}

/// Joint fine-tuning of separation and extraction: triplet loss plus
/// `lambda_sep` times the separation L1 averaged over the three inputs.
pub fn finetune_e2e(
    model: &mut InMsrl,
    train: &Corpus,
    val: &Corpus,
    plan: &TrainPlan,
    log: &mut MetricsLog,
) -> Result<StageReport> {
    plan.validate()?;
    require_family(model, Family::Cascade, "finetune_e2e")?;
    check_corpora(train, val)?;
    let insts = plan.instruments_within(model.family().instruments())?;
    let pool = extra_pool(model, &insts);
    let opts = TripletLossOptions {
        margin: plan.margin,
        lambda_sep: plan.lambda_sep,
        detach_separation: false,
    };
    let fe = model.frontend().clone();
    let targets: Vec<Instrument> = insts.iter().flat_map(|&i| std::iter::repeat_n(i, plan.batch_size)).collect();
    let draw = |s: &mut TripletSampler<'_>, c: &mut Counters| -> Result<Vec<TripletBatch>> {
        TripletBatch::grouped(&fe, &pseudo_triplets(s, &targets, &pool, c)?)
    };
    let mut vs = sampler(val, plan, "cascade_ft/val")?;
    let mut scratch = Counters::default();
    let val_batches = (0..plan.val_batches)
        .map(|_| draw(&mut vs, &mut scratch))
        .collect::<Result<Vec<_>>>()?;
    let mut ts = sampler(train, plan, "cascade_ft")?;
    let mut step = |m: &InMsrl, c: &mut Counters| -> Result<StepLoss> {
        let b = draw(&mut ts, c)?;
        triplet_step_loss(m, &b, &opts, c)
    };
    let mut validate = triplet_validator(val_batches, opts);
    let mut trainable = prefixes(MSS_PREFIX, &insts);
    trainable.extend(prefixes(EXT_PREFIX, &insts));
    fit(
        model,
        Fit {
            stage: "cascade_ft".into(),
            vars: vars_for(model, &trainable),
            frozen_prefixes: trainable,
            lr: plan.learning_rate(),
            epochs: plan.max_epochs,
            steps_per_epoch: plan.steps_per_epoch,
            patience: Some(plan.patience),
            step: &mut step,
            validate: Some(&mut validate),
        },
        log,
    )
}

fn combo_batch(s: &mut TripletSampler<'_>, fe: &crate::nets::Frontend, n: usize) -> Result<ComboBatch> {
    let mut inputs = Vec::with_capacity(n);
    for _ in 0..n {
        let seg = any_segment(s)?;
        inputs.push(s.sample_combination_input(&seg.stems)?);
    }
    ComboBatch::new(fe, &inputs)
}

/// Regresses the disentangled embedding of combination-pattern mixes onto
/// concatenated Clean features (zeros for absent instruments).
pub fn pretrain_direct(
    model: &mut InMsrl,
    clean: &InMsrl,
    train: &Corpus,
    val: &Corpus,
    plan: &TrainPlan,
    log: &mut MetricsLog,
) -> Result<StageReport> {
    plan.validate()?;
    require_family(model, Family::Direct, "pretrain_direct")?;
    require_family(clean, Family::Clean, "pretrain_direct targets")?;
    check_corpora(train, val)?;
    if clean.config().embed_dim != model.config().embed_dim {
        return Err(Error::Config("Clean and Direct embedding sizes differ".into()));
    }
    let fe = model.frontend().clone();
    let mut vs = sampler(val, plan, "direct_pretrain/val")?;
    let val_sets: Vec<(ComboBatch, Tensor)> = (0..plan.val_batches)
        .map(|_| {
            let c = combo_batch(&mut vs, &fe, plan.batch_size)?;
            let t = clean_targets(clean, &c)?;
            Ok((c, t))
        })
        .collect::<Result<_>>()?;
    let mut ts = sampler(train, plan, "direct_pretrain")?;
    let mut step = |m: &InMsrl, c: &mut Counters| -> Result<StepLoss> {
        let combos = combo_batch(&mut ts, &fe, plan.batch_size)?;
        c.combination_inputs += combos.len() as u64;
        let targets = clean_targets(clean, &combos)?;
        pretrain_step_loss(m, &combos, &targets)
    };
    let mut validate = |m: &InMsrl| -> Result<(f64, Components)> {
        let mut total = 0.0;
        for (c, t) in &val_sets {
            total += pretrain_step_loss(m, c, t)?.value()?;
        }
        let v = total / val_sets.len() as f64;
        Ok((v, BTreeMap::from([("mse".to_string(), v)])))
    };
    let trainable = vec![DIRECT_PREFIX.to_string()];
    fit(
        model,
        Fit {
            stage: "direct_pretrain".into(),
            vars: vars_for(model, &trainable),
            frozen_prefixes: trainable,
            lr: plan.learning_rate(),
            epochs: plan.max_epochs,
            steps_per_epoch: plan.steps_per_epoch,
            patience: Some(plan.patience),
            step: &mut step,
            validate: Some(&mut validate),
        },
        log,
    )
}

/// Pseudo-triplet training of the disentangled extractor with masked
/// embeddings, plus `lambda_rec` times the reconstruction term on
/// combination-pattern mixes. `lambda_rec = 0` skips the decoders entirely.
///
/// Triplets and combination inputs come from separate streams, so runs that
/// differ only in `lambda_rec` see identical triplets.
pub fn train_direct(
    model: &mut InMsrl,
    train: &Corpus,
    val: &Corpus,
    plan: &TrainPlan,
    log: &mut MetricsLog,
) -> Result<StageReport> {
    plan.validate()?;
    require_family(model, Family::Direct, "train_direct")?;
    check_corpora(train, val)?;
    let insts = plan.instruments_within(model.family().instruments())?;
    let pool = model.family().instruments().to_vec();
    let lambda_rec = if plan.regime == Regime::Direct { 0.0 } else { plan.lambda_rec };
    let stage = if lambda_rec > 0.0 { "direct_multitask" } else { "direct" };
    let fe = model.frontend().clone();
    let draw = |s: &mut TripletSampler<'_>, c: &mut Counters| -> Result<Vec<TripletBatch>> {
        let targets: Vec<Instrument> = (0..plan.batch_size)
            .map(|_| *insts.choose(s.rng()).expect("non-empty"))
            .collect();
        TripletBatch::grouped(&fe, &pseudo_triplets(s, &targets, &pool, c)?)
    };
    let mut vs = sampler(val, plan, "direct/val")?;
    let mut vc = sampler(val, plan, "direct/val/combo")?;
    let mut scratch = Counters::default();
    let val_sets = (0..plan.val_batches)
        .map(|_| Ok((draw(&mut vs, &mut scratch)?, combo_batch(&mut vc, &fe, plan.batch_size)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut ts = sampler(train, plan, "direct")?;
    let mut tc = sampler(train, plan, "direct/combo")?;
    let margin = plan.margin;
    let mut step = |m: &InMsrl, c: &mut Counters| -> Result<StepLoss> {
        let b = draw(&mut ts, c)?;
        let combos = if lambda_rec > 0.0 {
            Some(combo_batch(&mut tc, &fe, plan.batch_size)?)
        } else {
            None
        };
        multitask_step_loss(m, &b, combos.as_ref(), margin, lambda_rec, c)
    };
    let mut validate = |m: &InMsrl| -> Result<(f64, Components)> {
        let mut total = 0.0;
        let mut comps: Components = BTreeMap::new();
        let mut scratch = Counters::default();
        for (b, combos) in &val_sets {
            // Both terms are always reported so runs can be compared.
            let s = multitask_step_loss(m, b, Some(combos), margin, lambda_rec.max(f64::MIN_POSITIVE), &mut scratch)?;
            let trip = s.components["triplet"];
            total += trip + lambda_rec * s.components["reconstruction"];
            for (k, v) in s.components {
                *comps.entry(k).or_default() += v;
            }
        }
        let n = val_sets.len() as f64;
        comps.values_mut().for_each(|v| *v /= n);
        Ok((total / n, comps))
    };
    let mut trainable = vec![DIRECT_PREFIX.to_string()];
    if lambda_rec > 0.0 {
        trainable.push(RECON_PREFIX.to_string());
    }
    fit(
        model,
        Fit {
            stage: stage.into(),
            vars: vars_for(model, &trainable),
            frozen_prefixes: trainable,
            lr: plan.learning_rate(),
            epochs: plan.max_epochs,
            steps_per_epoch: plan.steps_per_epoch,
            patience: Some(plan.patience),
            step: &mut step,
            validate: Some(&mut validate),
        },
        log,
    )
}

/// Result of [`run_paft`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaftReport {
    pub stage: StageReport,
    pub triplets: usize,
    pub excluded_ties: usize,
}

/// Fine-tunes on ABX-derived triplets for exactly `paft_epochs` epochs.
///
/// Only the extractors train, except under [`Regime::CascadePaft`] where the
/// whole cascade trains, with the separation term when
/// `plan.paft_separation_loss` is set.
pub fn run_paft(
    model: &mut InMsrl,
    records: &[AbxRecord],
    corpus: &Corpus,
    paft_regime: PaftRegime,
    plan: &TrainPlan,
    log: &mut MetricsLog,
) -> Result<PaftReport> {
    plan.validate()?;
    if records.is_empty() {
        return Err(Error::Insufficient("PAFT needs ABX training records".into()));
    }
    let family = model.family();
    let all_parts = plan.regime == Regime::CascadePaft;
    if all_parts {
        require_family(model, Family::Cascade, "cascade_paft")?;
    }
    let insts: Vec<Instrument> = plan
        .instruments_within(family.instruments())?
        .into_iter()
        .filter(|i| records.iter().any(|r| r.instrument == *i))
        .collect();
    let mut triplets = Vec::new();
    let mut excluded_ties = 0;
    for &inst in &insts {
        let t = build_paft_triplets(records, inst, corpus, paft_regime, stream_seed(plan.seed, "paft/pseudo"))?;
        excluded_ties += t.excluded_ties;
        triplets.extend(t.triplets);
    }
    if triplets.is_empty() {
        return Err(Error::Insufficient("no usable ABX triplets for the model's instruments".into()));
    }
    let opts = TripletLossOptions {
        margin: plan.margin,
        lambda_sep: if all_parts && plan.paft_separation_loss { plan.lambda_sep } else { 0.0 },
        detach_separation: !all_parts,
    };
    let trainable: Vec<String> = if all_parts {
        let mut p = prefixes(MSS_PREFIX, &insts);
        p.extend(prefixes(EXT_PREFIX, &insts));
        p
    } else if family == Family::Direct {
        vec![DIRECT_PREFIX.to_string()]
    } else {
        prefixes(EXT_PREFIX, &insts)
    };
    let fe = model.frontend().clone();
    let steps = triplets.len().div_ceil(plan.batch_size);
    let mut order: Vec<usize> = (0..triplets.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(plan.seed, "paft/order"));
    let mut cursor = steps;
    let mut step = |m: &InMsrl, c: &mut Counters| -> Result<StepLoss> {
        if cursor == steps {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let lo = cursor * plan.batch_size;
        let chunk: Vec<Triplet> = order[lo..(lo + plan.batch_size).min(order.len())]
            .iter()
            .map(|&i| triplets[i].clone())
            .collect();
        cursor += 1;
        c.abx_triplets += chunk.len() as u64;
        triplet_step_loss(m, &TripletBatch::grouped(&fe, &chunk)?, &opts, c)
    };
    let stage = fit(
        model,
        Fit {
            stage: plan.regime.name().into(),
            vars: vars_for(model, &trainable),
            frozen_prefixes: trainable,
            lr: plan.learning_rate(),
            epochs: plan.paft_epochs,
            steps_per_epoch: steps,
            patience: None,
            step: &mut step,
            validate: None,
        },
        log,
    )?;
    Ok(PaftReport {
        triplets: order.len(),
        excluded_ties,
        stage,
    })
}
