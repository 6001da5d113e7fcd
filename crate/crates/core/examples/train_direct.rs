//! Disentangled model at toy scale: clean extractors teach the shared
//! extractor their embeddings, then triplet training with and without the
//! reconstruction decoder.
//!
//! cargo run --example train_direct

use candle_core::DType;
use inmsrl::corpus::{synth_corpus, Instrument};
use inmsrl::eval::{build_mes_pseudo_set, mes_pseudo, mes_pseudo_index};
use inmsrl::nets::{Family, InMsrl, ModelConfig};
use inmsrl::training::{pretrain_direct, train_direct, train_extractors, MetricsLog, Regime, TrainPlan, VAL_FRACTION};

fn plan(regime: Regime, epochs: usize) -> TrainPlan {
    TrainPlan {
        regime,
        lr: Some(1e-3),
        max_epochs: epochs,
        patience: epochs,
        batch_size: 4,
        steps_per_epoch: 3,
        val_batches: 1,
        segment_s: 2.0,
        ..TrainPlan::default()
    }
}

fn main() -> inmsrl::Result<()> {
    let cfg = ModelConfig::tiny();
    let corpus = synth_corpus(20, 20.0, 2, cfg.sample_rate)?.corpus;
    let (train, val) = corpus.split(VAL_FRACTION)?;
    let test = synth_corpus(40, 12.0, 3, cfg.sample_rate)?.corpus;
    let set = build_mes_pseudo_set(&test, Instrument::Bass, 0)?;
    let mut log = MetricsLog::in_memory();

    let mut clean = InMsrl::new(&cfg, Family::Clean, 0, DType::F32)?;
    let r = train_extractors(&mut clean, &train, &val, &plan(Regime::Clean, 3), &mut log)?;
    println!("{}: best validation loss {:.4}", r.stage, r.best_val());

    let mut pretrained = InMsrl::new(&cfg, Family::Direct, 0, DType::F32)?;
    let r = pretrain_direct(&mut pretrained, &clean, &train, &val, &plan(Regime::DirectPretrain, 3), &mut log)?;
    println!("{}: best validation MSE {:.4}", r.stage, r.best_val());

    for regime in [Regime::Direct, Regime::DirectMultitask] {
        // Independent copy: clones share parameter storage.
        let mut model = InMsrl::new(&cfg, Family::Direct, 0, DType::F32)?;
        model.load_params_from(&pretrained)?;
        let r = train_direct(&mut model, &train, &val, &plan(regime, 3), &mut log)?;
        let index = mes_pseudo_index(&model, &test, &set, 4.0)?;
        println!(
            "{}: best validation loss {:.4}, MES-Pseudo(bass) {:.3}",
            r.stage,
            r.best_val(),
            mes_pseudo(&index, Instrument::Bass)?
        );
    }
    Ok(())
}
