//! Cascade pipeline at toy scale: train the separators, the per-instrument
//! extractors on pseudo-piece triplets, then fine-tune both end to end.
//! Saves the final checkpoint.
//!
//! cargo run --example train_cascade -- [out_dir]

use candle_core::DType;
use inmsrl::corpus::{synth_corpus, Instrument};
use inmsrl::eval::{mes_normal, mes_normal_index, separation_sdr};
use inmsrl::nets::{save_checkpoint, CheckpointMeta, Family, InMsrl, ModelConfig};
use inmsrl::training::{finetune_e2e, train_extractors, train_mss, MetricsLog, Regime, TrainPlan, VAL_FRACTION};

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
        instruments: vec![Instrument::Drums, Instrument::Bass],
        ..TrainPlan::default()
    }
}

fn main() -> inmsrl::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "target/example-cascade".into());
    let cfg = ModelConfig::tiny();
    let corpus = synth_corpus(20, 20.0, 1, cfg.sample_rate)?.corpus;
    let (train, val) = corpus.split(VAL_FRACTION)?;
    let mut model = InMsrl::new(&cfg, Family::Cascade, 0, DType::F32)?;
    let mut log = MetricsLog::in_memory();

    for r in train_mss(&mut model, &train, &val, &plan(Regime::Mss, 4), &mut log)? {
        println!("{}: best validation L1 {:.4} at epoch {}", r.stage, r.best_val(), r.best_epoch);
    }
    let sdr = separation_sdr(&model, &val, Instrument::Drums, 5.0)?;
    println!("validation drums SDR after separator training: {sdr:.2} dB");

    let r = train_extractors(&mut model, &train, &val, &plan(Regime::Cascade, 4), &mut log)?;
    println!("{}: best validation triplet loss {:.4}, separators untouched: {}", r.stage, r.best_val(), r.frozen_hash_before == r.frozen_hash_after);
    let r = finetune_e2e(&mut model, &train, &val, &plan(Regime::CascadeFt, 2), &mut log)?;
    println!("{}: best validation loss {:.4}", r.stage, r.best_val());

    for inst in [Instrument::Drums, Instrument::Bass] {
        let index = mes_normal_index(&model, &corpus, inst, 5.0)?;
        println!("MES-Normal({inst}) over {} segments: {:.3}", index.len(), mes_normal(&index, inst)?);
    }

    std::fs::create_dir_all(&out)?;
    let meta = CheckpointMeta {
        regime: Regime::CascadeFt.name().into(),
        config_hash: String::new(),
        epoch: r.best_epoch,
        validation_loss: r.best_val(),
    };
    save_checkpoint(model.store(), &meta, out.as_ref(), "model")?;
    println!("checkpoint written to {out}/model.safetensors, {} metric records logged", log.records().len());
    Ok(())
}
