//! Preference data and perception-aware fine-tuning: simulate ABX listeners,
//! split the records, fine-tune the drums extractor on the training part
//! and compare agreement on the held-out part.
//!
//! cargo run --example abx_paft

use candle_core::DType;
use inmsrl::corpus::{synth_corpus, Instrument, PaftRegime};
use inmsrl::eval::{
    abx_agreement, abx_embeddings, abx_split, synth_abx_records, AbxCondition, AbxFilter, AbxRecord, AbxWeighting,
    SynthAbxOptions, Subspace,
};
use inmsrl::nets::{Family, InMsrl, ModelConfig};
use inmsrl::training::{run_paft, MetricsLog, Regime, TrainPlan};

fn report(model: &InMsrl, corpus: &inmsrl::corpus::Corpus, records: &[AbxRecord], tag: &str) -> inmsrl::Result<()> {
    let emb = abx_embeddings(model, corpus, records)?;
    for condition in [None, Some(AbxCondition::AllDiff), Some(AbxCondition::OneShared)] {
        let filter = AbxFilter { condition, ..AbxFilter::default() };
        let a = abx_agreement(&emb, records, &filter, Subspace::Full, AbxWeighting::PerRecord)?;
        println!(
            "{tag} {:<10} agreement {:.3} over {} records (95% CI {:.3}-{:.3})",
            condition.map_or("all".to_string(), |c| format!("{c:?}")),
            a.value,
            a.n,
            a.ci_low,
            a.ci_high
        );
    }
    Ok(())
}

fn main() -> inmsrl::Result<()> {
    let cfg = ModelConfig::tiny();
    let corpus = synth_corpus(12, 20.0, 4, cfg.sample_rate)?.corpus;
    // A uniform listener follows overall level, which even a random
    // extractor tracks; this one hears only the two lowest bands.
    let opts = SynthAbxOptions {
        n_records: 300,
        segment_s: 1.0,
        noise: 0.05,
        seed: 1,
        band_weights: (0..16).map(|k| if k < 2 { 1.0 } else { 0.0 }).collect(),
        ..SynthAbxOptions::default()
    };
    let records = synth_abx_records(&corpus, Instrument::Drums, &opts)?;
    let (train, test) = abx_split(&records, 0.7, 2)?;

    let mut model = InMsrl::new(&cfg, Family::Clean, 0, DType::F32)?;
    report(&model, &corpus, &test, "before")?;
    let plan = TrainPlan {
        regime: Regime::Paft,
        paft_epochs: 30,
        batch_size: 16,
        lr: Some(1e-3),
        instruments: vec![Instrument::Drums],
        ..TrainPlan::default()
    };
    let r = run_paft(&mut model, &train, &corpus, PaftRegime::Clean, &plan, &mut MetricsLog::in_memory())?;
    println!(
        "PAFT: {} triplets, {} tied records skipped, other extractors unchanged: {}",
        r.triplets,
        r.excluded_ties,
        r.stage.frozen_hash_before == r.stage.frozen_hash_after
    );
    report(&model, &corpus, &test, "after ")?;
    Ok(())
}
