//! Music-ID estimation by 5-nearest-neighbour vote: MES-Normal over a
//! corpus and MES-Pseudo over the 40-piece pseudo construction, for an
//! untrained model and for the one-hot oracle.
//!
//! The clean extractor embeds the isolated stem, so pseudo pieces sharing
//! that stem are identical to it; the untrained cascade sees the mixture.
//!
//! cargo run --example mes_eval

use candle_core::DType;
use inmsrl::corpus::{synth_corpus, Instrument};
use inmsrl::eval::{
    build_mes_pseudo_set, mes_normal_counts, mes_normal_index, mes_pseudo_counts, mes_pseudo_index, one_hot_oracle,
};
use inmsrl::nets::{Family, InMsrl, ModelConfig};

fn main() -> inmsrl::Result<()> {
    let cfg = ModelConfig::tiny();
    let corpus = synth_corpus(40, 16.0, 9, cfg.sample_rate)?.corpus;
    let inst = Instrument::Drums;
    let set = build_mes_pseudo_set(&corpus, inst, 0)?;
    let mut pseudo = None;
    for family in [Family::Clean, Family::Cascade] {
        let model = InMsrl::new(&cfg, family, 0, DType::F32)?;
        let normal = mes_normal_index(&model, &corpus, inst, 4.0)?;
        let (hits, n) = mes_normal_counts(&normal, inst)?;
        println!(
            "MES-Normal({inst}), untrained {family:?}: {hits}/{n} = {:.3} (chance {:.3})",
            hits as f64 / n as f64,
            1.0 / corpus.len() as f64
        );
        let index = mes_pseudo_index(&model, &corpus, &set, 4.0)?;
        let (hits, n) = mes_pseudo_counts(&index, inst)?;
        println!("MES-Pseudo({inst}), untrained {family:?}: {hits}/{n} = {:.3}", hits as f64 / n as f64);
        pseudo = Some(index);
    }
    let pseudo = pseudo.unwrap();

    let (hits, n) = mes_pseudo_counts(&one_hot_oracle(&pseudo)?, inst)?;
    println!("MES-Pseudo({inst}), one-hot oracle: {hits}/{n} = {:.3}", hits as f64 / n as f64);
    Ok(())
}
