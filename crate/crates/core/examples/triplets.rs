//! Label-free triplets: same-piece positives and pseudo-piece triplets that
//! share the accompaniment but swap the target stem.
//!
//! cargo run --example triplets

use inmsrl::corpus::{synth_corpus, CombinationPattern, Instrument, TripletSampler};

fn main() -> inmsrl::Result<()> {
    let corpus = synth_corpus(8, 30.0, 5, 4000)?.corpus;
    let mut sampler = TripletSampler::new(&corpus, 5.0, 1)?;

    let t = sampler.sample_s4_triplet(Instrument::Bass)?;
    println!(
        "S4 bass triplet: anchor {} positive {} negative {}",
        t.anchor.source_piece(Instrument::Bass),
        t.positive.source_piece(Instrument::Bass),
        t.negative.source_piece(Instrument::Bass)
    );

    let pool = [Instrument::Drums, Instrument::Bass];
    let (basic, additional) = sampler.sample_pseudo_triplet(Instrument::Drums, &pool)?;
    for (name, t) in [("basic", &basic), ("additional", &additional)] {
        println!("{name} pseudo triplet ({:?}, target {}):", t.provenance, t.target);
        for (role, seg) in [("anchor", &t.anchor), ("positive", &t.positive), ("negative", &t.negative)] {
            let sources: Vec<String> = Instrument::ALL
                .iter()
                .map(|&i| format!("{i}<-{}", seg.source_piece(i)))
                .collect();
            println!("  {role:8} {}", sources.join(" "));
        }
    }

    let seg = sampler.sample_segment(Instrument::Piano)?;
    let (_, pattern): (_, CombinationPattern) = sampler.sample_combination_input(&seg.stems)?;
    println!("random combination input keeps {:?}", pattern.instruments());
    Ok(())
}
