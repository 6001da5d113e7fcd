//! Render a small synthetic multi-stem corpus, write it as WAV files with a
//! manifest, and load it back.
//!
//! cargo run --example synth_corpus -- /tmp/inmsrl-corpus

use inmsrl::corpus::{load_corpus, load_manifest, synth_corpus, write_synth_corpus, Instrument};

fn main() -> inmsrl::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "target/example-corpus".into());
    let synth = synth_corpus(6, 20.0, 7, 4000)?;
    let manifest = write_synth_corpus(&synth, out.as_ref())?;
    println!("wrote {} pieces, manifest {}", synth.corpus.len(), manifest.display());

    let corpus = load_corpus(&load_manifest(&manifest)?)?;
    for (piece, params) in corpus.pieces().iter().zip(&synth.params) {
        let rms: Vec<String> = Instrument::ALL
            .iter()
            .map(|&i| format!("{i} {:.3}", piece.stems.stem_in_mix(i).rms()))
            .collect();
        println!(
            "{}: {:.0} s, drum interval {:.3} s, stem rms [{}]",
            piece.id,
            piece.stems.duration_s(),
            params.drums.interval_s,
            rms.join(", ")
        );
    }
    Ok(())
}
