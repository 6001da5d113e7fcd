//! Embeddings of the visualization set (10 target x 10 accompaniment
//! pieces) written to CSV for plotting, then read back.
//!
//! cargo run --example export_embed -- [out.csv]

use candle_core::DType;
use inmsrl::corpus::{synth_corpus, Instrument};
use inmsrl::eval::{build_visualization_set, export_embeddings, import_embeddings, visualization_rows};
use inmsrl::nets::{Family, InMsrl, ModelConfig};

fn main() -> inmsrl::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "target/example-embeddings.csv".into());
    let cfg = ModelConfig::tiny();
    let corpus = synth_corpus(12, 12.0, 6, cfg.sample_rate)?.corpus;
    let model = InMsrl::new(&cfg, Family::Direct, 0, DType::F32)?;

    let set = build_visualization_set(&corpus, Instrument::Guitar, 1.0, 0)?;
    let rows = visualization_rows(&model, &corpus, Instrument::Guitar, &set)?;
    export_embeddings(&rows, out.as_ref())?;
    let back = import_embeddings(out.as_ref())?;
    println!(
        "{} rows of dimension {} written to {out}; read back identical: {}",
        rows.len(),
        rows[0].vector.len(),
        back == rows
    );
    Ok(())
}
