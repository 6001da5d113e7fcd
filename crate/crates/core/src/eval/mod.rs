//! Evaluation protocols: 5NN music-ID accuracy on normal and pseudo test
//! sets, visualization export and ABX agreement.

mod abx;
mod embed;
mod export;
mod index;
mod knn;
mod oracle;
mod sets;

pub use abx::{
    abx_agreement, abx_split, clopper_pearson, model_choice, read_abx_records, write_abx_records,
    AbxChoice, AbxCondition, AbxEmbeddings, AbxFilter, AbxRecord, AbxWeighting, Agreement,
    DEFAULT_MIN_CONSENSUS,
};
pub use embed::{
    abx_embeddings, mes_normal_index, mes_pseudo_index, one_hot_oracle, separation_sdr, visualization_rows,
    Embedder, Placeholder, ABX_SEGMENT_S, EMBED_BATCH, MES_SEGMENT_S,
};
pub use export::{export_embeddings, import_embeddings, MetricReport};
pub use index::{EmbeddingIndex, EmbeddingRow, Subspace};
pub use knn::{
    eligible_correct_pieces, knn5_predict, mes_normal, mes_normal_counts, mes_pseudo,
    mes_pseudo_counts, K_NEIGHBORS,
};
pub use oracle::{stem_set_statistics, stem_statistics, synth_abx_records, OracleStats, SynthAbxOptions};
pub use sets::{
    build_mes_pseudo_set, build_mes_pseudo_set_from_ids, build_visualization_set,
    test_piece_segments, MesPseudoSet, TestPiece, VisSegment, MES_NONTARGET_PER_TARGET,
    MES_TARGET_PIECES, VIS_PIECES, VIS_SEGMENTS_PER_PAIR,
};
