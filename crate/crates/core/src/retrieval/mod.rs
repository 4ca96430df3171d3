//! Embedding stores, distances, query expansion, fusion, pair scoring and
//! ROC-AUC evaluation.

mod eval;
mod metric;
mod store;

pub use eval::{
    load_pairs, load_scores, make_pairs, roc_auc, save_pairs, save_roc, save_scores, score_pairs, RocCurve,
    RocPoint, ScoredPair, VerificationPair,
};
pub use metric::{distance, fuse_embeddings, l2_normalize, query_expand, FuseMode, Metric, QeConfig};
pub use store::{load_embeddings, save_embeddings, EmbeddingRecord, EmbeddingStore};
