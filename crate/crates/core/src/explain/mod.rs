//! Prediction attribution and embedding analysis.

mod attribution;
mod cluster;
mod embedding;

pub use attribution::{attribute, write_attribution, AttributionReport, DEFAULT_TOP};
pub use cluster::{adjusted_rand_index, cluster_score, kmeans, KMeansResult};
pub use embedding::{export_embeddings, EmbeddingDump, NodeKind, Pca};

use crate::error::{Error, Result};
use crate::model::checkpoint::CheckpointMeta;

/// Refuse analysis of a checkpoint that never took an optimizer step.
pub fn ensure_trained(meta: &CheckpointMeta) -> Result<()> {
    if meta.epochs_completed == 0 {
        return Err(Error::Checkpoint(
            "checkpoint holds untrained parameters (0 epochs completed)".into(),
        ));
    }
    Ok(())
}
