use std::path::Path;

use crate::bigraph::BipartiteGraph;
use crate::error::{Error, Result};
use crate::explain::NodeKind;
use crate::io::write_atomic;
use crate::model::{expected_level_gradients, ModelParams, NormalizedAdjacency};
use crate::numerics::DenseMatrix;

pub const DEFAULT_TOP: usize = 12;

/// Gradient×input attribution of one pair's expected level to every
/// node's feature row.
#[derive(Debug, Clone)]
pub struct AttributionReport {
    /// `(student, course)`.
    pub pair: (usize, usize),
    pub expected_level: f64,
    /// `∂E/∂X[node,k] · X[node,k]`, N×K.
    pub per_feature: DenseMatrix,
    /// `|Σ_k per_feature[node,k]|`.
    pub scores: Vec<f64>,
    /// Hops from the nearer endpoint over training edges.
    pub hops: Vec<Option<usize>>,
    /// Nodes by descending score, ties by index.
    pub ranking: Vec<usize>,
}

impl AttributionReport {
    pub fn rank_of(&self, node: usize) -> usize {
        self.ranking
            .iter()
            .position(|&n| n == node)
            .expect("every node is ranked")
    }
}

pub fn attribute(
    params: &ModelParams,
    ctx: &NormalizedAdjacency,
    pair: (usize, usize),
) -> Result<AttributionReport> {
    let (i, j) = pair;
    if i >= ctx.m() || ctx.m() + j >= ctx.node_count() {
        return Err(Error::InvalidArgument(format!("pair ({i}, {j}) out of range")));
    }
    let (expected_level, grads) = expected_level_gradients(ctx, params, pair)?;
    let per_feature = DenseMatrix::from_vec(
        params.x.rows(),
        params.x.cols(),
        grads
            .x
            .as_slice()
            .iter()
            .zip(params.x.as_slice())
            .map(|(g, x)| g * x)
            .collect(),
    )?;
    let scores: Vec<f64> = (0..per_feature.rows())
        .map(|n| per_feature.row(n).iter().sum::<f64>().abs())
        .collect();
    let mut ranking: Vec<usize> = (0..scores.len()).collect();
    ranking.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let hops = ctx.adjacency().hop_distances(&[i, ctx.m() + j]);
    Ok(AttributionReport {
        pair,
        expected_level,
        per_feature,
        scores,
        hops,
        ranking,
    })
}

/// `rank,node_id,node_kind,hop,score` for the `top` highest-scoring nodes.
/// Unreachable nodes have an empty `hop`.
pub fn write_attribution(
    path: &Path,
    graph: &BipartiteGraph,
    report: &AttributionReport,
    top: usize,
) -> Result<()> {
    write_atomic(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["rank", "node_id", "node_kind", "hop", "score"])?;
        for (rank, &node) in report.ranking.iter().take(top).enumerate() {
            out.write_record([
                (rank + 1).to_string(),
                graph.node_id(node).to_string(),
                NodeKind::of(node, graph.m()).as_str().to_string(),
                report.hops[node].map(|h| h.to_string()).unwrap_or_default(),
                report.scores[node].to_string(),
            ])?;
        }
        out.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    })
}
