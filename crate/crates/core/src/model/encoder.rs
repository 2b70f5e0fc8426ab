use crate::bigraph::{degrees, DegreeVector, LevelAdjacency, LEVELS};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::numerics::DenseMatrix;

/// The level matrices together with `D⁻¹`, ready for propagation.
///
/// `P_r = D⁻¹ M_r`. Rows of isolated nodes are left at zero.
#[derive(Debug, Clone)]
pub struct NormalizedAdjacency {
    adj: LevelAdjacency,
    inv_degree: Vec<f64>,
}

impl NormalizedAdjacency {
    pub fn new(adj: LevelAdjacency) -> Self {
        let deg = degrees(&adj);
        Self::with_degrees(adj, &deg)
    }

    pub fn with_degrees(adj: LevelAdjacency, deg: &DegreeVector) -> Self {
        Self {
            inv_degree: deg.inverse(),
            adj,
        }
    }

    pub fn adjacency(&self) -> &LevelAdjacency {
        &self.adj
    }

    pub fn m(&self) -> usize {
        self.adj.m()
    }

    pub fn node_count(&self) -> usize {
        self.adj.node_count()
    }

    pub fn inv_degree(&self) -> &[f64] {
        &self.inv_degree
    }

    fn level_is_empty(&self, r: usize) -> bool {
        self.adj.symmetric_all()[r].nnz() == 0
    }

    /// `P_r · h`, with `r` a zero-based level index.
    pub fn propagate(&self, r: usize, h: &DenseMatrix) -> Result<DenseMatrix> {
        let mut out = self.adj.symmetric_all()[r].spmm(h)?;
        out.scale_rows(&self.inv_degree);
        Ok(out)
    }

    /// `P_rᵀ · g = M_r · (D⁻¹ g)`, using the symmetry of `M_r`.
    pub fn propagate_transpose(&self, r: usize, g: &DenseMatrix) -> Result<DenseMatrix> {
        let mut scaled = g.clone();
        scaled.scale_rows(&self.inv_degree);
        self.adj.symmetric_all()[r].spmm(&scaled)
    }
}

/// Intermediates of one graph-convolution layer.
#[derive(Debug, Clone)]
pub(crate) struct LayerCache {
    /// `P_r · input` per level; `None` for levels without edges.
    pub aggregated: Vec<Option<DenseMatrix>>,
    pub pre_activation: DenseMatrix,
}

#[derive(Debug, Clone)]
pub struct Encoded {
    /// Output of the last graph-convolution layer, after ReLU and dropout.
    pub hidden: DenseMatrix,
    pub z_mean: DenseMatrix,
    pub z_log_std: DenseMatrix,
    pub(crate) layers: Option<Vec<LayerCache>>,
}

/// Run the encoder. `keep[l][node]` is the row multiplier applied to layer
/// `l`'s output (0 for a dropped node, `1/(1-p)` for a kept one); pass
/// `None` for inference. With `keep_cache` the per-layer intermediates
/// needed by [`encoder_backward`] are retained.
pub fn encode(
    ctx: &NormalizedAdjacency,
    params: &ModelParams,
    keep: Option<&[Vec<f64>]>,
    keep_cache: bool,
) -> Result<Encoded> {
    if params.x.rows() != ctx.node_count() {
        return Err(Error::Shape {
            op: "encode",
            left: params.x.shape(),
            right: (ctx.node_count(), ctx.node_count()),
        });
    }
    if let Some(k) = keep {
        if k.len() != params.gcn.len() || k.iter().any(|row| row.len() != ctx.node_count()) {
            return Err(Error::InvalidArgument(
                "dropout mask does not match layers × nodes".into(),
            ));
        }
    }
    let mut caches = Vec::with_capacity(params.gcn.len());
    let mut input = params.x.clone();
    for (l, weights) in params.gcn.iter().enumerate() {
        let mut pre = DenseMatrix::zeros(input.rows(), weights[0].cols());
        let mut aggregated = Vec::with_capacity(LEVELS);
        for (r, w) in weights.iter().enumerate() {
            if ctx.level_is_empty(r) {
                aggregated.push(None);
                continue;
            }
            let agg = ctx.propagate(r, &input)?;
            pre.add_assign(&agg.matmul(w)?)?;
            aggregated.push(Some(agg));
        }
        let mut out = pre.map(relu);
        if let Some(k) = keep {
            out.scale_rows(&k[l]);
        }
        if keep_cache {
            caches.push(LayerCache {
                aggregated,
                pre_activation: pre,
            });
        }
        input = out;
    }
    let z_mean = input.matmul(&params.w_mean)?;
    let z_log_std = input.matmul(&params.w_log_std)?;
    Ok(Encoded {
        hidden: input,
        z_mean,
        z_log_std,
        layers: keep_cache.then_some(caches),
    })
}

#[inline]
fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

/// Encoder parameter gradients.
pub(crate) struct EncoderGrads {
    pub x: DenseMatrix,
    pub gcn: Vec<Vec<DenseMatrix>>,
    pub w_mean: DenseMatrix,
    pub w_log_std: DenseMatrix,
}

/// Back-propagate `∂L/∂Z_mean` and `∂L/∂Z_log_std` to X, every `W_r` and
/// both heads.
pub(crate) fn encoder_backward(
    ctx: &NormalizedAdjacency,
    params: &ModelParams,
    encoded: &Encoded,
    keep: Option<&[Vec<f64>]>,
    d_mean: &DenseMatrix,
    d_log_std: &DenseMatrix,
) -> Result<EncoderGrads> {
    let caches = encoded.layers.as_ref().ok_or_else(|| {
        Error::InvalidArgument("backward needs a forward pass run with cached intermediates".into())
    })?;
    let w_mean = encoded.hidden.t_matmul(d_mean)?;
    let w_log_std = encoded.hidden.t_matmul(d_log_std)?;
    let mut d_out = d_mean.matmul_t(&params.w_mean)?;
    d_out.add_assign(&d_log_std.matmul_t(&params.w_log_std)?)?;

    let mut gcn = vec![Vec::new(); params.gcn.len()];
    for l in (0..params.gcn.len()).rev() {
        let cache = &caches[l];
        if let Some(k) = keep {
            d_out.scale_rows(&k[l]);
        }
        // ReLU gate.
        let mut d_pre = d_out;
        for (g, &s) in d_pre
            .as_mut_slice()
            .iter_mut()
            .zip(cache.pre_activation.as_slice())
        {
            if s <= 0.0 {
                *g = 0.0;
            }
        }
        let in_dim = params.gcn[l][0].rows();
        let mut d_in = DenseMatrix::zeros(ctx.node_count(), in_dim);
        let mut d_weights = Vec::with_capacity(LEVELS);
        for (r, w) in params.gcn[l].iter().enumerate() {
            match &cache.aggregated[r] {
                None => d_weights.push(DenseMatrix::zeros(w.rows(), w.cols())),
                Some(agg) => {
                    d_weights.push(agg.t_matmul(&d_pre)?);
                    let d_agg = d_pre.matmul_t(w)?;
                    d_in.add_assign(&ctx.propagate_transpose(r, &d_agg)?)?;
                }
            }
        }
        gcn[l] = d_weights;
        d_out = d_in;
    }
    Ok(EncoderGrads {
        x: d_out,
        gcn,
        w_mean,
        w_log_std,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bigraph::{decompose, BipartiteGraph, Edge};
    use crate::model::{init_params, ModelDims};

    fn toy(edges: Vec<Edge>, m: usize, n: usize) -> NormalizedAdjacency {
        let g = BipartiteGraph::new(
            (0..m).map(|i| format!("s{i}")).collect(),
            (0..n).map(|j| format!("c{j}")).collect(),
            edges,
        )
        .unwrap();
        NormalizedAdjacency::new(decompose(&g))
    }

    fn dims(nodes: usize) -> ModelDims {
        ModelDims {
            nodes,
            features: 4,
            hidden: 5,
            latent: 3,
            depth: 1,
        }
    }

    #[test]
    fn no_edges_gives_zero_outputs() {
        let ctx = toy(vec![], 3, 2);
        let p = init_params(dims(5), 1).unwrap();
        let enc = encode(&ctx, &p, None, false).unwrap();
        assert!(enc.hidden.as_slice().iter().all(|&v| v == 0.0));
        assert!(enc.z_mean.as_slice().iter().all(|&v| v == 0.0));
        assert!(enc.z_log_std.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn only_the_observed_level_matters() {
        let ctx = toy(
            vec![Edge {
                student: 0,
                course: 0,
                level: 4,
            }],
            1,
            1,
        );
        let p = init_params(dims(2), 3).unwrap();
        let base = encode(&ctx, &p, None, false).unwrap();
        let mut q = p.clone();
        for r in (0..10).filter(|&r| r != 3) {
            q.gcn[0][r].scale(-3.0);
        }
        let other = encode(&ctx, &q, None, false).unwrap();
        assert_eq!(base.hidden, other.hidden);
        let mut q = p.clone();
        q.gcn[0][3].scale(-3.0);
        assert_ne!(base.hidden, encode(&ctx, &q, None, false).unwrap().hidden);
    }

    #[test]
    fn dropped_rows_are_zero() {
        let ctx = toy(
            vec![
                Edge { student: 0, course: 0, level: 2 },
                Edge { student: 1, course: 0, level: 7 },
            ],
            2,
            1,
        );
        let p = init_params(dims(3), 4).unwrap();
        let keep = vec![vec![0.0, 2.0, 2.0]];
        let enc = encode(&ctx, &p, Some(&keep), false).unwrap();
        assert!(enc.hidden.row(0).iter().all(|&v| v == 0.0));
        let plain = encode(&ctx, &p, None, false).unwrap();
        for (a, b) in enc.hidden.row(2).iter().zip(plain.hidden.row(2)) {
            assert_eq!(*a, 2.0 * b);
        }
    }

    #[test]
    fn backward_requires_cache() {
        let ctx = toy(vec![], 1, 1);
        let p = init_params(dims(2), 0).unwrap();
        let enc = encode(&ctx, &p, None, false).unwrap();
        let z = DenseMatrix::zeros(2, 3);
        assert!(encoder_backward(&ctx, &p, &enc, None, &z, &z).is_err());
    }
}
