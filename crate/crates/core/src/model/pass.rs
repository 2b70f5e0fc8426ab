use serde::{Deserialize, Serialize};

use crate::bigraph::{Edge, LEVELS};
use crate::error::{Error, Result};
use crate::model::decoder::{decoder_backward, literal_bce};
use crate::model::encoder::{encoder_backward, EncoderGrads};
use crate::model::latent::{combine, latent_backward};
use crate::model::{
    decode, encode, kl_cost, Encoded, Gradients, ModelParams, NormalizedAdjacency,
    PredictionTensor,
};
use crate::numerics::{DenseMatrix, Rng};

/// Reconstruction term of the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossMode {
    /// Ten-way cross-entropy on observed training edges only.
    #[default]
    MaskedSoftmaxCe,
    /// Per-channel sigmoid binary cross-entropy over every entry of all
    /// ten N×N level matrices.
    LiteralBce,
}

impl LossMode {
    pub fn as_str(self) -> &'static str {
        match self {
            LossMode::MaskedSoftmaxCe => "masked-softmax-ce",
            LossMode::LiteralBce => "literal-bce",
        }
    }
}

impl std::str::FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "masked-softmax-ce" => Ok(LossMode::MaskedSoftmaxCe),
            "literal-bce" => Ok(LossMode::LiteralBce),
            other => Err(Error::InvalidArgument(format!(
                "unknown loss mode `{other}` (expected masked-softmax-ce or literal-bce)"
            ))),
        }
    }
}

/// The stochastic inputs of one training pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Noise {
    /// Standard-normal draws, N×E.
    pub epsilon: DenseMatrix,
    /// Per layer, per node row multiplier: 0 when dropped, `1/(1-p)` when kept.
    pub keep: Option<Vec<Vec<f64>>>,
}

impl Noise {
    /// ε = 0 and no dropout.
    pub fn inference(params: &ModelParams) -> Self {
        let dims = params.dims();
        Self {
            epsilon: DenseMatrix::zeros(dims.nodes, dims.latent),
            keep: None,
        }
    }

    pub fn sample(
        params: &ModelParams,
        dropout: f64,
        noise_rng: &mut Rng,
        dropout_rng: &mut Rng,
    ) -> Self {
        let dims = params.dims();
        let epsilon = DenseMatrix::from_fn(dims.nodes, dims.latent, |_, _| noise_rng.normal());
        let keep = (dropout > 0.0).then(|| {
            let scale = 1.0 / (1.0 - dropout);
            (0..dims.depth)
                .map(|_| {
                    (0..dims.nodes)
                        .map(|_| {
                            if dropout_rng.uniform() < dropout {
                                0.0
                            } else {
                                scale
                            }
                        })
                        .collect()
                })
                .collect()
        });
        Self { epsilon, keep }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    /// Weighted KL term, `kl_weight · cost₁`.
    pub kl: f64,
    pub reconstruction: f64,
    pub total: f64,
}

/// `−Σ log p_true` over the predicted pairs.
pub fn cross_entropy(pred: &PredictionTensor, truth: &[u8]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions but {} truth levels",
            pred.len(),
            truth.len()
        )));
    }
    let mut total = 0.0;
    for (q, &level) in truth.iter().enumerate() {
        if !(1..=LEVELS as u8).contains(&level) {
            return Err(Error::InvalidArgument(format!("level {level} outside 1..=10")));
        }
        total -= pred.log_prob(q, level);
    }
    Ok(total)
}

/// `kl_weight · kl + cross_entropy(pred, truth)`.
pub fn loss(pred: &PredictionTensor, truth: &[u8], kl: f64, kl_weight: f64) -> Result<f64> {
    Ok(kl_weight * kl + cross_entropy(pred, truth)?)
}

struct ForwardPass {
    encoded: Encoded,
    z: DenseMatrix,
}

fn forward(
    ctx: &NormalizedAdjacency,
    params: &ModelParams,
    noise: &Noise,
    keep_cache: bool,
) -> Result<ForwardPass> {
    let encoded = encode(ctx, params, noise.keep.as_deref(), keep_cache)?;
    let z = combine(&encoded.z_mean, &encoded.z_log_std, &noise.epsilon)?;
    Ok(ForwardPass { encoded, z })
}

fn split_edges(edges: &[Edge]) -> (Vec<(usize, usize)>, Vec<u8>) {
    edges
        .iter()
        .map(|e| ((e.student, e.course), e.level))
        .unzip()
}

/// Objective value only; used by finite-difference checks.
pub fn objective(
    ctx: &NormalizedAdjacency,
    params: &ModelParams,
    noise: &Noise,
    edges: &[Edge],
    mode: LossMode,
    kl_weight: f64,
) -> Result<LossBreakdown> {
    let pass = forward(ctx, params, noise, false)?;
    let kl = kl_weight * kl_cost(&pass.encoded.z_mean, &pass.encoded.z_log_std)?;
    let reconstruction = match mode {
        LossMode::MaskedSoftmaxCe => {
            let (pairs, truth) = split_edges(edges);
            let pred = decode(&pass.z, &params.decoder, ctx.m(), &pairs)?;
            cross_entropy(&pred, &truth)?
        }
        LossMode::LiteralBce => literal_bce(&pass.z, &params.decoder, ctx.adjacency(), false)?.0,
    };
    Ok(LossBreakdown {
        kl,
        reconstruction,
        total: kl + reconstruction,
    })
}

/// One forward pass over the training `edges`, the objective, and its
/// exact gradient with respect to every parameter.
///
/// In literal mode the targets are the level matrices of `ctx` and
/// `edges` is ignored.
pub fn loss_and_gradients(
    ctx: &NormalizedAdjacency,
    params: &ModelParams,
    noise: &Noise,
    edges: &[Edge],
    mode: LossMode,
    kl_weight: f64,
) -> Result<(LossBreakdown, Gradients)> {
    let pass = forward(ctx, params, noise, true)?;
    let enc = &pass.encoded;
    let kl = kl_weight * kl_cost(&enc.z_mean, &enc.z_log_std)?;

    let (reconstruction, d_z, d_decoder) = match mode {
        LossMode::MaskedSoftmaxCe => {
            let (pairs, truth) = split_edges(edges);
            let pred = decode(&pass.z, &params.decoder, ctx.m(), &pairs)?;
            let ce = cross_entropy(&pred, &truth)?;
            // ∂(−log p_y)/∂logit_r = p_r − [r = y]
            let d_logits: Vec<[f64; LEVELS]> = pred
                .probs
                .iter()
                .zip(&truth)
                .map(|(p, &y)| {
                    let mut g = *p;
                    g[usize::from(y) - 1] -= 1.0;
                    g
                })
                .collect();
            let (d_z, d_h) = decoder_backward(&pass.z, &params.decoder, ctx.m(), &pairs, &d_logits);
            (ce, d_z, d_h)
        }
        LossMode::LiteralBce => {
            let (cost, grads) = literal_bce(&pass.z, &params.decoder, ctx.adjacency(), true)?;
            let (d_z, d_h) = grads.expect("gradient requested");
            (cost, d_z, d_h)
        }
    };

    let (d_mean, d_log_std) =
        latent_backward(&d_z, &enc.z_mean, &enc.z_log_std, &noise.epsilon, kl_weight)?;
    let EncoderGrads {
        x,
        gcn,
        w_mean,
        w_log_std,
    } = encoder_backward(ctx, params, enc, noise.keep.as_deref(), &d_mean, &d_log_std)?;
    let grads = Gradients(ModelParams {
        x,
        gcn,
        w_mean,
        w_log_std,
        decoder: d_decoder,
    });
    let breakdown = LossBreakdown {
        kl,
        reconstruction,
        total: kl + reconstruction,
    };
    Ok((breakdown, grads))
}

/// Posterior-mean predictions (ε = 0, no dropout).
pub fn predict(
    ctx: &NormalizedAdjacency,
    params: &ModelParams,
    pairs: &[(usize, usize)],
) -> Result<PredictionTensor> {
    let pass = forward(ctx, params, &Noise::inference(params), false)?;
    decode(&pass.z, &params.decoder, ctx.m(), pairs)
}

/// Posterior-mean latent means, N×E.
pub fn embeddings(ctx: &NormalizedAdjacency, params: &ModelParams) -> Result<DenseMatrix> {
    Ok(encode(ctx, params, None, false)?.z_mean)
}

/// Expected level `Σ_r r·p_r` of one pair at the posterior mean, and its
/// gradient with respect to every parameter.
pub fn expected_level_gradients(
    ctx: &NormalizedAdjacency,
    params: &ModelParams,
    pair: (usize, usize),
) -> Result<(f64, Gradients)> {
    let noise = Noise::inference(params);
    let pass = forward(ctx, params, &noise, true)?;
    let pred = decode(&pass.z, &params.decoder, ctx.m(), &[pair])?;
    let expected = pred.expected_level(0);
    // ∂E/∂logit_r = p_r (r − E)
    let mut d_logit = [0.0; LEVELS];
    for (r, g) in d_logit.iter_mut().enumerate() {
        *g = pred.probs[0][r] * ((r + 1) as f64 - expected);
    }
    let (d_z, d_decoder) = decoder_backward(&pass.z, &params.decoder, ctx.m(), &[pair], &[d_logit]);
    let enc = &pass.encoded;
    let (d_mean, d_log_std) = latent_backward(&d_z, &enc.z_mean, &enc.z_log_std, &noise.epsilon, 0.0)?;
    let g = encoder_backward(ctx, params, enc, None, &d_mean, &d_log_std)?;
    Ok((
        expected,
        Gradients(ModelParams {
            x: g.x,
            gcn: g.gcn,
            w_mean: g.w_mean,
            w_log_std: g.w_log_std,
            decoder: d_decoder,
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bigraph::{decompose, BipartiteGraph};
    use crate::model::{init_params, ModelDims};

    fn one_hot(level: u8) -> PredictionTensor {
        let mut logits = [-1e4; LEVELS];
        logits[usize::from(level) - 1] = 0.0;
        PredictionTensor {
            pairs: vec![(0, 0)],
            probs: vec![crate::model::decoder::softmax(&logits)],
            logits: vec![logits],
        }
    }

    #[test]
    fn perfect_prediction_costs_nothing() {
        let pred = one_hot(7);
        assert!(cross_entropy(&pred, &[7]).unwrap().abs() < 1e-9);
    }

    #[test]
    fn uniform_prediction_costs_ln10_per_edge() {
        let t = 13;
        let pred = PredictionTensor {
            pairs: vec![(0, 0); t],
            logits: vec![[0.25; LEVELS]; t],
            probs: vec![[0.1; LEVELS]; t],
        };
        let truth: Vec<u8> = (0..t).map(|q| (q % 10) as u8 + 1).collect();
        let ce = cross_entropy(&pred, &truth).unwrap();
        assert!((ce - t as f64 * 10f64.ln()).abs() < 1e-9);
        assert!((loss(&pred, &truth, 2.5, 1.0).unwrap() - (ce + 2.5)).abs() < 1e-12);
        assert!((loss(&pred, &truth, 2.5, 0.0).unwrap() - ce).abs() < 1e-12);
    }

    #[test]
    fn loss_mode_parse() {
        assert_eq!("literal-bce".parse::<LossMode>().unwrap(), LossMode::LiteralBce);
        assert!("bce".parse::<LossMode>().is_err());
    }

    fn toy() -> (NormalizedAdjacency, Vec<Edge>, ModelParams) {
        // Students 0,1 with course 0; student 2 isolated; course 1 isolated.
        let edges = vec![
            Edge { student: 0, course: 0, level: 3 },
            Edge { student: 1, course: 0, level: 8 },
        ];
        let g = BipartiteGraph::new(
            (0..3).map(|i| format!("s{i}")).collect(),
            (0..2).map(|j| format!("c{j}")).collect(),
            edges.clone(),
        )
        .unwrap();
        let dims = ModelDims {
            nodes: 5,
            features: 3,
            hidden: 4,
            latent: 2,
            depth: 1,
        };
        (
            NormalizedAdjacency::new(decompose(&g)),
            edges,
            init_params(dims, 11).unwrap(),
        )
    }

    #[test]
    fn isolated_nodes_get_no_encoder_gradient() {
        let (ctx, edges, params) = toy();
        let mut rng = Rng::new(1);
        let noise = Noise::sample(&params, 0.0, &mut rng, &mut Rng::new(2));
        let (_, g) =
            loss_and_gradients(&ctx, &params, &noise, &edges, LossMode::MaskedSoftmaxCe, 1.0)
                .unwrap();
        // X rows of isolated student 2 and isolated course 1 (node 4).
        assert!(g.x.row(2).iter().all(|&v| v == 0.0));
        assert!(g.x.row(4).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn kl_path_disabled() {
        let (ctx, edges, params) = toy();
        let noise = Noise::inference(&params);
        let (b, g) =
            loss_and_gradients(&ctx, &params, &noise, &edges, LossMode::MaskedSoftmaxCe, 0.0)
                .unwrap();
        assert_eq!(b.kl, 0.0);
        // ε = 0 and no KL: log σ receives no gradient at all.
        assert!(g.w_log_std.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn inference_noise_matches_predict() {
        let (ctx, edges, params) = toy();
        let noise = Noise::inference(&params);
        let b = objective(&ctx, &params, &noise, &edges, LossMode::MaskedSoftmaxCe, 0.0).unwrap();
        let pred = predict(&ctx, &params, &[(0, 0), (1, 0)]).unwrap();
        assert_eq!(b.reconstruction, cross_entropy(&pred, &[3, 8]).unwrap());
    }
}
