//! The graph variational autoencoder.
//!
//! * [`encoder`]: level-wise normalized message passing `ReLU(Σ_r D⁻¹M_r H W_r)`,
//!   optionally stacked, followed by two linear heads for the latent mean
//!   and log standard deviation.
//! * [`latent`]: reparameterized sampling `Z = μ + ε ⊙ exp(log σ)` and the
//!   KL cost against the standard normal prior.
//! * [`decoder`]: per-level bilinear scores `(Z ⊙ H_r) Zᵀ`, turned into a
//!   ten-way distribution for every queried student–course pair.
//! * [`pass`]: full forward pass, training objective and analytic
//!   gradients.
//!
//! Gradients are hand-derived reverse mode; `tests/gradient_check.rs`
//! holds the finite-difference oracle for every tensor.

pub mod checkpoint;
pub mod decoder;
pub mod encoder;
pub mod latent;
pub mod pass;

use serde::{Deserialize, Serialize};

use crate::bigraph::LEVELS;
use crate::error::{Error, Result};
use crate::numerics::{DenseMatrix, Rng};

pub use decoder::{decode, PredictionTensor};
pub use encoder::{encode, Encoded, NormalizedAdjacency};
pub use latent::{kl_cost, reparameterize};
pub use pass::{
    cross_entropy, embeddings, expected_level_gradients, loss, loss_and_gradients, objective,
    predict, LossBreakdown, LossMode, Noise,
};

/// Tensor sizes: `nodes` N, `features` K, `hidden` E₁, `latent` E, and
/// the number of stacked graph-convolution layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub nodes: usize,
    pub features: usize,
    pub hidden: usize,
    pub latent: usize,
    pub depth: usize,
}

impl ModelDims {
    pub fn new(nodes: usize) -> Self {
        Self {
            nodes,
            features: 64,
            hidden: 64,
            latent: 32,
            depth: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.nodes, self.features, self.hidden, self.latent, self.depth];
        if all.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "model dimensions must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    fn layer_input(&self, layer: usize) -> usize {
        if layer == 0 {
            self.features
        } else {
            self.hidden
        }
    }
}

/// All trainable tensors.
///
/// Declaration order (used by checkpoints and the optimizer): `x`, then
/// `gcn{l}.w{r}` for each layer and level, `w_mean`, `w_log_std`, then
/// `decoder.h{r}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Free node features, N×K.
    pub x: DenseMatrix,
    /// `gcn[layer][level - 1]`: K×E₁ for the first layer, E₁×E₁ after.
    pub gcn: Vec<Vec<DenseMatrix>>,
    /// E₁×E.
    pub w_mean: DenseMatrix,
    /// E₁×E.
    pub w_log_std: DenseMatrix,
    /// `decoder[level - 1]`: N×E.
    pub decoder: Vec<DenseMatrix>,
}

/// ∂Loss/∂θ with the same layout as [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub ModelParams);

impl std::ops::Deref for Gradients {
    type Target = ModelParams;

    fn deref(&self) -> &ModelParams {
        &self.0
    }
}

impl std::ops::DerefMut for Gradients {
    fn deref_mut(&mut self) -> &mut ModelParams {
        &mut self.0
    }
}

impl ModelParams {
    pub fn zeros(dims: ModelDims) -> Self {
        Self {
            x: DenseMatrix::zeros(dims.nodes, dims.features),
            gcn: (0..dims.depth)
                .map(|l| {
                    (0..LEVELS)
                        .map(|_| DenseMatrix::zeros(dims.layer_input(l), dims.hidden))
                        .collect()
                })
                .collect(),
            w_mean: DenseMatrix::zeros(dims.hidden, dims.latent),
            w_log_std: DenseMatrix::zeros(dims.hidden, dims.latent),
            decoder: (0..LEVELS)
                .map(|_| DenseMatrix::zeros(dims.nodes, dims.latent))
                .collect(),
        }
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            nodes: self.x.rows(),
            features: self.x.cols(),
            hidden: self.w_mean.rows(),
            latent: self.w_mean.cols(),
            depth: self.gcn.len(),
        }
    }

    pub fn named(&self) -> Vec<(String, &DenseMatrix)> {
        let mut out = vec![("x".to_string(), &self.x)];
        for (l, layer) in self.gcn.iter().enumerate() {
            for (r, w) in layer.iter().enumerate() {
                out.push((format!("gcn{}.w{}", l + 1, r + 1), w));
            }
        }
        out.push(("w_mean".into(), &self.w_mean));
        out.push(("w_log_std".into(), &self.w_log_std));
        for (r, h) in self.decoder.iter().enumerate() {
            out.push((format!("decoder.h{}", r + 1), h));
        }
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut DenseMatrix)> {
        let mut out = vec![("x".to_string(), &mut self.x)];
        for (l, layer) in self.gcn.iter_mut().enumerate() {
            for (r, w) in layer.iter_mut().enumerate() {
                out.push((format!("gcn{}.w{}", l + 1, r + 1), w));
            }
        }
        out.push(("w_mean".into(), &mut self.w_mean));
        out.push(("w_log_std".into(), &mut self.w_log_std));
        for (r, h) in self.decoder.iter_mut().enumerate() {
            out.push((format!("decoder.h{}", r + 1), h));
        }
        out
    }

    /// Name of the first tensor holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<String> {
        self.named()
            .into_iter()
            .find(|(_, t)| !t.is_finite())
            .map(|(n, _)| n)
    }

    /// Checks shapes against `dims()` and finiteness.
    pub fn validate(&self) -> Result<()> {
        let dims = self.dims();
        dims.validate()?;
        let expected = ModelParams::zeros(dims);
        for ((name, a), (_, b)) in self.named().into_iter().zip(expected.named()) {
            if a.shape() != b.shape() {
                return Err(Error::InvalidArgument(format!(
                    "{name} has shape {:?}, expected {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        if self.gcn.iter().any(|l| l.len() != LEVELS) || self.decoder.len() != LEVELS {
            return Err(Error::InvalidArgument("expected ten levels".into()));
        }
        if let Some(name) = self.first_non_finite() {
            return Err(Error::NonFinite { name, epoch: None });
        }
        Ok(())
    }
}

/// Glorot-uniform draw for every tensor, in declaration order:
/// entries ~ U(−b, b) with `b = √(6 / (rows + cols))`.
pub fn init_params(dims: ModelDims, seed: u64) -> Result<ModelParams> {
    dims.validate()?;
    let mut params = ModelParams::zeros(dims);
    let mut rng = Rng::stream(seed, "init");
    for (_, tensor) in params.named_mut() {
        let bound = glorot_bound(tensor.rows(), tensor.cols());
        for v in tensor.as_mut_slice() {
            *v = rng.uniform_range(-bound, bound);
        }
    }
    Ok(params)
}

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}
