use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Bias-corrected Adam (Kingma & Ba) over an ordered set of named tensors.
///
/// Moment buffers are allocated lazily on the first step and matched to
/// parameters by position; the names are only used in error messages.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first_moment: Vec<DenseMatrix>,
    second_moment: Vec<DenseMatrix>,
}

impl AdamState {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: BETA1,
            beta2: BETA2,
            epsilon: EPSILON,
            step: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Apply one update in place. Nothing is modified when any gradient
    /// is rejected.
    pub fn step(
        &mut self,
        params: Vec<(String, &mut DenseMatrix)>,
        grads: Vec<(String, &DenseMatrix)>,
    ) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::InvalidArgument(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for ((name, p), (_, g)) in params.iter().zip(&grads) {
            if p.shape() != g.shape() {
                return Err(Error::Shape {
                    op: "adam_step",
                    left: p.shape(),
                    right: g.shape(),
                });
            }
            if !g.is_finite() {
                return Err(Error::NonFinite {
                    name: format!("grad:{name}"),
                    epoch: None,
                });
            }
        }
        if self.first_moment.is_empty() {
            self.first_moment = params
                .iter()
                .map(|(_, p)| DenseMatrix::zeros(p.rows(), p.cols()))
                .collect();
            self.second_moment = self.first_moment.clone();
        } else if self.first_moment.len() != params.len()
            || self
                .first_moment
                .iter()
                .zip(&params)
                .any(|(m, (_, p))| m.shape() != p.shape())
        {
            return Err(Error::InvalidArgument(
                "parameter set changed between Adam steps".into(),
            ));
        }

        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        for (idx, ((_, p), (_, g))) in params.into_iter().zip(grads).enumerate() {
            let m = self.first_moment[idx].as_mut_slice();
            let v = self.second_moment[idx].as_mut_slice();
            for (((pi, &gi), mi), vi) in p.as_mut_slice().iter_mut().zip(g.as_slice()).zip(m).zip(v) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let m_hat = *mi / bias1;
                let v_hat = *vi / bias2;
                *pi -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}
