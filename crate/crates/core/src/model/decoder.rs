use crate::bigraph::{LevelAdjacency, LEVELS};
use crate::error::{Error, Result};
use crate::numerics::{axpy, DenseMatrix};

/// Level distributions for a list of `(student, course)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTensor {
    pub pairs: Vec<(usize, usize)>,
    pub logits: Vec<[f64; LEVELS]>,
    pub probs: Vec<[f64; LEVELS]>,
}

impl PredictionTensor {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// `Σ_r r · p_r`.
    pub fn expected_level(&self, q: usize) -> f64 {
        self.probs[q]
            .iter()
            .enumerate()
            .map(|(r, p)| (r + 1) as f64 * p)
            .sum()
    }

    /// Most probable level; ties go to the lower level.
    pub fn argmax_level(&self, q: usize) -> u8 {
        let mut best = 0;
        for r in 1..LEVELS {
            if self.probs[q][r] > self.probs[q][best] {
                best = r;
            }
        }
        (best + 1) as u8
    }

    pub fn expected_levels(&self) -> Vec<f64> {
        (0..self.len()).map(|q| self.expected_level(q)).collect()
    }

    /// `log p_level` through log-sum-exp, finite even where `p` underflows.
    pub fn log_prob(&self, q: usize, level: u8) -> f64 {
        self.logits[q][usize::from(level) - 1] - log_sum_exp(&self.logits[q])
    }
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax(logits: &[f64; LEVELS]) -> [f64; LEVELS] {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = [0.0; LEVELS];
    let mut total = 0.0;
    for (o, l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        total += *o;
    }
    for o in &mut out {
        *o /= total;
    }
    out
}

/// Level-`r` score of student `i` and course `j`: the `(i, m + j)` entry of
/// `(Z ⊙ H_r) Zᵀ`, i.e. `Σ_k Z[i,k] H_r[i,k] Z[m+j,k]`. A softmax over the
/// ten levels gives the pair's distribution.
pub fn decode(
    z: &DenseMatrix,
    decoder: &[DenseMatrix],
    m: usize,
    queries: &[(usize, usize)],
) -> Result<PredictionTensor> {
    check_decoder(z, decoder)?;
    let mut logits = Vec::with_capacity(queries.len());
    let mut probs = Vec::with_capacity(queries.len());
    for &(i, j) in queries {
        let course = m + j;
        if i >= m || course >= z.rows() {
            return Err(Error::InvalidArgument(format!(
                "query ({i}, {j}) outside {m} students and {} courses",
                z.rows() - m.min(z.rows())
            )));
        }
        let (zi, zc) = (z.row(i), z.row(course));
        let mut l = [0.0; LEVELS];
        for (r, h) in decoder.iter().enumerate() {
            l[r] = zi
                .iter()
                .zip(h.row(i))
                .zip(zc)
                .fold(0.0, |acc, ((a, h), b)| acc + a * h * b);
        }
        probs.push(softmax(&l));
        logits.push(l);
    }
    Ok(PredictionTensor {
        pairs: queries.to_vec(),
        logits,
        probs,
    })
}

fn check_decoder(z: &DenseMatrix, decoder: &[DenseMatrix]) -> Result<()> {
    if decoder.len() != LEVELS {
        return Err(Error::InvalidArgument(format!(
            "expected {LEVELS} decoder channels, got {}",
            decoder.len()
        )));
    }
    for h in decoder {
        z.check_same("decode", h)?;
    }
    Ok(())
}

/// Chain `∂L/∂logit` for each query back to `Z` and the decoder weights.
pub(crate) fn decoder_backward(
    z: &DenseMatrix,
    decoder: &[DenseMatrix],
    m: usize,
    pairs: &[(usize, usize)],
    d_logits: &[[f64; LEVELS]],
) -> (DenseMatrix, Vec<DenseMatrix>) {
    let (rows, cols) = z.shape();
    let mut d_z = DenseMatrix::zeros(rows, cols);
    let mut d_h: Vec<DenseMatrix> = (0..LEVELS).map(|_| DenseMatrix::zeros(rows, cols)).collect();
    let mut tmp = vec![0.0; cols];
    for (&(i, j), dl) in pairs.iter().zip(d_logits) {
        let course = m + j;
        for (r, h) in decoder.iter().enumerate() {
            let g = dl[r];
            if g == 0.0 {
                continue;
            }
            let (zi, zc, hi) = (z.row(i), z.row(course), h.row(i));
            for k in 0..cols {
                tmp[k] = hi[k] * zc[k];
            }
            axpy(g, &tmp, d_z.row_mut(i));
            for k in 0..cols {
                tmp[k] = zi[k] * hi[k];
            }
            axpy(g, &tmp, d_z.row_mut(course));
            for k in 0..cols {
                tmp[k] = zi[k] * zc[k];
            }
            axpy(g, &tmp, d_h[r].row_mut(i));
        }
    }
    (d_z, d_h)
}

#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy over every entry of all ten `N×N` score matrices,
/// each entry squashed by its own sigmoid, against the 0-1 level matrices
/// `M_r`. Computed as `Σ softplus(s) − Σ_{M_r=1} s`.
///
/// With `want_grad` also returns `∂/∂Z` and `∂/∂H_r`.
pub(crate) fn literal_bce(
    z: &DenseMatrix,
    decoder: &[DenseMatrix],
    targets: &LevelAdjacency,
    want_grad: bool,
) -> Result<(f64, Option<(DenseMatrix, Vec<DenseMatrix>)>)> {
    check_decoder(z, decoder)?;
    if z.rows() != targets.node_count() {
        return Err(Error::Shape {
            op: "literal_bce",
            left: z.shape(),
            right: (targets.node_count(), targets.node_count()),
        });
    }
    let mut cost = 0.0;
    let mut d_z = DenseMatrix::zeros(z.rows(), z.cols());
    let mut d_h = Vec::new();
    for (r, h) in decoder.iter().enumerate() {
        let weighted = DenseMatrix::from_vec(
            z.rows(),
            z.cols(),
            z.as_slice()
                .iter()
                .zip(h.as_slice())
                .map(|(a, b)| a * b)
                .collect(),
        )?;
        let mut scores = weighted.matmul_t(z)?;
        let target = targets.symmetric(r as u8 + 1);
        cost += scores.as_slice().iter().map(|&s| softplus(s)).sum::<f64>();
        for (a, b) in target.entries() {
            cost -= scores[(a, b)];
        }
        if !want_grad {
            continue;
        }
        // scores ← σ(scores) − M_r
        for s in scores.as_mut_slice() {
            *s = sigmoid(*s);
        }
        for (a, b) in target.entries() {
            scores[(a, b)] -= 1.0;
        }
        let d_weighted = scores.matmul(z)?;
        d_z.add_assign(&scores.t_matmul(&weighted)?)?;
        let mut grad_h = DenseMatrix::zeros(z.rows(), z.cols());
        for idx in 0..z.as_slice().len() {
            let dw = d_weighted.as_slice()[idx];
            d_z.as_mut_slice()[idx] += dw * h.as_slice()[idx];
            grad_h.as_mut_slice()[idx] = dw * z.as_slice()[idx];
        }
        d_h.push(grad_h);
    }
    Ok((cost, want_grad.then_some((d_z, d_h))))
}
