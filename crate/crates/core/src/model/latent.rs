use crate::error::Result;
use crate::numerics::{DenseMatrix, Rng};

/// `Z = μ + ε ⊙ exp(log σ)` with fresh standard-normal `ε` from `rng`, or
/// `ε = 0` (the posterior mean) when `rng` is `None`. Returns `(ε, Z)`.
pub fn reparameterize(
    z_mean: &DenseMatrix,
    z_log_std: &DenseMatrix,
    rng: Option<&mut Rng>,
) -> Result<(DenseMatrix, DenseMatrix)> {
    z_mean.check_same("reparameterize", z_log_std)?;
    let (rows, cols) = z_mean.shape();
    let epsilon = match rng {
        Some(rng) => DenseMatrix::from_fn(rows, cols, |_, _| rng.normal()),
        None => DenseMatrix::zeros(rows, cols),
    };
    let z = combine(z_mean, z_log_std, &epsilon)?;
    Ok((epsilon, z))
}

pub(crate) fn combine(
    z_mean: &DenseMatrix,
    z_log_std: &DenseMatrix,
    epsilon: &DenseMatrix,
) -> Result<DenseMatrix> {
    z_mean.check_same("reparameterize", z_log_std)?;
    z_mean.check_same("reparameterize", epsilon)?;
    let data = z_mean
        .as_slice()
        .iter()
        .zip(z_log_std.as_slice())
        .zip(epsilon.as_slice())
        .map(|((&mu, &ls), &eps)| mu + eps * ls.exp())
        .collect();
    DenseMatrix::from_vec(z_mean.rows(), z_mean.cols(), data)
}

/// KL divergence from `N(μ, σ²)` to `N(0, 1)` summed over nodes and
/// dimensions: `−½ Σ (1 + 2 log σ − μ² − σ²)`.
pub fn kl_cost(z_mean: &DenseMatrix, z_log_std: &DenseMatrix) -> Result<f64> {
    z_mean.check_same("kl_cost", z_log_std)?;
    let sum: f64 = z_mean
        .as_slice()
        .iter()
        .zip(z_log_std.as_slice())
        .map(|(&mu, &ls)| 1.0 + 2.0 * ls - mu * mu - (2.0 * ls).exp())
        .sum();
    Ok(-0.5 * sum)
}

/// Chain `∂L/∂Z` through the sampling step and add `kl_weight` times the KL
/// gradient. Returns `(∂L/∂μ, ∂L/∂log σ)`.
pub(crate) fn latent_backward(
    d_z: &DenseMatrix,
    z_mean: &DenseMatrix,
    z_log_std: &DenseMatrix,
    epsilon: &DenseMatrix,
    kl_weight: f64,
) -> Result<(DenseMatrix, DenseMatrix)> {
    d_z.check_same("latent_backward", z_mean)?;
    let (rows, cols) = d_z.shape();
    let mut d_mean = DenseMatrix::zeros(rows, cols);
    let mut d_log_std = DenseMatrix::zeros(rows, cols);
    for idx in 0..rows * cols {
        let g = d_z.as_slice()[idx];
        let mu = z_mean.as_slice()[idx];
        let ls = z_log_std.as_slice()[idx];
        let eps = epsilon.as_slice()[idx];
        let sigma = ls.exp();
        d_mean.as_mut_slice()[idx] = g + kl_weight * mu;
        d_log_std.as_mut_slice()[idx] = g * eps * sigma + kl_weight * (sigma * sigma - 1.0);
    }
    Ok((d_mean, d_log_std))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_returns_mean() {
        let mu = DenseMatrix::from_fn(3, 2, |i, j| i as f64 - j as f64);
        let ls = DenseMatrix::from_fn(3, 2, |i, _| 0.3 * i as f64);
        let (eps, z) = reparameterize(&mu, &ls, None).unwrap();
        assert!(eps.as_slice().iter().all(|&e| e == 0.0));
        assert_eq!(z, mu);
    }

    #[test]
    fn unit_sigma_adds_noise() {
        let mu = DenseMatrix::from_fn(2, 2, |i, j| (i + 2 * j) as f64);
        let ls = DenseMatrix::zeros(2, 2);
        let eps = DenseMatrix::from_fn(2, 2, |i, j| 0.5 - (i * j) as f64);
        let z = combine(&mu, &ls, &eps).unwrap();
        for k in 0..4 {
            assert_eq!(z.as_slice()[k], mu.as_slice()[k] + eps.as_slice()[k]);
        }
    }

    #[test]
    fn sample_moments_match() {
        let n = 10_000;
        let mu = DenseMatrix::from_vec(1, 2, vec![1.5, -0.5]).unwrap();
        let ls = DenseMatrix::from_vec(1, 2, vec![0.4f64.ln(), 2.0f64.ln()]).unwrap();
        let sigma = [0.4, 2.0];
        let mut rng = Rng::new(21);
        let mut samples = vec![Vec::with_capacity(n); 2];
        for _ in 0..n {
            let (_, z) = reparameterize(&mu, &ls, Some(&mut rng)).unwrap();
            samples[0].push(z[(0, 0)]);
            samples[1].push(z[(0, 1)]);
        }
        for d in 0..2 {
            let mean = samples[d].iter().sum::<f64>() / n as f64;
            let var = samples[d].iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se_mean = sigma[d] / (n as f64).sqrt();
            // Standard error of the sample std for normal data: σ/√(2(n−1)).
            let se_std = sigma[d] / (2.0 * (n - 1) as f64).sqrt();
            assert!((mean - mu[(0, d)]).abs() < 3.0 * se_mean);
            assert!((var.sqrt() - sigma[d]).abs() < 3.0 * se_std);
        }
    }

    #[test]
    fn kl_values() {
        let zero = DenseMatrix::zeros(4, 3);
        assert_eq!(kl_cost(&zero, &zero).unwrap(), 0.0);
        let one = DenseMatrix::from_vec(1, 1, vec![1.0]).unwrap();
        let unit = DenseMatrix::zeros(1, 1);
        assert!((kl_cost(&one, &unit).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn kl_nonnegative() {
        let mut rng = Rng::new(9);
        for _ in 0..100 {
            let mu = DenseMatrix::from_fn(3, 4, |_, _| rng.normal() * 2.0);
            let ls = DenseMatrix::from_fn(3, 4, |_, _| rng.normal());
            assert!(kl_cost(&mu, &ls).unwrap() >= 0.0);
        }
    }
}
