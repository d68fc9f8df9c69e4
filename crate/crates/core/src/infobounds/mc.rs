use rand::Rng;
use rand_distr::StandardNormal;

use super::{DiscreteDist, InfoError};
use crate::datagen::{SynthParams, FEATURE_DIM};
use crate::seeding;

pub trait Density {
    fn dim(&self) -> usize;
    fn log_density(&self, x: &[f64]) -> f64;
}

pub trait Sampler: Density {
    fn sample_into(&self, rng: &mut seeding::Rng, out: &mut [f64]);
}

/// Mixture of isotropic Gaussians `Σ_k w_k N(μ_k, v_k I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    weights: DiscreteDist,
    means: Vec<Vec<f64>>,
    variances: Vec<f64>,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<f64>) -> Result<Self, InfoError> {
        let weights = DiscreteDist::new(weights)?;
        let k = weights.len();
        if means.len() != k || variances.len() != k {
            return Err(InfoError::Invalid("one mean and variance per component".into()));
        }
        let d = means[0].len();
        if d == 0 || means.iter().any(|m| m.len() != d) {
            return Err(InfoError::Invalid("component means must share a positive dimension".into()));
        }
        if variances.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(InfoError::Invalid("variances must be positive".into()));
        }
        Ok(GaussianMixture {
            weights,
            means,
            variances,
        })
    }
}

impl Density for GaussianMixture {
    fn dim(&self) -> usize {
        self.means[0].len()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let d = x.len() as f64;
        let logs: Vec<f64> = self
            .weights
            .probs()
            .iter()
            .zip(&self.means)
            .zip(&self.variances)
            .map(|((w, mu), v)| {
                let sq: f64 = x.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum();
                w.ln() - 0.5 * sq / v - 0.5 * d * (2.0 * std::f64::consts::PI * v).ln()
            })
            .collect();
        let mx = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        mx + logs.iter().map(|l| (l - mx).exp()).sum::<f64>().ln()
    }
}

impl Sampler for GaussianMixture {
    fn sample_into(&self, rng: &mut seeding::Rng, out: &mut [f64]) {
        let k = self.weights.sample(rng);
        let sd = self.variances[k].sqrt();
        for (o, mu) in out.iter_mut().zip(&self.means[k]) {
            let z: f64 = rng.sample(StandardNormal);
            *o = mu + sd * z;
        }
    }
}

impl Density for SynthParams {
    fn dim(&self) -> usize {
        FEATURE_DIM
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        SynthParams::log_density(self, x)
    }
}

impl Sampler for SynthParams {
    fn sample_into(&self, rng: &mut seeding::Rng, out: &mut [f64]) {
        self.sample(rng, out);
    }
}

/// Monte-Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub samples: usize,
}

impl McEstimate {
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0);
        McEstimate {
            mean,
            stderr: (var / n).sqrt(),
            samples: values.len(),
        }
    }
}

/// `D(P‖Q) ≈ mean of ln p(x) − ln q(x)` over draws from `P`.
pub fn mc_kl<P: Sampler, Q: Density>(p: &P, q: &Q, samples: usize, seed: u64) -> Result<McEstimate, InfoError> {
    if samples < 2 {
        return Err(InfoError::Invalid("need at least two samples".into()));
    }
    if p.dim() != q.dim() {
        return Err(InfoError::Invalid(format!("dimensions differ: {} vs {}", p.dim(), q.dim())));
    }
    let mut rng = seeding::rng(seed);
    let mut x = vec![0.0; p.dim()];
    let values: Vec<f64> = (0..samples)
        .map(|_| {
            p.sample_into(&mut rng, &mut x);
            p.log_density(&x) - q.log_density(&x)
        })
        .collect();
    Ok(McEstimate::from_values(&values))
}

/// `D(μ_l‖μ_u)` between the feature marginals of two generator settings.
pub fn mc_kl_gaussian_mixture(
    params_l: &SynthParams,
    params_u: &SynthParams,
    samples: usize,
    seed: u64,
) -> Result<McEstimate, InfoError> {
    for p in [params_l, params_u] {
        p.validate().map_err(|e| InfoError::Invalid(e.to_string()))?;
    }
    mc_kl(params_l, params_u, samples, seed)
}
