//! Noisy screening: a Gaussian-mechanism test deciding whether a query is
//! answered by the public model alone.
//!
//! A small-λ mixture of the ensemble with the public distribution is
//! truncated to the public model's top-k tokens, perturbed with N(0, σ²)
//! noise on those coordinates, and compared to the truncated public
//! distribution. The L2 sensitivity of the mixture to removing one member
//! is λ√2/N, so each screening costs (λ/(Nσ))²·α of RDP at order α
//! regardless of the outcome.

use std::cmp::Ordering;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::divergence::{divergence_raw, divergence_sym_raw, ProbDist, RenyiOrder};
use crate::error::{Error, Result};

/// Floor applied to coordinates pushed below zero by the noise.
pub const NEGATIVE_CLAMP: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScreeningConfig {
    pub lambda_screen: f64,
    pub sigma: f64,
    /// `-inf` always fails, `inf` always passes.
    #[serde(with = "crate::serde_ext::extended_f64")]
    pub threshold: f64,
    pub top_k: usize,
    pub alpha: RenyiOrder,
    /// Compare with max(D(a||b), D(b||a)) instead of D(a||b).
    #[serde(default)]
    pub symmetric: bool,
    /// Test hook: `false` skips the Gaussian perturbation. The reported
    /// privacy cost is unchanged.
    #[serde(default = "default_true")]
    pub add_noise: bool,
}

fn default_true() -> bool {
    true
}

impl ScreeningConfig {
    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        if !(self.lambda_screen > 0.0 && self.lambda_screen <= 1.0) {
            return Err(Error::param(
                "lambda",
                format!("{} not in (0, 1]", self.lambda_screen),
            ));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::param("sigma", format!("{} must be > 0", self.sigma)));
        }
        if self.threshold.is_nan() {
            return Err(Error::param("T", "threshold is NaN"));
        }
        if self.top_k < 2 || self.top_k > vocab_size {
            return Err(Error::param(
                "top_k",
                format!("{} not in [2, {vocab_size}]", self.top_k),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScreeningVerdict {
    pub passed: bool,
    /// May be `f64::INFINITY`.
    pub noisy_divergence: f64,
    pub eps_cost: f64,
    pub rng_seed_used: u64,
}

/// RDP cost of one screening at order α: (λ/(nσ))²·α.
pub fn screening_eps(lambda_screen: f64, n: usize, sigma: f64, alpha: RenyiOrder) -> Result<f64> {
    if n == 0 {
        return Err(Error::EmptyEnsemble);
    }
    if !(sigma > 0.0) {
        return Err(Error::param("sigma", format!("{sigma} must be > 0")));
    }
    let ratio = lambda_screen / (n as f64 * sigma);
    Ok(ratio * ratio * alpha.value())
}

/// (1/N)·Σ_i [λ·p_i + (1-λ)·p₀], evaluated as p₀ + λ·mean_i(p_i - p₀) so
/// that an ensemble equal to the public model reproduces it exactly.
pub fn screening_mixture(
    private_dists: &[ProbDist],
    p_public: &ProbDist,
    lambda_screen: f64,
) -> Result<Vec<f64>> {
    if private_dists.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let n = private_dists.len() as f64;
    let vocab = p_public.len();
    let mut deviation = vec![0.0; vocab];
    for member in private_dists {
        if member.len() != vocab {
            return Err(Error::DimensionMismatch {
                left: member.len(),
                right: vocab,
            });
        }
        for (acc, (p, q)) in deviation.iter_mut().zip(member.probs().iter().zip(p_public.probs())) {
            *acc += p - q;
        }
    }
    Ok(p_public
        .probs()
        .iter()
        .zip(&deviation)
        .map(|(q, d)| q + lambda_screen * (d / n))
        .collect())
}

/// Indices of the k largest entries, largest first; equal values keep the
/// lower index first.
pub fn top_k_indices(probs: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| {
        probs[b]
            .partial_cmp(&probs[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order.truncate(k);
    order
}

pub fn screen(
    private_dists: &[ProbDist],
    p_public: &ProbDist,
    cfg: &ScreeningConfig,
    seed: u64,
) -> Result<ScreeningVerdict> {
    cfg.validate(p_public.len())?;
    let eps_cost = screening_eps(cfg.lambda_screen, private_dists.len(), cfg.sigma, cfg.alpha)?;
    let mixture = screening_mixture(private_dists, p_public, cfg.lambda_screen)?;
    let keep = top_k_indices(p_public.probs(), cfg.top_k);

    let mut noisy: Vec<f64> = keep.iter().map(|&i| mixture[i]).collect();
    let mut public: Vec<f64> = keep.iter().map(|&i| p_public.prob(i)).collect();

    if cfg.add_noise {
        let normal = Normal::new(0.0, cfg.sigma)
            .map_err(|e| Error::param("sigma", e.to_string()))?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        for value in noisy.iter_mut() {
            *value += normal.sample(&mut rng);
        }
    }
    for value in noisy.iter_mut() {
        if *value < 0.0 {
            *value = NEGATIVE_CLAMP;
        }
    }

    let noisy_sum: f64 = noisy.iter().sum();
    let public_sum: f64 = public.iter().sum();
    if !(noisy_sum > 0.0 && public_sum > 0.0) {
        return Ok(ScreeningVerdict {
            passed: false,
            noisy_divergence: f64::INFINITY,
            eps_cost,
            rng_seed_used: seed,
        });
    }
    noisy.iter_mut().for_each(|v| *v /= noisy_sum);
    public.iter_mut().for_each(|v| *v /= public_sum);

    let divergence = if cfg.symmetric {
        divergence_sym_raw(&noisy, &public, cfg.alpha.value())
    } else {
        divergence_raw(&noisy, &public, cfg.alpha.value())
    };
    Ok(ScreeningVerdict {
        passed: divergence <= cfg.threshold,
        noisy_divergence: divergence,
        eps_cost,
        rng_seed_used: seed,
    })
}
