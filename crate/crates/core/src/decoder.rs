//! Per-query private decoding.
//!
//! The adaptive path screens the query, and only when screening passes
//! projects every member onto the βα ball around the public distribution,
//! averages, samples, and charges the data-dependent loss. The baseline
//! path charges a fixed ε_G/T per query and picks β so that the
//! (subsampled) worst-case bound meets that budget.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::accountant::{
    anchored_mean, data_dependent_loss, data_independent_bound, select_beta, subsampled_loss,
    PrivacyLedger,
};
use crate::divergence::{ProbDist, RenyiOrder};
use crate::error::{Error, Result};
use crate::projection::{project, ProjectionResult, DEFAULT_TOLERANCE};
use crate::screening::{screen, ScreeningConfig};

/// Tolerance, in ε, of the baseline β search.
pub const BETA_SEARCH_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodingMode {
    Adaptive,
    Baseline,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub eps_budget: f64,
    pub query_budget: u64,
    pub subsample_q: f64,
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_budget > 0.0 && self.eps_budget.is_finite()) {
            return Err(Error::param("eps_G", format!("{} must be > 0", self.eps_budget)));
        }
        if self.query_budget == 0 {
            return Err(Error::param("query_budget", "must be >= 1"));
        }
        if !(self.subsample_q > 0.0 && self.subsample_q <= 1.0) {
            return Err(Error::param("q", format!("{} not in (0, 1]", self.subsample_q)));
        }
        Ok(())
    }

    pub fn per_query_budget(&self) -> f64 {
        self.eps_budget / self.query_budget as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodingConfig {
    pub alpha: RenyiOrder,
    pub beta: f64,
    pub ensemble_size: usize,
    pub screening: ScreeningConfig,
    pub delta: f64,
    pub mode: DecodingMode,
    pub baseline: Option<BaselineConfig>,
    pub seed: u64,
}

impl DecodingConfig {
    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::param("beta", format!("{} must be >= 0", self.beta)));
        }
        if self.ensemble_size == 0 {
            return Err(Error::param("N", "must be >= 1"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::param("delta", format!("{} not in (0, 1)", self.delta)));
        }
        if self.screening.alpha != self.alpha {
            return Err(Error::param("alpha", "screening order differs from decoding order"));
        }
        self.screening.validate(vocab_size)?;
        match (self.mode, &self.baseline) {
            (DecodingMode::Baseline, None) => {
                return Err(Error::param("mode", "baseline mode needs eps_G, query_budget and q"))
            }
            (DecodingMode::Baseline, Some(b)) => {
                b.validate()?;
                if b.subsample_q < 1.0 && self.alpha.as_integer().is_none() {
                    return Err(Error::param(
                        "alpha",
                        "subsampling amplification needs an integer order",
                    ));
                }
            }
            (DecodingMode::Adaptive, _) => {}
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub query_index: u64,
    pub alpha: RenyiOrder,
    pub token: usize,
    pub screened_out: bool,
    pub eps_screen: f64,
    pub eps_decode: f64,
    /// One per ensemble member; 0 for members that did not take part.
    pub lambdas: Vec<f64>,
    /// Noisy screening divergence, adaptive path only.
    pub noisy_divergence: Option<f64>,
    /// β used for projection (the configured one, or the one selected by
    /// the baseline rule).
    pub beta_used: f64,
    pub output_dist: ProbDist,
    pub output_dist_digest: String,
}

#[derive(Clone, Copy)]
enum Stream {
    Screen = 1,
    Sample = 2,
    Subsample = 3,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for one random stream of one query; queries can be replayed in
/// isolation.
fn query_seed(session_seed: u64, query_index: u64, stream: Stream) -> u64 {
    splitmix64(splitmix64(splitmix64(session_seed) ^ query_index) ^ stream as u64)
}

fn query_rng(session_seed: u64, query_index: u64, stream: Stream) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(query_seed(session_seed, query_index, stream))
}

/// Inverse-CDF draw with a single uniform variate.
pub fn sample_token<R: Rng + ?Sized>(dist: &ProbDist, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut cumulative = 0.0;
    let mut last_positive = 0;
    for (i, &p) in dist.probs().iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
        }
        cumulative += p;
        if u < cumulative {
            return i;
        }
    }
    // rounding left the total just below u
    last_positive
}

/// First 16 hex digits of the SHA-256 of the little-endian f64 encoding.
pub fn distribution_digest(dist: &ProbDist) -> String {
    let mut hasher = Sha256::new();
    for p in dist.probs() {
        hasher.update(p.to_le_bytes());
    }
    hex::encode(&hasher.finalize()[..8])
}

/// Projects each member onto the βα ball around `p_public`.
pub fn project_ensemble(
    private_dists: &[ProbDist],
    p_public: &ProbDist,
    alpha: RenyiOrder,
    beta: f64,
) -> Result<Vec<ProjectionResult>> {
    private_dists
        .iter()
        .map(|p| project(p, p_public, alpha, beta, DEFAULT_TOLERANCE))
        .collect()
}

/// Average of projected members, anchored at the public distribution.
pub fn mix_projected(projections: &[ProjectionResult], p_public: &ProbDist) -> ProbDist {
    ProbDist::from_raw(anchored_mean(
        projections.iter().map(|r| r.projected.probs()),
        p_public.probs(),
    ))
}

fn check_members(private_dists: &[ProbDist], p_public: &ProbDist, expected: usize) -> Result<()> {
    if private_dists.len() != expected {
        return Err(Error::param(
            "N",
            format!("config says {expected} members, got {}", private_dists.len()),
        ));
    }
    if let Some(bad) = private_dists.iter().find(|p| p.len() != p_public.len()) {
        return Err(Error::DimensionMismatch {
            left: bad.len(),
            right: p_public.len(),
        });
    }
    Ok(())
}

pub fn decode_adaptive(
    private_dists: &[ProbDist],
    p_public: &ProbDist,
    cfg: &DecodingConfig,
    ledger: &mut PrivacyLedger,
    query_index: u64,
) -> Result<QueryOutcome> {
    check_members(private_dists, p_public, cfg.ensemble_size)?;
    let verdict = screen(
        private_dists,
        p_public,
        &cfg.screening,
        query_seed(cfg.seed, query_index, Stream::Screen),
    )?;
    let mut sampler = query_rng(cfg.seed, query_index, Stream::Sample);

    let (output_dist, lambdas, eps_decode) = if verdict.passed {
        let projections = project_ensemble(private_dists, p_public, cfg.alpha, cfg.beta)?;
        let projected: Vec<ProbDist> = projections.iter().map(|r| r.projected.clone()).collect();
        let eps_decode = data_dependent_loss(&projected, p_public, cfg.alpha)?;
        let mixed = mix_projected(&projections, p_public);
        let lambdas = projections.iter().map(|r| r.lambda).collect();
        (mixed, lambdas, eps_decode)
    } else {
        (p_public.clone(), vec![0.0; private_dists.len()], 0.0)
    };

    let token = sample_token(&output_dist, &mut sampler);
    let outcome = QueryOutcome {
        query_index,
        alpha: cfg.alpha,
        token,
        screened_out: !verdict.passed,
        eps_screen: verdict.eps_cost,
        eps_decode,
        lambdas,
        noisy_divergence: Some(verdict.noisy_divergence),
        beta_used: cfg.beta,
        output_dist_digest: distribution_digest(&output_dist),
        output_dist,
    };
    ledger.record(&outcome)?;
    Ok(outcome)
}

/// Largest β whose worst-case loss over a Poisson subsample of rate `q`
/// from `members` models stays within `eps_target`.
///
/// For q = 1 this is the closed-form rule of [`select_beta`]; otherwise a
/// bisection on β against [`subsampled_loss`], which needs an integer order.
pub fn baseline_beta(alpha: RenyiOrder, eps_target: f64, q: f64, members: usize) -> Result<f64> {
    if members == 0 {
        return Err(Error::EmptyEnsemble);
    }
    if q == 1.0 {
        return select_beta(eps_target, 1, alpha, members);
    }
    let order = alpha
        .as_integer()
        .ok_or_else(|| Error::param("alpha", "subsampling amplification needs an integer order"))?;
    let loss = |beta: f64| -> Result<f64> {
        subsampled_loss(
            |k| {
                let k_order = RenyiOrder::new(k as f64).expect("k >= 2");
                data_independent_bound(k_order, beta, members).unwrap_or(f64::INFINITY)
            },
            q,
            order,
        )
    };

    // amplification never hurts, so the unamplified choice is feasible
    let mut lo = select_beta(eps_target, 1, alpha, members)?;
    let mut hi = lo.max(f64::MIN_POSITIVE) * 2.0;
    let mut grow = 0;
    while loss(hi)? <= eps_target {
        lo = hi;
        hi *= 2.0;
        grow += 1;
        if grow > 200 {
            return Ok(lo);
        }
    }
    for _ in 0..200 {
        let lo_loss = loss(lo)?;
        if eps_target - lo_loss <= BETA_SEARCH_TOLERANCE || hi - lo <= f64::EPSILON * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if loss(mid)? <= eps_target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// One query of the fixed-budget baseline. `fetch(i)` yields member i's
/// distribution and is only called for members in the subsample.
pub fn decode_baseline<F>(
    mut fetch: F,
    p_public: &ProbDist,
    cfg: &DecodingConfig,
    ledger: &mut PrivacyLedger,
    query_index: u64,
) -> Result<QueryOutcome>
where
    F: FnMut(usize) -> Result<ProbDist>,
{
    let baseline = cfg
        .baseline
        .as_ref()
        .ok_or_else(|| Error::param("mode", "baseline mode needs a baseline config"))?;
    baseline.validate()?;
    let eps_target = baseline.per_query_budget();

    let mut subsampler = query_rng(cfg.seed, query_index, Stream::Subsample);
    let chosen: Vec<usize> = (0..cfg.ensemble_size)
        .filter(|_| subsampler.random::<f64>() < baseline.subsample_q)
        .collect();

    let mut lambdas = vec![0.0; cfg.ensemble_size];
    let (output_dist, beta_used) = if chosen.is_empty() {
        (p_public.clone(), 0.0)
    } else {
        let beta = baseline_beta(cfg.alpha, eps_target, baseline.subsample_q, chosen.len())?;
        let mut projections = Vec::with_capacity(chosen.len());
        for &i in &chosen {
            let member = fetch(i)?;
            if member.len() != p_public.len() {
                return Err(Error::DimensionMismatch {
                    left: member.len(),
                    right: p_public.len(),
                });
            }
            let r = project(&member, p_public, cfg.alpha, beta, DEFAULT_TOLERANCE)?;
            lambdas[i] = r.lambda;
            projections.push(r);
        }
        (mix_projected(&projections, p_public), beta)
    };

    let mut sampler = query_rng(cfg.seed, query_index, Stream::Sample);
    let token = sample_token(&output_dist, &mut sampler);
    let outcome = QueryOutcome {
        query_index,
        alpha: cfg.alpha,
        token,
        screened_out: false,
        eps_screen: 0.0,
        eps_decode: eps_target,
        lambdas,
        noisy_divergence: None,
        beta_used,
        output_dist_digest: distribution_digest(&output_dist),
        output_dist,
    };
    ledger.record(&outcome)?;
    Ok(outcome)
}
