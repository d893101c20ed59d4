//! Projection of a private next-token distribution onto the Rényi ball of
//! radius βα around the public distribution.
//!
//! The mixing weight is the largest λ ∈ [0, 1] with
//! D↔_α(λ·p + (1-λ)·p₀ || p₀) ≤ βα. The constraint is non-decreasing in λ
//! and zero at λ = 0, so the feasible set is an interval [0, λ*] and
//! bisection finds its right end without any tie-breaking.

use serde::{Deserialize, Serialize};

use crate::divergence::{divergence_sym_raw, ProbDist, RenyiOrder};
use crate::error::{Error, Result};

pub const DEFAULT_TOLERANCE: f64 = 1e-6;
pub const MAX_ITERATIONS: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionResult {
    pub lambda: f64,
    pub projected: ProbDist,
    pub achieved_divergence: f64,
}

pub fn project(
    p_private: &ProbDist,
    p_public: &ProbDist,
    alpha: RenyiOrder,
    beta: f64,
    tol: f64,
) -> Result<ProjectionResult> {
    if p_private.len() != p_public.len() {
        return Err(Error::DimensionMismatch {
            left: p_private.len(),
            right: p_public.len(),
        });
    }
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::param("beta", format!("{beta} must be finite and >= 0")));
    }
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::param("tol", format!("{tol} must be > 0")));
    }

    let radius = beta * alpha.value();
    let constraint = |lambda: f64| {
        let mixed = mixture(p_private, p_public, lambda);
        divergence_sym_raw(&mixed, p_public.probs(), alpha.value())
    };

    let full = constraint(1.0);
    if full <= radius {
        return Ok(finish(p_private, p_public, 1.0, full));
    }
    if constraint(tol.min(1.0)).is_infinite() {
        return Ok(finish(p_private, p_public, 0.0, 0.0));
    }

    // invariant: lo feasible, hi infeasible
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut lo_value = 0.0;
    for _ in 0..MAX_ITERATIONS {
        if hi - lo <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let value = constraint(mid);
        if value <= radius {
            lo = mid;
            lo_value = value;
        } else {
            hi = mid;
        }
    }
    Ok(finish(p_private, p_public, lo, lo_value))
}

fn mixture(p: &ProbDist, q: &ProbDist, lambda: f64) -> Vec<f64> {
    p.probs()
        .iter()
        .zip(q.probs())
        .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
        .collect()
}

fn finish(p: &ProbDist, q: &ProbDist, lambda: f64, divergence: f64) -> ProjectionResult {
    ProjectionResult {
        lambda,
        projected: ProbDist::from_raw(mixture(p, q, lambda)),
        achieved_divergence: divergence,
    }
}
