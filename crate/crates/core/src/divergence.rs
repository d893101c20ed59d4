//! Rényi divergence on finite probability vectors.
//!
//! Everything is computed in nats, in the log domain:
//!
//! D_α(P || Q) = 1/(α-1) · log Σ_x p(x)^α q(x)^(1-α)
//!
//! Terms with p(x) = 0 contribute nothing. A coordinate with p(x) > 0 and
//! q(x) = 0 makes the divergence `f64::INFINITY`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum allowed deviation of `Σ p(x)` from 1.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Default finite stand-in for an infinite divergence.
pub const DEFAULT_DIVERGENCE_CAP: f64 = 1e6;

/// A probability vector over a fixed vocabulary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbDist {
    probs: Vec<f64>,
}

impl ProbDist {
    /// Validates non-negativity and normalization; inputs are never renormalized.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("empty vector".into()));
        }
        if let Some((i, p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !p.is_finite() || **p < 0.0)
        {
            return Err(Error::InvalidDistribution(format!(
                "entry {i} is {p}"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidDistribution(format!(
                "entries sum to {sum}"
            )));
        }
        Ok(Self { probs })
    }

    /// For vectors built internally from valid distributions by convex
    /// combination, which stay normalized up to rounding.
    pub(crate) fn from_raw(probs: Vec<f64>) -> Self {
        debug_assert!(Self::new(probs.clone()).is_ok(), "{probs:?}");
        Self { probs }
    }

    pub fn uniform(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::InvalidDistribution("empty vector".into()));
        }
        Ok(Self {
            probs: vec![1.0 / size as f64; size],
        })
    }

    pub fn point_mass(size: usize, index: usize) -> Result<Self> {
        if index >= size {
            return Err(Error::InvalidDistribution(format!(
                "index {index} outside vocabulary of size {size}"
            )));
        }
        let mut probs = vec![0.0; size];
        probs[index] = 1.0;
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn prob(&self, index: usize) -> f64 {
        self.probs[index]
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.probs
    }

    /// `weight · self + (1 - weight) · other`.
    ///
    /// `weight = 1` returns `self` and `weight = 0` returns `other`, bit for bit.
    pub fn mix(&self, other: &ProbDist, weight: f64) -> Result<ProbDist> {
        check_same_len(self, other)?;
        if !(0.0..=1.0).contains(&weight) {
            return Err(Error::param("weight", format!("{weight} not in [0, 1]")));
        }
        let probs = self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(p, q)| weight * p + (1.0 - weight) * q)
            .collect();
        Ok(Self::from_raw(probs))
    }
}

impl TryFrom<Vec<f64>> for ProbDist {
    type Error = Error;

    fn try_from(probs: Vec<f64>) -> Result<Self> {
        Self::new(probs)
    }
}

impl From<ProbDist> for Vec<f64> {
    fn from(dist: ProbDist) -> Self {
        dist.probs
    }
}

/// A Rényi order α, finite and strictly greater than one.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct RenyiOrder(f64);

impl RenyiOrder {
    pub fn new(alpha: f64) -> Result<Self> {
        if alpha.is_finite() && alpha > 1.0 {
            Ok(Self(alpha))
        } else {
            Err(Error::InvalidOrder(alpha))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// The order as an integer, when it is one.
    pub fn as_integer(self) -> Option<u32> {
        (self.0.fract() == 0.0 && self.0 <= u32::MAX as f64).then_some(self.0 as u32)
    }
}

impl TryFrom<f64> for RenyiOrder {
    type Error = Error;

    fn try_from(alpha: f64) -> Result<Self> {
        Self::new(alpha)
    }
}

impl From<RenyiOrder> for f64 {
    fn from(order: RenyiOrder) -> Self {
        order.0
    }
}

fn check_same_len(p: &ProbDist, q: &ProbDist) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    Ok(())
}

/// D_α(p || q) in nats; `f64::INFINITY` when p is not absolutely continuous
/// with respect to q.
pub fn renyi_divergence(p: &ProbDist, q: &ProbDist, alpha: RenyiOrder) -> Result<f64> {
    check_same_len(p, q)?;
    Ok(divergence_raw(p.probs(), q.probs(), alpha.value()))
}

/// max(D_α(p || q), D_α(q || p)).
pub fn renyi_divergence_sym(p: &ProbDist, q: &ProbDist, alpha: RenyiOrder) -> Result<f64> {
    check_same_len(p, q)?;
    Ok(divergence_sym_raw(p.probs(), q.probs(), alpha.value()))
}

pub(crate) fn divergence_sym_raw(p: &[f64], q: &[f64], alpha: f64) -> f64 {
    let forward = divergence_raw(p, q, alpha);
    if forward.is_infinite() {
        return forward;
    }
    forward.max(divergence_raw(q, p, alpha))
}

/// Kernel over raw slices of equal length. Callers guarantee both are
/// (sub-)normalized non-negative vectors.
pub(crate) fn divergence_raw(p: &[f64], q: &[f64], alpha: f64) -> f64 {
    debug_assert_eq!(p.len(), q.len());
    if p == q {
        return 0.0;
    }
    let exponent = alpha - 1.0;
    // log of p^α q^(1-α) = log p + (α-1)(log p - log q)
    let mut log_terms = Vec::with_capacity(p.len());
    let mut max_term = f64::NEG_INFINITY;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi <= 0.0 {
            continue;
        }
        if qi <= 0.0 {
            return f64::INFINITY;
        }
        let log_p = pi.ln();
        let term = log_p + exponent * (log_p - qi.ln());
        max_term = max_term.max(term);
        log_terms.push(term);
    }
    if log_terms.is_empty() {
        return 0.0;
    }
    let scaled: f64 = log_terms.iter().map(|t| (t - max_term).exp()).sum();
    let value = (max_term + scaled.ln()) / exponent;
    value.max(0.0)
}

/// A divergence clamped to a finite sentinel, with a record of whether the
/// clamp fired.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CappedDivergence {
    pub value: f64,
    pub clamped: bool,
}

pub fn cap_divergence(divergence: f64, cap: f64) -> CappedDivergence {
    if divergence > cap {
        CappedDivergence {
            value: cap,
            clamped: true,
        }
    } else {
        CappedDivergence {
            value: divergence,
            clamped: false,
        }
    }
}
