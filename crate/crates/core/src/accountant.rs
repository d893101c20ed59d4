//! Privacy-loss arithmetic at a fixed Rényi order.
//!
//! Per-query losses come in two flavours: the data-dependent loss of one
//! decoding step (largest symmetric divergence between the full-ensemble
//! output and any leave-one-out output) and the closed-form worst case for
//! an ensemble projected to radius βα. Losses compose additively in RDP and
//! are converted to (ε, δ)-DP once, at the end of a session.

use serde::{Deserialize, Serialize};

use crate::decoder::QueryOutcome;
use crate::divergence::{divergence_sym_raw, ProbDist, RenyiOrder};
use crate::error::{Error, Result};

/// Correctly rounded floating-point summation (Shewchuk's partials, the
/// algorithm behind Python's `math.fsum`).
///
/// The result does not depend on insertion order, and k copies of x sum to
/// exactly `k as f64 * x`.
#[derive(Clone, Debug, Default)]
pub struct ExactSum {
    partials: Vec<f64>,
    non_finite: f64,
}

impl ExactSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, value: f64) {
        if !value.is_finite() {
            self.non_finite += value;
            return;
        }
        let mut x = value;
        let mut kept = 0;
        for j in 0..self.partials.len() {
            let mut y = self.partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                self.partials[kept] = lo;
                kept += 1;
            }
            x = hi;
        }
        self.partials.truncate(kept);
        self.partials.push(x);
    }

    pub fn value(&self) -> f64 {
        if self.non_finite != 0.0 || self.non_finite.is_nan() {
            return self.non_finite;
        }
        let mut n = self.partials.len();
        if n == 0 {
            return 0.0;
        }
        n -= 1;
        let mut hi = self.partials[n];
        let mut lo = 0.0;
        while n > 0 {
            let x = hi;
            n -= 1;
            let y = self.partials[n];
            hi = x + y;
            let y_rounded = hi - x;
            lo = y - y_rounded;
            if lo != 0.0 {
                break;
            }
        }
        // half-way case: the remaining partials decide the rounding direction
        if n > 0 && ((lo < 0.0 && self.partials[n - 1] < 0.0) || (lo > 0.0 && self.partials[n - 1] > 0.0)) {
            let y = lo * 2.0;
            let x = hi + y;
            if y == x - hi {
                hi = x;
            }
        }
        hi
    }
}

impl FromIterator<f64> for ExactSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut sum = ExactSum::new();
        iter.into_iter().for_each(|v| sum.add(v));
        sum
    }
}

/// Mean of `members`, written as `anchor + mean(member - anchor)` so that
/// identical members reproduce the anchor bit for bit.
pub(crate) fn anchored_mean<'a, I>(members: I, anchor: &[f64]) -> Vec<f64>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut deviation = vec![0.0; anchor.len()];
    let mut count = 0usize;
    for member in members {
        count += 1;
        for (acc, (p, a)) in deviation.iter_mut().zip(member.iter().zip(anchor)) {
            *acc += p - a;
        }
    }
    let count = count as f64;
    anchor
        .iter()
        .zip(&deviation)
        .map(|(a, d)| a + d / count)
        .collect()
}

/// max over i of D↔_α(p || p₋ᵢ), where p averages all projected members and
/// p₋ᵢ averages all but member i. A single-member ensemble is compared with
/// the public distribution, which is what answers once it is removed.
pub fn data_dependent_loss(
    projected: &[ProbDist],
    p_public: &ProbDist,
    alpha: RenyiOrder,
) -> Result<f64> {
    let first = projected.first().ok_or(Error::EmptyEnsemble)?;
    let vocab = p_public.len();
    if let Some(bad) = projected.iter().find(|p| p.len() != vocab) {
        return Err(Error::DimensionMismatch {
            left: bad.len(),
            right: vocab,
        });
    }
    if projected.len() == 1 {
        return Ok(divergence_sym_raw(
            first.probs(),
            p_public.probs(),
            alpha.value(),
        ));
    }

    // deviations from the first member, so identical members give exact zeros
    let anchor = first.probs();
    let mut total = vec![0.0; vocab];
    for member in projected {
        for (acc, (p, a)) in total.iter_mut().zip(member.probs().iter().zip(anchor)) {
            *acc += p - a;
        }
    }
    let n = projected.len() as f64;
    let full: Vec<f64> = anchor.iter().zip(&total).map(|(a, d)| a + d / n).collect();
    let mut leave_one_out = vec![0.0; vocab];
    let mut worst = 0.0f64;
    for member in projected {
        for (k, slot) in leave_one_out.iter_mut().enumerate() {
            let own = member.probs()[k] - anchor[k];
            *slot = anchor[k] + (total[k] - own) / (n - 1.0);
        }
        let loss = divergence_sym_raw(&full, &leave_one_out, alpha.value());
        worst = worst.max(loss);
    }
    Ok(worst)
}

/// Worst-case per-query RDP of an ensemble of `n` members projected to
/// radius βα: log((n-1 + exp(4βα(α-1)))/n)/(α-1), and βα for n = 1.
pub fn data_independent_bound(alpha: RenyiOrder, beta: f64, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::EmptyEnsemble);
    }
    if !(beta >= 0.0) {
        return Err(Error::param("beta", format!("{beta} must be >= 0")));
    }
    let a = alpha.value();
    if n == 1 {
        return Ok(beta * a);
    }
    let exponent = 4.0 * beta * a * (a - 1.0);
    let n = n as f64;
    let log_numerator = log_add_exp((n - 1.0).ln(), exponent);
    Ok(((log_numerator - n.ln()) / (a - 1.0)).max(0.0))
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

fn log_binomial(n: u32, k: u32) -> f64 {
    let k = k.min(n - k);
    (1..=k)
        .map(|j| ((n - k + j) as f64 / j as f64).ln())
        .sum()
}

/// RDP at integer order α of a mechanism run on a Poisson subsample with
/// rate q, given the base mechanism's RDP curve `eps_fn(k)` for k = 2..=α.
///
/// q = 1 returns `eps_fn(α)` and q = 0 returns 0 without evaluating the sum.
pub fn subsampled_loss<F>(eps_fn: F, q: f64, alpha: u32) -> Result<f64>
where
    F: Fn(u32) -> f64,
{
    if alpha < 2 {
        return Err(Error::param("alpha", format!("integer order {alpha} < 2")));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::param("q", format!("{q} not in [0, 1]")));
    }
    if q == 1.0 {
        return Ok(eps_fn(alpha));
    }
    if q == 0.0 {
        return Ok(0.0);
    }
    let a = alpha as f64;
    let log_q = q.ln();
    let log_keep = (-q).ln_1p();
    let mut terms = Vec::with_capacity(alpha as usize);
    terms.push((a - 1.0) * log_keep + ((a - 1.0) * q).ln_1p());
    for k in 2..=alpha {
        let eps = eps_fn(k);
        if eps.is_nan() {
            return Err(Error::param("eps_fn", format!("NaN at order {k}")));
        }
        if eps == f64::INFINITY {
            return Ok(f64::INFINITY);
        }
        let kf = k as f64;
        terms.push(
            log_binomial(alpha, k) + (a - kf) * log_keep + kf * log_q + (kf - 1.0) * eps,
        );
    }
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
    Ok(((max + sum.ln()) / (a - 1.0)).max(0.0))
}

/// Converts (α, ε)-RDP to (ε', δ)-DP:
/// ε' = ε + log((α-1)/α) - (log δ + log α)/(α-1).
pub fn rdp_to_dp(eps_rdp: f64, alpha: RenyiOrder, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::param("delta", format!("{delta} not in (0, 1)")));
    }
    let a = alpha.value();
    Ok(eps_rdp + ((a - 1.0) / a).ln() - (delta.ln() + a.ln()) / (a - 1.0))
}

/// Largest β whose closed-form per-query bound fits ε_G / T:
/// log(n·e^((α-1)ε_G/T) + 1 - n) / (4(α-1)α) for n > 1, ε_G/(Tα) for n = 1.
pub fn select_beta(
    eps_budget: f64,
    query_budget: u64,
    alpha: RenyiOrder,
    n: usize,
) -> Result<f64> {
    if !(eps_budget > 0.0 && eps_budget.is_finite()) {
        return Err(Error::param("eps_budget", format!("{eps_budget} must be > 0")));
    }
    if query_budget == 0 {
        return Err(Error::param("query_budget", "must be >= 1"));
    }
    if n == 0 {
        return Err(Error::EmptyEnsemble);
    }
    let a = alpha.value();
    let per_query = eps_budget / query_budget as f64;
    if n == 1 {
        return Ok(per_query / a);
    }
    let nf = n as f64;
    let y = (a - 1.0) * per_query;
    // log(n·e^y + 1 - n) in a form that stays accurate for small and large y
    let log_arg = if y < 1.0 {
        (nf * y.exp_m1()).ln_1p()
    } else {
        y + nf.ln() + ((1.0 - nf) * (-y).exp() / nf).ln_1p()
    };
    assert!(log_arg > 0.0, "log argument of beta selection must exceed 1");
    Ok(log_arg / (4.0 * (a - 1.0) * a))
}

/// Upper bound on the increase in mean negative log-likelihood caused by
/// mixing with the public model:
/// max over (j, t) of (1 - λ_{j,t})·log(p_j(x_t) / p₀(x_t)).
///
/// `lambdas` and `private_likelihoods` are indexed `[member][query]`.
/// Returns 0 when there are no cells.
pub fn utility_gap_bound(
    lambdas: &[Vec<f64>],
    private_likelihoods: &[Vec<f64>],
    public_likelihoods: &[f64],
) -> Result<f64> {
    if lambdas.len() != private_likelihoods.len() {
        return Err(Error::DimensionMismatch {
            left: lambdas.len(),
            right: private_likelihoods.len(),
        });
    }
    if let Some((t, p)) = public_likelihoods
        .iter()
        .enumerate()
        .find(|(_, p)| !(**p > 0.0))
    {
        return Err(Error::param(
            "public_likelihoods",
            format!("entry {t} is {p}, must be > 0"),
        ));
    }
    let mut worst: Option<f64> = None;
    for (row_l, row_p) in lambdas.iter().zip(private_likelihoods) {
        for len in [row_l.len(), row_p.len()] {
            if len != public_likelihoods.len() {
                return Err(Error::DimensionMismatch {
                    left: len,
                    right: public_likelihoods.len(),
                });
            }
        }
        for ((lambda, p), p0) in row_l.iter().zip(row_p).zip(public_likelihoods) {
            if !(*p > 0.0) {
                return Err(Error::param(
                    "private_likelihoods",
                    format!("{p} must be > 0"),
                ));
            }
            let gap = (1.0 - lambda) * (p / p0).ln();
            worst = Some(worst.map_or(gap, |w: f64| w.max(gap)));
        }
    }
    Ok(worst.unwrap_or(0.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub query_index: u64,
    pub eps_screen: f64,
    pub eps_decode: f64,
    pub screened_out: bool,
}

impl LedgerEntry {
    /// RDP charged for this query.
    pub fn cost(&self) -> f64 {
        self.eps_screen + self.eps_decode
    }
}

/// Append-only record of per-query RDP at a single order.
#[derive(Clone, Debug)]
pub struct PrivacyLedger {
    alpha: RenyiOrder,
    delta: f64,
    entries: Vec<LedgerEntry>,
    total: ExactSum,
    screen_total: ExactSum,
    decode_total: ExactSum,
}

impl PrivacyLedger {
    pub fn new(alpha: RenyiOrder, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::param("delta", format!("{delta} not in (0, 1)")));
        }
        Ok(Self {
            alpha,
            delta,
            entries: Vec::new(),
            total: ExactSum::new(),
            screen_total: ExactSum::new(),
            decode_total: ExactSum::new(),
        })
    }

    pub fn alpha(&self) -> RenyiOrder {
        self.alpha
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn eps_rdp_total(&self) -> f64 {
        self.total.value()
    }

    pub fn eps_screen_total(&self) -> f64 {
        self.screen_total.value()
    }

    pub fn eps_decode_total(&self) -> f64 {
        self.decode_total.value()
    }

    pub fn eps_dp_total(&self) -> f64 {
        rdp_to_dp(self.eps_rdp_total(), self.alpha, self.delta)
            .expect("delta validated at construction")
    }

    pub fn record(&mut self, outcome: &QueryOutcome) -> Result<&LedgerEntry> {
        if outcome.alpha != self.alpha {
            return Err(Error::OrderMismatch {
                ledger: self.alpha.value(),
                outcome: outcome.alpha.value(),
            });
        }
        self.record_entry(LedgerEntry {
            query_index: outcome.query_index,
            eps_screen: outcome.eps_screen,
            eps_decode: outcome.eps_decode,
            screened_out: outcome.screened_out,
        })
    }

    pub fn record_entry(&mut self, entry: LedgerEntry) -> Result<&LedgerEntry> {
        for (field, value) in [("eps_screen", entry.eps_screen), ("eps_decode", entry.eps_decode)] {
            if !(value >= 0.0) {
                return Err(Error::param(field, format!("{value} must be >= 0")));
            }
        }
        if entry.screened_out && entry.eps_decode != 0.0 {
            return Err(Error::param(
                "eps_decode",
                "screened-out queries carry no decoding cost",
            ));
        }
        self.total.add(entry.cost());
        self.screen_total.add(entry.eps_screen);
        self.decode_total.add(entry.eps_decode);
        self.entries.push(entry);
        Ok(self.entries.last().expect("just pushed"))
    }

    /// Total recomputed from scratch; equals [`Self::eps_rdp_total`] bit for bit.
    pub fn replay_total(entries: &[LedgerEntry]) -> f64 {
        entries.iter().map(LedgerEntry::cost).collect::<ExactSum>().value()
    }
}
