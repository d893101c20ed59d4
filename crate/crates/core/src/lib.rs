//! Adaptive private mixtures of next-token predictors.
//!
//! Each query is first screened by a noisy test comparing a small mixture of
//! the private ensemble against the public model. Queries that pass are
//! answered by a mixture of ensemble members projected into a Rényi ball
//! around the public distribution, and charged their data-dependent privacy
//! loss; queries that fail are answered by the public model at the cost of
//! the screening alone.

pub mod accountant;
pub mod decoder;
pub mod divergence;
pub mod ensemble;
pub mod error;
pub mod harness;
pub mod projection;
pub mod screening;
mod serde_ext;

pub use accountant::{
    data_dependent_loss, data_independent_bound, rdp_to_dp, select_beta, subsampled_loss,
    utility_gap_bound, ExactSum, LedgerEntry, PrivacyLedger,
};
pub use decoder::{
    baseline_beta, decode_adaptive, decode_baseline, distribution_digest, BaselineConfig,
    DecodingConfig, DecodingMode, QueryOutcome,
};
pub use divergence::{renyi_divergence, renyi_divergence_sym, ProbDist, RenyiOrder};
pub use error::{Error, Result};
pub use projection::{project, ProjectionResult};
pub use screening::{screen, screening_eps, ScreeningConfig, ScreeningVerdict};
