//! Synthetic benchmarks, recovery metrics and reference solvers.

pub mod metrics;
pub mod oracle;
pub mod synth;

pub use metrics::{expressed_variance, orthonormal_span, relative_error_on};
pub use oracle::{oracle_small_instance, OraclePenalty, OracleProblem, OracleSolution};
pub use synth::{generate, SyntheticColumn, SyntheticSpec, SyntheticStream};

/// Expressed variance of a learned basis after `t` samples of a synthetic run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvReport<T> {
    pub ev: T,
    pub t: u64,
    /// [`SyntheticSpec::fingerprint`] of the generating spec.
    pub spec: u64,
}
