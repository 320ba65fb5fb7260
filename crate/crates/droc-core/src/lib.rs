//! Worst-case optimal control under moment-constrained parameter uncertainty.
//!
//! This crate solves control problems of the form
//!
//! > minimize over admissible controls the worst-case expected terminal cost,
//! > where the worst case ranges over every probability distribution of an
//! > uncertain model parameter that matches a known mean and variance.
//!
//! The pipeline is:
//!
//! 1. Restrict the parameter distribution to a finite characteristic grid
//!    ([`ambiguity`]). The inner "adversarial" problem becomes a small linear
//!    program over scenario weights with three moment constraints ([`lp`]).
//! 2. Parametrize the control as piecewise-constant on a time grid
//!    ([`control`]) and propagate states plus forward sensitivities through a
//!    fixed-step RK4 integrator ([`integrator`], [`dynamics`]).
//! 3. Replace the inner program by its dual, attach the dual feasibility
//!    constraints through a smoothed quadratic penalty, and minimize the
//!    resulting merit function by a projected-gradient inner loop inside a
//!    penalty-continuation outer loop ([`outer`]).
//! 4. Certify candidate solutions through first-order optimality residuals
//!    computed from costate (adjoint) integrations ([`kkt`]).
//!
//! A fed-batch fermentation benchmark with versioned reference data ships in
//! [`bench`].

pub mod ambiguity;
pub mod bench;
pub mod control;
pub mod dynamics;
pub mod integrator;
pub mod kkt;
pub mod lp;
pub mod outer;

/// Crate-wide error type.
///
/// Numerical routines return `Result<_, Error>`; statuses that are ordinary
/// outcomes (an infeasible LP, hitting an iteration cap during a solve) are
/// reported through result structs instead of this enum.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A state or sensitivity component left the trust region (non-finite or
    /// larger than the blow-up guard) during integration.
    #[error("numerical blow-up during integration: {0}")]
    NumericalBlowup(String),

    /// A model right-hand side would divide by zero (e.g. zero reactor volume).
    #[error("division by zero in {0}")]
    DivisionByZero(&'static str),

    /// An evaluation point lies outside the domain an object is defined on.
    #[error("out of domain: {0}")]
    OutOfDomain(String),

    /// A support grid has too few points for the requested construction.
    #[error("too few support points: need at least {need}, got {got}")]
    TooFewPoints { need: usize, got: usize },

    /// Two containers that must agree in length or shape do not.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A density evaluated to a negative value or is otherwise malformed.
    #[error("invalid density: {0}")]
    InvalidDensity(String),

    /// Discretized density mass deviates from 1 beyond tolerance.
    #[error("discretized density mass deviates from 1 by {0:.3e}")]
    MassMismatch(f64),

    /// An operation needed forward sensitivities but the trajectory carries none.
    #[error("trajectory carries no sensitivities")]
    MissingSensitivities,

    /// Structurally invalid input data (bad bounds, non-increasing breakpoints, ...).
    #[error("invalid data: {0}")]
    InvalidData(String),

    /// An internal invariant failed; indicates a bug or numerical breakdown.
    #[error("internal solver error: {0}")]
    InternalError(String),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Infinity norm of a slice (0 for an empty slice).
pub(crate) fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, &x| acc.max(x.abs()))
}

/// Ensure every entry of `v` is finite and below the blow-up guard.
pub(crate) fn check_finite(v: &[f64], guard: f64, context: &str) -> Result<()> {
    for &x in v {
        if !x.is_finite() || x.abs() > guard {
            return Err(Error::NumericalBlowup(format!(
                "{context}: component reached {x:e}"
            )));
        }
    }
    Ok(())
}
