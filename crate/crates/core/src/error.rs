//! Error types shared across the crate.

/// Errors produced by model construction, integration, and experiment runs.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// An intermediate integration state became NaN or infinite. Usually
    /// means the step size is too large for the requested parameters.
    #[error("non-finite state encountered at t = {t}")]
    NonFiniteState { t: f64 },

    /// A constructor precondition was violated.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// An input lies outside the domain an operation is defined on.
    #[error("domain error: {0}")]
    Domain(String),

    /// No offset within the perturbation budget produced the requested
    /// outcome. Signals a regular regime, a budget that is too small, or a
    /// measuring time that is too short.
    #[error(
        "no flip found: x = {x_setting}, desired = {desired:+}, epsilon = {epsilon}, t_m = {t_m}"
    )]
    NoFlipFound {
        x_setting: f64,
        desired: i8,
        epsilon: f64,
        t_m: f64,
    },

    /// A setting combination received zero pairs in random-switching mode.
    /// The caller must raise `n_pairs`.
    #[error("empty bin for setting combination ({side_i}, {side_ii}); increase n_pairs")]
    EmptyBin { side_i: usize, side_ii: usize },

    /// The initial condition sits exactly on the separatrix, so no attractor
    /// is selected.
    #[error("initial condition lies exactly on the separatrix")]
    OnSeparatrix,
}

pub type Result<T> = std::result::Result<T, Error>;
