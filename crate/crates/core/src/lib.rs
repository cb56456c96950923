//! Numerical core for ensemble averaging of a one-dimensional heat equation
//! driven by fast-oscillating random body forcing and small fast-oscillating
//! random Dirichlet boundary data on `(0, l)`.
//!
//! Everything here is pure computation over `alloc` collections:
//!
//! * [`spectral`]: the Dirichlet sine eigensystem, fields as mode coefficients,
//!   Sobolev-type norms and the heat semigroup.
//! * [`noise`]: Ornstein–Uhlenbeck mixing drivers, the separable forcing model
//!   `g(t, u) = m(t) γ(u)` and its averaged quantities.
//! * [`multiscale`]: the ε-system, integrated through the boundary lift.
//! * [`limit`]: the averaged equation (stochastic boundary case and
//!   deterministic body-forcing case) and the linear deviation SPDE.
//! * [`stats`]: error functionals, rate fits, two-sample KS and moments.
//!
//! Random numbers come in through any [`rand::Rng`]; seeding and parallel
//! orchestration live in the `heatavg` companion crate.
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod error;
pub mod limit;
pub mod multiscale;
pub mod noise;
pub mod spectral;
pub mod stats;

mod plan;

pub use error::{Error, Result};
pub use limit::{
    simulate_limit, solve_averaged_deterministic, step_averaged, step_deviation, DeviationConfig,
    LimitConfig, LimitProblem,
};
pub use multiscale::{
    lift, simulate_multiscale, step_lifted, unlift, MultiscaleConfig, TrajectoryRecord,
};
pub use noise::{
    advance_drivers, averaged_derivative, bar_g, boundary_long_run_variance, boundary_variance_b,
    covariance_btilde, eval_g, ou_exact_step, sigma_quadratic_form, BoundaryDriver,
    CovarianceRep, DriverState, ForcingModel, GammaKind, Multiplier, OuParams, RateShape,
};
pub use spectral::{
    build_basis, evaluate_field, heat_semigroup_apply, norm, Field, NormOrder, SpectralBasis,
};
pub use stats::{
    empirical_moments, estimate_rate, fluctuation_integral, ks_two_sample, pathwise_error,
    Moments, RateFit,
};
