//! Riemannian gradient flows with fast–slow structure.
//!
//! The state `η = (h, c)` flows along `η̇ = −G(η)⁻¹∇J(η, t)`. With the block
//! metric `G_ε = diag(I, ε⁻² I)` the fast coordinates `h` relax at O(1) rates
//! onto the critical manifold `{∇_h J = 0}` while the slow coordinates `c`
//! drift at O(ε²). The crate provides the metric and potential types, a
//! fixed-step RK4 integrator with trajectory recording, the fast-equilibrium
//! solver and reduced slow flow, and experiment drivers with pass/fail
//! verdicts.

// `!(x > 0.0)` is deliberate throughout: NaN must fail validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Failed integrations hand back the partial trajectory by value.
#![allow(clippy::result_large_err)]

pub mod csvfmt;
pub mod error;
pub mod experiments;
pub mod fastslow;
pub mod flow;
pub mod geometry;
pub mod potentials;

pub use error::{Error, Result};
pub use fastslow::{
    integrate_reduced, manifold_distance_series, reduced_velocity, reduction_error, solve_fast_equilibrium,
    stability_margin_over_grid, CriticalManifoldSample, FastEquilibrium, ReductionReport, SolverOptions,
};
pub use flow::{
    integrate, mean_speed_by_block, monotonicity_report, step_rk4, BlockSpeeds, FlowSystem, IntegrationFailure,
    IntegratorConfig, KickTarget, Perturbation, Trajectory,
};
pub use geometry::{check_spd, riemannian_gradient, Metric, Partition, SpdCheck, State};
pub use potentials::{
    BiasRamp, Component, CompositePotential, CubicBenchmark, DecisionPotential, FnPotential, HessianSource, Potential,
    QuadraticBowl,
};
