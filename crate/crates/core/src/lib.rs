//! Utility indifference pricing of European options under proportional
//! transaction costs.
//!
//! The value functions with and without the option are computed from a
//! penalized HJB equation on a truncated (α, β, S) solvency box using an
//! upwind implicit scheme with policy iteration; the option price is the
//! discounted difference of their certainty equivalents.

pub mod discretization;
pub mod error;
pub mod grid;
pub mod linsolve;
pub mod mc;
pub mod model;
pub mod pricing;
pub mod solver;

pub use error::{Error, NodeIndex, Result, UtilityDomainError};
pub use grid::{GridSpec, Mesh3D, NodeKind, SMeshKind};
pub use mc::{buy_and_hold_utility, McConfig, McEstimate};
pub use model::{
    bs_closed_form, bs_with_position, normal_cdf, payoff, shift_a, wealth, ModelParams, PayoffKind, Position,
    UtilityFunction,
};
pub use pricing::{
    certainty_equivalent, check_bounds, check_frictionless_limit, indifference_price, recover_script_v,
    BoundCheckOptions, BoundReport, FrictionlessReport, PriceSurface, SliceRow,
};
pub use solver::{
    complementarity, solve, step_backward, terminal_condition, ComplementarityReport, NumericalParams, SolveOutput,
    SolveReport, ValueField,
};
