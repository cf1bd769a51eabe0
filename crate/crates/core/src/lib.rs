//! Planar optimal transport under squared Euclidean cost, by reduction to a
//! quasi-linear elliptic Dirichlet problem for the distribution function of
//! an intermediate point, with discrete-transport oracles for validation.

pub mod conditional;
pub mod cost;
pub mod error;
pub mod grid;
mod linsolve;
pub mod oracle;
pub mod pde;
pub mod presets;
pub mod validation;

pub use conditional::{ellipticity_margin, ConditionalQuantile, QuantilePoint, Which};
pub use cost::{
    apply_perturbation, krw_1d_distance, krw_1d_distance_with, m_closed_form_residual, m_field, m_mixed_partial,
    objective, reconstruct_coupling, shift_cost_relation, split_check, CandidateQ, CornerPerturbation, CouplingPair,
    Instance,
};
pub use error::{Error, Result};
pub use grid::{
    cumulative_along, diff1, diff2, interp1_monotone, marginal, mixed_xy, normalize, Axis, Density2D, Grid1D,
    Marginal1D, ScalarField2D,
};
pub use pde::{
    assemble_coefficients, hh_residual, linear_elliptic_solve, picard_solve, recover_density, DistributionF,
    InitialGuess, PdeCoefficients, Solution, SolveReport, SolverConfig,
};
pub use oracle::{
    atomize, exact_ot, exact_ot_1d, minimize_objective_direct, minimize_objective_from, AtomizedMeasure, DirectResult,
    OtSolution, TransportPlan,
};
pub use presets::Preset;
