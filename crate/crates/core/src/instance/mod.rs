//! Benchmark and toy instance generators.

mod mdof;
mod mpc;
mod theta;
mod toy;

use thiserror::Error;

pub use mdof::{
    discretize_modal, generate_mdof, lqr_synthesis, spectral_radius, system_from_modes, MdofSystem, Mode,
    CRITICAL_PROBABILITY, DAMPING_RATE, MAX_DAMPED_FREQUENCY, RICCATI_TOL,
};
pub use mpc::{
    assemble_mpc_program, generate_instance, tightening, McInstance, RobustMode, DEFAULT_HORIZON, INNER_RATIO,
    INPUT_WEIGHT, STATE_WEIGHT, W_MAX,
};
pub use theta::{construct_theta, is_robust_invariant, Block, ThetaSet, MAX_SIDES};
pub use toy::{
    toy1d, toy1d_kappa, toy1d_offset, toy1d_value, toy2d, toy2d_with_offset, toy_instances,
    NamedInstance, KAPPA_SHIFT,
};
#[cfg(test)]
pub(crate) use toy::toy_program_2d;

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("Riccati iteration diverged: {0}")]
    RiccatiDivergence(String),
    #[error("no invariant parameter set found: {0}")]
    NoInvariantBoxFound(String),
    #[error("MPC horizon infeasible: {0}")]
    HorizonInfeasible(String),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
    #[error(transparent)]
    Mi(#[from] crate::mi::MiError),
    #[error(transparent)]
    Problem(#[from] crate::problem::ProblemError),
}
