//! Mean-field solving, Pontryagin verification, and stochastic validation of
//! spread/stealth trade-off policies for the SGZP malware-variant model.

pub mod error;
pub mod model;
pub mod ode;
pub mod optimize;
pub mod pmp;
pub mod stochastic;

pub use error::{Error, Result};
pub use model::{
    BetaSpec, ControlVector, DamageSpec, EfficacySpec, EpidemicState, ModelSpec, Variant,
    VisibilitySpec,
};
pub use ode::{
    convergence_order, default_step, integrate_forward, integrate_with_noise, objective,
    ControlPolicy, ConvergenceOrder, HeuristicKind, NoiseModel, Trajectory,
};
pub use optimize::{
    brute_force_policy_search, evaluate_heuristic, optimal_threshold, HeuristicResult,
    OracleSolution, ThresholdSolution,
};
pub use pmp::{
    integrate_costates_backward, switching_residuals, verify_pmp, CostateTrajectory,
    ResidualReport, VerdictReport,
};
pub use stochastic::{
    robustness_sweep, simulate_population, PerturbationKind, PerturbationSpec, Population,
    RobustnessPoint, SimulationRun,
};
