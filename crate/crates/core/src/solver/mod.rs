//! Gauss-Newton reconstruction: regularizers, the damped step, adaptive basis
//! insertion and the outer driver over one or several data modalities.

mod config;
mod gn;
mod rbf;
mod reconstruct;
mod regularizers;
mod terms;

pub use config::{GNConfig, RBFSchedule};
pub use gn::{
    active_vector, data_misfit, gauss_newton_step, normal_equations, objective_parts, regularizer_value, with_active,
    PosePrior, Regularization, StepRecord,
};
pub use rbf::{add_rbfs, ball_basis, initial_bases};
pub use reconstruct::{reconstruct, OptimizationTrace, Reconstruction, ReconstructionProblem};
pub use regularizers::{iterated_tikhonov, logdet_barrier, Penalty};
pub use terms::{
    joint_objective, DipTerm, GammaMode, JointObjective, ObjectiveTerm, PointCloudTerm, ResidualModel,
    SilhouetteTerm, TermEval,
};

#[cfg(test)]
mod tests;
