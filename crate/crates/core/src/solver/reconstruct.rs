use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{GNConfig, RBFSchedule};
use super::gn::{active_vector, data_misfit, gauss_newton_step, PosePrior, Regularization, StepRecord};
use super::rbf::{add_rbfs, initial_bases};
use super::terms::JointObjective;
use crate::calib::ExtendedParameters;
use crate::error::{PalsError, Result};
use crate::field::{binarize, eval_grid, level_sums, BasisKind, FieldModel, GridSpec, ScalarField, DEFAULT_EPS_NORM};

/// Everything [`reconstruct`] needs besides the schedule.
#[derive(Clone)]
pub struct ReconstructionProblem {
    pub objective: JointObjective,
    /// Reconstruction grid: where new bases are placed and the result is binarized.
    pub grid: GridSpec,
    pub model: FieldModel,
    pub kind: BasisKind,
    pub eps_norm: f64,
}

impl ReconstructionProblem {
    pub fn new(objective: JointObjective, grid: GridSpec, model: FieldModel, kind: BasisKind) -> Result<Self> {
        if let Some(g) = objective.grid()? {
            if g != grid {
                return Err(PalsError::Config("experiment grid differs from the reconstruction grid".into()));
            }
        }
        grid.validate()?;
        model.heaviside.validate()?;
        Ok(ReconstructionProblem { objective, grid, model, kind, eps_norm: DEFAULT_EPS_NORM })
    }
}

/// Per-step history of a reconstruction.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimizationTrace {
    /// Weighted data misfit of the initial model.
    pub initial_misfit: f64,
    /// Modality weights in force during the run.
    pub gammas: Vec<f64>,
    /// Basis count right after the insertion of each outer iteration.
    pub n_rbf_per_outer: Vec<usize>,
    pub steps: Vec<StepRecord>,
}

impl OptimizationTrace {
    pub fn final_misfit(&self) -> f64 {
        self.steps.last().map_or(self.initial_misfit, |s| s.misfit)
    }
}

pub struct Reconstruction {
    pub params: ExtendedParameters,
    /// Soft field `u` on the reconstruction grid.
    pub field: ScalarField,
    pub binary: ScalarField,
    pub trace: OptimizationTrace,
}

/// `Σ_t w_t ∂‖r_t‖²/∂u` on the reconstruction grid.
fn misfit_gradient(problem: &ReconstructionProblem, m_ext: &ExtendedParameters) -> Result<Vec<f64>> {
    let parts: Vec<Vec<f64>> = problem
        .objective
        .terms
        .par_iter()
        .map(|t| {
            let g = t.model.misfit_gradient_u(&m_ext.pals, &m_ext.acq_list[t.acq_index], &problem.grid)?;
            Ok(g.into_iter().map(|v| v * t.weight).collect())
        })
        .collect::<Result<_>>()?;
    let mut total = vec![0.0; problem.grid.len()];
    for p in parts {
        total.iter_mut().zip(p).for_each(|(a, b)| *a += b);
    }
    Ok(total)
}

/// Adaptive PaLS reconstruction: random initial bases around the grid center,
/// then per outer iteration insert bases where the misfit is sensitive,
/// re-anchor the iterated Tikhonov term, run `it_gn` Gauss-Newton steps and
/// decay λ. Poses are optimized too when `estimate_calibration` is set.
pub fn reconstruct(
    problem: &ReconstructionProblem,
    schedule: &RBFSchedule,
    cfg: &GNConfig,
    estimate_calibration: bool,
    seed: u64,
) -> Result<Reconstruction> {
    schedule.validate()?;
    cfg.validate()?;
    let mut objective = problem.objective.clone();
    let grid = &problem.grid;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pals = initial_bases(problem.kind, schedule, grid, problem.eps_norm, &mut rng)?;
    let mut m_ext = ExtendedParameters::new(pals, objective.recorded_acqs());
    let gammas = objective.balance(&m_ext)?;
    let mut trace = OptimizationTrace { initial_misfit: data_misfit(&m_ext, &objective)?, gammas, ..Default::default() };
    log::info!(
        "start: {} bases, misfit {:.6e}, weights {:?}",
        m_ext.pals.len(),
        trace.initial_misfit,
        trace.gammas
    );
    // Regularization weights are relative to the initial misfit, so they do
    // not depend on the units of the data.
    let scale = if trace.initial_misfit > 0.0 { trace.initial_misfit } else { 1.0 };
    let barrier_weight = if problem.kind == BasisKind::Ellipsoidal { cfg.barrier_weight * scale } else { 0.0 };
    let pose_prior = estimate_calibration.then(|| PosePrior::new(cfg.pose_prior_weight * scale, &m_ext.acq_list));
    let mut lambda = cfg.lambda0 * scale;
    for outer in 0..schedule.outer_iters {
        let sums = level_sums(&m_ext.pals, grid, problem.model.order)?;
        let grad = misfit_gradient(problem, &m_ext)?;
        let (pals, _) = add_rbfs(&m_ext.pals, &sums, &grad, schedule, grid, &problem.model.heaviside)?;
        m_ext.pals = pals;
        trace.n_rbf_per_outer.push(m_ext.pals.len());
        let reg = Regularization {
            lambda,
            anchor: active_vector(&m_ext, estimate_calibration),
            barrier_weight,
            pose_prior: pose_prior.clone(),
        };
        for inner in 0..cfg.it_gn {
            let (next, mut record) = gauss_newton_step(&m_ext, &objective, &reg, cfg, estimate_calibration)?;
            record.outer = outer;
            record.inner = inner;
            m_ext = next;
            let stalled = record.stalled;
            trace.steps.push(record);
            if stalled {
                break;
            }
        }
        log::info!(
            "outer {outer}: {} bases, misfit {:.6e}, lambda {lambda:.3e}",
            m_ext.pals.len(),
            trace.final_misfit()
        );
        lambda *= cfg.lambda_decay;
    }
    let field = ScalarField::new(*grid, eval_grid(&m_ext.pals, grid, &problem.model, false)?.values)?;
    let binary = binarize(&field, schedule.binarize_threshold)?;
    Ok(Reconstruction { params: m_ext, field, binary, trace })
}
