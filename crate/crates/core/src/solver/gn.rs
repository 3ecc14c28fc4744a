use std::ops::AddAssign;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::GNConfig;
use super::regularizers::{iterated_tikhonov, logdet_barrier, Penalty};
use super::terms::JointObjective;
use crate::calib::{AcquisitionParams, ExtendedParameters, ACQ_PARAMS};
use crate::error::{PalsError, Result};
use crate::field::BasisKind;

/// Normal-equation assembly splits the terms into this many chunks; fixed so
/// that the summation order never depends on the thread count.
const ASSEMBLY_CHUNKS: usize = 8;

/// Regularization active during one outer iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct Regularization {
    pub lambda: f64,
    /// Tikhonov anchor over the active parameters.
    pub anchor: Vec<f64>,
    /// Log-det barrier weight; ignored unless the bases are ellipsoids.
    pub barrier_weight: f64,
    /// Tikhonov pull of the poses toward their recorded values; only used
    /// while calibrating.
    pub pose_prior: Option<PosePrior>,
}

/// `w‖acq - recorded‖²` over the flattened acquisition block.
#[derive(Debug, Clone, PartialEq)]
pub struct PosePrior {
    pub weight: f64,
    pub recorded: Vec<f64>,
}

impl PosePrior {
    pub fn new(weight: f64, recorded: &[AcquisitionParams]) -> Self {
        PosePrior { weight, recorded: recorded.iter().flat_map(|a| a.to_array()).collect() }
    }
}

fn pose_penalty(x: &[f64], np: usize, reg: &Regularization, estimate_calibration: bool) -> Result<Option<Penalty>> {
    match &reg.pose_prior {
        Some(p) if estimate_calibration && p.weight > 0.0 => Ok(Some(iterated_tikhonov(&x[np..], &p.recorded, p.weight)?)),
        _ => Ok(None),
    }
}

/// One Gauss-Newton step as recorded in the optimization trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub outer: usize,
    pub inner: usize,
    /// Weighted data misfit after the step.
    pub misfit: f64,
    /// Regularizer value after the step.
    pub reg: f64,
    /// Regularized objective before the step.
    pub objective_before: f64,
    pub n_rbf: usize,
    /// Accepted line-search step length; 0 when the search stalled.
    pub step: f64,
    pub stalled: bool,
    pub lambda: f64,
    pub acq: Vec<AcquisitionParams>,
}

impl StepRecord {
    pub fn objective(&self) -> f64 {
        self.misfit + self.reg
    }
}

/// Parameters the optimizer moves: the PaLS block, plus every pose when
/// calibration is estimated.
pub fn active_vector(m_ext: &ExtendedParameters, estimate_calibration: bool) -> Vec<f64> {
    if estimate_calibration {
        m_ext.flatten()
    } else {
        m_ext.pals.flatten()
    }
}

pub fn with_active(m_ext: &ExtendedParameters, x: &[f64], estimate_calibration: bool) -> Result<ExtendedParameters> {
    if estimate_calibration {
        m_ext.unflatten_like(x)
    } else {
        Ok(ExtendedParameters::new(m_ext.pals.unflatten_like(x)?, m_ext.acq_list.clone()))
    }
}

/// Weighted data misfit `Σ w‖r‖²`.
pub fn data_misfit(m_ext: &ExtendedParameters, objective: &JointObjective) -> Result<f64> {
    let parts: Vec<f64> = objective
        .terms
        .par_iter()
        .map(|t| {
            let r = t.model.evaluate(&m_ext.pals, &m_ext.acq_list[t.acq_index], false)?.residuals;
            Ok(t.weight * r.iter().map(|v| v * v).sum::<f64>())
        })
        .collect::<Result<_>>()?;
    Ok(parts.iter().sum())
}

fn uses_barrier(m_ext: &ExtendedParameters, reg: &Regularization) -> bool {
    m_ext.pals.kind() == BasisKind::Ellipsoidal && reg.barrier_weight > 0.0
}

/// Regularizer value at `m_ext`.
pub fn regularizer_value(m_ext: &ExtendedParameters, reg: &Regularization, estimate_calibration: bool) -> Result<f64> {
    let x = active_vector(m_ext, estimate_calibration);
    let mut v = iterated_tikhonov(&x, &reg.anchor, reg.lambda)?.value;
    if let Some(p) = pose_penalty(&x, m_ext.pals.n_params(), reg, estimate_calibration)? {
        v += p.value;
    }
    if uses_barrier(m_ext, reg) {
        v += logdet_barrier(&m_ext.pals, reg.barrier_weight)?.value;
    }
    Ok(v)
}

/// `(misfit, regularizer)` or an error when `m_ext` leaves the feasible set.
pub fn objective_parts(
    m_ext: &ExtendedParameters,
    objective: &JointObjective,
    reg: &Regularization,
    estimate_calibration: bool,
) -> Result<(f64, f64)> {
    m_ext.pals.validate()?;
    if !m_ext.acq_list.iter().all(|a| a.is_finite()) {
        return Err(PalsError::Numerical("acquisition parameters became non-finite".into()));
    }
    let reg_value = regularizer_value(m_ext, reg, estimate_calibration)?;
    Ok((data_misfit(m_ext, objective)?, reg_value))
}

/// Gauss-Newton normal equations `(2ΣwJᵀJ, 2ΣwJᵀr, Σw‖r‖²)` over the active parameters.
pub fn normal_equations(
    m_ext: &ExtendedParameters,
    objective: &JointObjective,
    estimate_calibration: bool,
) -> Result<(DMatrix<f64>, DVector<f64>, f64)> {
    let np = m_ext.pals.n_params();
    let n = if estimate_calibration { m_ext.n_params() } else { np };
    let terms = &objective.terms;
    let chunk = terms.len().div_ceil(ASSEMBLY_CHUNKS).max(1);
    let partial: Vec<(DMatrix<f64>, DVector<f64>, f64)> = terms
        .par_chunks(chunk)
        .map(|ts| {
            let mut h = DMatrix::zeros(n, n);
            let mut g = DVector::zeros(n);
            let mut f = 0.0;
            for t in ts {
                let ev = t.model.evaluate(&m_ext.pals, &m_ext.acq_list[t.acq_index], true)?;
                let j = ev.jacobian.expect("jacobian requested");
                let r = DVector::from_vec(ev.residuals);
                f += t.weight * r.norm_squared();
                let w2 = 2.0 * t.weight;
                if estimate_calibration {
                    let jtj = j.tr_mul(&j) * w2;
                    let jtr = j.tr_mul(&r) * w2;
                    let a = m_ext.acq_offset(t.acq_index);
                    h.view_mut((0, 0), (np, np)).add_assign(&jtj.view((0, 0), (np, np)));
                    h.view_mut((0, a), (np, ACQ_PARAMS)).add_assign(&jtj.view((0, np), (np, ACQ_PARAMS)));
                    h.view_mut((a, 0), (ACQ_PARAMS, np)).add_assign(&jtj.view((np, 0), (ACQ_PARAMS, np)));
                    h.view_mut((a, a), (ACQ_PARAMS, ACQ_PARAMS))
                        .add_assign(&jtj.view((np, np), (ACQ_PARAMS, ACQ_PARAMS)));
                    g.rows_mut(0, np).add_assign(&jtr.rows(0, np));
                    g.rows_mut(a, ACQ_PARAMS).add_assign(&jtr.rows(np, ACQ_PARAMS));
                } else {
                    let jp = j.columns(0, np);
                    h += jp.tr_mul(&jp) * w2;
                    g += jp.tr_mul(&r) * w2;
                }
            }
            Ok((h, g, f))
        })
        .collect::<Result<_>>()?;
    let mut h = DMatrix::zeros(n, n);
    let mut g = DVector::zeros(n);
    let mut f = 0.0;
    for (ph, pg, pf) in partial {
        h += ph;
        g += pg;
        f += pf;
    }
    Ok((h, g, f))
}

/// One damped Gauss-Newton step with Armijo backtracking on the regularized
/// objective. Steps leaving the feasible set (non-positive β, indefinite
/// shape matrices, non-positive Cholesky diagonals) are shrunk like any other
/// rejected step.
pub fn gauss_newton_step(
    m_ext: &ExtendedParameters,
    objective: &JointObjective,
    reg: &Regularization,
    cfg: &GNConfig,
    estimate_calibration: bool,
) -> Result<(ExtendedParameters, StepRecord)> {
    if objective.terms.is_empty() {
        return Err(PalsError::Contract("Gauss-Newton needs at least one objective term".into()));
    }
    let x = active_vector(m_ext, estimate_calibration);
    let (mut h, mut g, misfit0) = normal_equations(m_ext, objective, estimate_calibration)?;
    let tik = iterated_tikhonov(&x, &reg.anchor, reg.lambda)?;
    h += &tik.hessian;
    g += &tik.gradient;
    let mut reg0 = tik.value;
    let np = m_ext.pals.n_params();
    if let Some(p) = pose_penalty(&x, np, reg, estimate_calibration)? {
        let na = x.len() - np;
        h.view_mut((np, np), (na, na)).add_assign(&p.hessian);
        g.rows_mut(np, na).add_assign(&p.gradient);
        reg0 += p.value;
    }
    if uses_barrier(m_ext, reg) {
        let b = logdet_barrier(&m_ext.pals, reg.barrier_weight)?;
        h.view_mut((0, 0), (np, np)).add_assign(&b.hessian);
        g.rows_mut(0, np).add_assign(&b.gradient);
        reg0 += b.value;
    }
    let f0 = misfit0 + reg0;
    let delta = solve_normal(&h, &g, reg.lambda, x.len())?;
    let slope = g.dot(&delta);

    let mut mu = 1.0;
    for _ in 0..cfg.armijo_max {
        let trial: Vec<f64> = x.iter().zip(delta.iter()).map(|(a, d)| a - mu * d).collect();
        let candidate = with_active(m_ext, &trial, estimate_calibration)?;
        match objective_parts(&candidate, objective, reg, estimate_calibration) {
            Ok((misfit, r)) if misfit + r <= f0 - cfg.armijo_c * mu * slope => {
                let record = StepRecord {
                    outer: 0,
                    inner: 0,
                    misfit,
                    reg: r,
                    objective_before: f0,
                    n_rbf: candidate.pals.len(),
                    step: mu,
                    stalled: false,
                    lambda: reg.lambda,
                    acq: candidate.acq_list.clone(),
                };
                return Ok((candidate, record));
            }
            Ok(_) => {}
            Err(e) if e.is_numerical() => {}
            Err(e) => return Err(e),
        }
        mu *= cfg.armijo_shrink;
    }
    log::debug!("line search stalled after {} backtracks", cfg.armijo_max);
    let record = StepRecord {
        outer: 0,
        inner: 0,
        misfit: misfit0,
        reg: reg0,
        objective_before: f0,
        n_rbf: m_ext.pals.len(),
        step: 0.0,
        stalled: true,
        lambda: reg.lambda,
        acq: m_ext.acq_list.clone(),
    };
    Ok((m_ext.clone(), record))
}

/// Cholesky solve of `H Δ = g`; on failure the Tikhonov shift is raised
/// tenfold once before giving up.
fn solve_normal(h: &DMatrix<f64>, g: &DVector<f64>, lambda: f64, n: usize) -> Result<DVector<f64>> {
    if let Some(c) = h.clone().cholesky() {
        return Ok(c.solve(g));
    }
    log::warn!("normal matrix not positive definite; raising the Tikhonov weight tenfold");
    let bumped = h + DMatrix::identity(n, n) * (2.0 * 9.0 * lambda);
    match bumped.cholesky() {
        Some(c) => Ok(c.solve(g)),
        None => Err(PalsError::Numerical(format!(
            "normal matrix of size {n} is singular even with lambda = {:e}",
            10.0 * lambda
        ))),
    }
}
