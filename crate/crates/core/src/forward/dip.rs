use nalgebra::{DMatrix, Vector3};
use serde::{Deserialize, Serialize};

use super::chain::{widen, RotationChain};
use crate::calib::{rotate_params, AcquisitionParams, ExtendedParameters};
use crate::error::{PalsError, Result};
use crate::field::{eval_grid, projected_blocks, FieldModel, GridSpec, ParameterVector};

/// One dip: the recorded pose and the observed per-slice volumes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DipExperiment {
    pub acq: AcquisitionParams,
    pub observed: Vec<f64>,
}

impl DipExperiment {
    pub fn new(acq: AcquisitionParams, observed: Vec<f64>) -> Result<Self> {
        if !acq.is_finite() {
            return Err(PalsError::Domain("dip acquisition parameters must be finite".into()));
        }
        if let Some(v) = observed.iter().find(|v| !(**v >= 0.0)) {
            return Err(PalsError::Domain(format!("dip trace entries must be non-negative, got {v}")));
        }
        Ok(DipExperiment { acq, observed })
    }

    pub fn check_grid(&self, grid: &GridSpec) -> Result<()> {
        if self.observed.len() != grid.dims[2] {
            return Err(PalsError::Contract(format!(
                "dip trace has {} entries for {} slices",
                self.observed.len(),
                grid.dims[2]
            )));
        }
        Ok(())
    }
}

/// Trace and, optionally, its Jacobian in the local `[m | θ, φ, b]` layout.
pub(crate) struct DipEval {
    pub trace: Vec<f64>,
    pub jacobian: Option<DMatrix<f64>>,
}

/// Slice sums of a gridded field, scaled by the voxel volume.
pub(crate) fn slice_volumes(grid: &GridSpec, values: &[f64]) -> Vec<f64> {
    let plane = grid.dims[0] * grid.dims[1];
    let v = grid.voxel_volume();
    values.chunks_exact(plane).map(|s| s.iter().sum::<f64>() * v).collect()
}

pub(crate) fn dip_eval(
    pals: &ParameterVector,
    acq: &AcquisitionParams,
    grid: &GridSpec,
    model: &FieldModel,
    want_jacobian: bool,
) -> Result<DipEval> {
    let x_mid: Vector3<f64> = grid.mid();
    let rotated = rotate_params(pals, acq, &x_mid)?;
    let ev = eval_grid(&rotated, grid, model, false)?;
    let trace = slice_volumes(grid, &ev.values);
    let jacobian = if want_jacobian {
        let plane = grid.dims[0] * grid.dims[1];
        let rows: Vec<usize> = (0..grid.len()).map(|idx| idx / plane).collect();
        let weights = vec![grid.voxel_volume(); grid.len()];
        let blocks = projected_blocks(&rotated, grid, model, &ev.sums, &rows, &weights, grid.dims[2]);
        let chain = RotationChain::new(pals.kind(), acq, &x_mid)?;
        Some(chain.apply(pals, &blocks))
    } else {
        None
    };
    Ok(DipEval { trace, jacobian })
}

/// Dip trace of experiment `j` under its current pose in `m_ext`, with the
/// Jacobian over all of `m_ext`.
pub fn dip_forward(
    m_ext: &ExtendedParameters,
    grid: &GridSpec,
    model: &FieldModel,
    j: usize,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let acq = m_ext.transform(j, grid.mid())?.acq;
    let ev = dip_eval(&m_ext.pals, &acq, grid, model, true)?;
    let local = ev.jacobian.expect("jacobian requested");
    let np = m_ext.pals.n_params();
    Ok((ev.trace, widen(&local, np, m_ext.acq_offset(j), m_ext.n_params())))
}
