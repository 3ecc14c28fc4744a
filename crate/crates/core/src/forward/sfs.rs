use nalgebra::{DMatrix, Vector3};
use serde::{Deserialize, Serialize};

use super::chain::{widen, RotationChain};
use crate::calib::{rotate_params, AcquisitionParams, ExtendedParameters};
use crate::error::{PalsError, Result};
use crate::field::{eval_grid, projected_blocks, FieldModel, GridSpec, ParameterVector, NO_ROW};

/// Values at or below this floor count as background when looking for the
/// first boundary layer along a ray.
pub const BACKGROUND_FLOOR: f64 = 0.05;

pub const DEFAULT_ETA: f64 = 50.0;

/// A no-fill silhouette: one orthographic ray per `(i, j)` pixel along the third axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SilhouetteExperiment {
    pub acq: AcquisitionParams,
    /// `n1 × n2` image, first index fastest.
    pub observed: Vec<f64>,
    pub eta: f64,
}

impl SilhouetteExperiment {
    pub fn new(acq: AcquisitionParams, observed: Vec<f64>, eta: f64) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(PalsError::Config(format!("softmax sharpness must be positive, got {eta}")));
        }
        if !acq.is_finite() {
            return Err(PalsError::Domain("silhouette acquisition parameters must be finite".into()));
        }
        if let Some(v) = observed.iter().find(|v| !(**v >= 0.0 && **v <= 1.0)) {
            return Err(PalsError::Domain(format!("silhouette pixels must lie in [0, 1], got {v}")));
        }
        Ok(SilhouetteExperiment { acq, observed, eta })
    }

    pub fn check_grid(&self, grid: &GridSpec) -> Result<()> {
        if self.observed.len() != grid.dims[0] * grid.dims[1] {
            return Err(PalsError::Contract(format!(
                "silhouette has {} pixels for a {}×{} cross-section",
                self.observed.len(),
                grid.dims[0],
                grid.dims[1]
            )));
        }
        Ok(())
    }
}

/// First strictly increasing run of `ray` starting where it first rises above
/// [`BACKGROUND_FLOOR`], as a half-open index range.
pub fn sfs_boundary_run(ray: &[f64]) -> std::ops::Range<usize> {
    let Some(start) = ray.iter().position(|&v| v > BACKGROUND_FLOOR) else {
        return 0..0;
    };
    let mut end = start + 1;
    while end < ray.len() && ray[end] > ray[end - 1] {
        end += 1;
    }
    start..end
}

/// Softmax-weighted mean of `values` with sharpness `eta`, and `∂d/∂values`.
pub fn softmax_vote(values: &[f64], eta: f64) -> (f64, Vec<f64>) {
    if values.is_empty() {
        return (0.0, Vec::new());
    }
    let top = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = values.iter().map(|&u| (eta * (u - top)).exp()).collect();
    let z: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= z);
    let d: f64 = w.iter().zip(values).map(|(w, u)| w * u).sum();
    let grad = w.iter().zip(values).map(|(w, u)| w * (1.0 + eta * (u - d))).collect();
    (d.clamp(0.0, 1.0), grad)
}

pub(crate) struct SfsEval {
    pub image: Vec<f64>,
    pub jacobian: Option<DMatrix<f64>>,
    /// Per rotated-frame voxel: `∂d_pixel/∂u_voxel` (0 outside every run).
    pub voxel_weights: Vec<f64>,
}

pub(crate) fn sfs_eval(
    pals: &ParameterVector,
    acq: &AcquisitionParams,
    eta: f64,
    grid: &GridSpec,
    model: &FieldModel,
    want_jacobian: bool,
) -> Result<SfsEval> {
    let x_mid: Vector3<f64> = grid.mid();
    let rotated = rotate_params(pals, acq, &x_mid)?;
    let ev = eval_grid(&rotated, grid, model, false)?;
    let [n1, n2, n3] = grid.dims;
    let n_pix = n1 * n2;
    let mut image = vec![0.0; n_pix];
    let mut rows = vec![NO_ROW; grid.len()];
    let mut weights = vec![0.0; grid.len()];
    let mut ray = vec![0.0; n3];
    for pix in 0..n_pix {
        for (k, r) in ray.iter_mut().enumerate() {
            *r = ev.values[pix + n_pix * k];
        }
        let run = sfs_boundary_run(&ray);
        let (d, grad) = softmax_vote(&ray[run.clone()], eta);
        image[pix] = d;
        for (k, g) in run.zip(grad) {
            rows[pix + n_pix * k] = pix;
            weights[pix + n_pix * k] = g;
        }
    }
    let jacobian = if want_jacobian {
        let blocks = projected_blocks(&rotated, grid, model, &ev.sums, &rows, &weights, n_pix);
        let chain = RotationChain::new(pals.kind(), acq, &x_mid)?;
        Some(chain.apply(pals, &blocks))
    } else {
        None
    };
    Ok(SfsEval { image, jacobian, voxel_weights: weights })
}

/// Silhouette of experiment `l` under its pose in `m_ext`, with the Jacobian
/// over all of `m_ext`.
pub fn sfs_forward(
    m_ext: &ExtendedParameters,
    grid: &GridSpec,
    model: &FieldModel,
    eta: f64,
    l: usize,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    if !(eta > 0.0) {
        return Err(PalsError::Config(format!("softmax sharpness must be positive, got {eta}")));
    }
    let acq = m_ext.transform(l, grid.mid())?.acq;
    let ev = sfs_eval(&m_ext.pals, &acq, eta, grid, model, true)?;
    let local = ev.jacobian.expect("jacobian requested");
    Ok((ev.image, widen(&local, m_ext.pals.n_params(), m_ext.acq_offset(l), m_ext.n_params())))
}
