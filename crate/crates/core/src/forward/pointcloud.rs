use nalgebra::{DMatrix, Vector3};

use super::chain::{column_blocks, widen, RotationChain};
use super::NeighborIndex;
use crate::calib::{rotate_params, AcquisitionParams, ExtendedParameters};
use crate::error::{PalsError, Result};
use crate::field::{eval_indexed, FieldModel, ParameterVector};

pub const DEFAULT_LEVEL: f64 = 0.7;

/// Oriented surface samples. The residual points are the samples themselves
/// plus one offset copy on each side along the normal.
#[derive(Debug, Clone)]
pub struct PointCloudData {
    pub acq: AcquisitionParams,
    points: Vec<Vector3<f64>>,
    normals: Vec<Vector3<f64>>,
    eps_offset: f64,
    level: f64,
    index: NeighborIndex,
}

impl PointCloudData {
    pub fn new(
        points: Vec<Vector3<f64>>,
        normals: Vec<Vector3<f64>>,
        eps_offset: f64,
        level: f64,
        acq: AcquisitionParams,
    ) -> Result<Self> {
        if points.is_empty() || points.len() != normals.len() {
            return Err(PalsError::Domain(format!(
                "point cloud needs matching non-empty point and normal lists ({} vs {})",
                points.len(),
                normals.len()
            )));
        }
        if let Some(i) = normals.iter().position(|n| !((n.norm() - 1.0).abs() <= 1e-6)) {
            return Err(PalsError::Domain(format!("normal {i} is not unit length")));
        }
        if points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(PalsError::Domain("point coordinates must be finite".into()));
        }
        if !(eps_offset > 0.0) {
            return Err(PalsError::Config(format!("normal offset must be positive, got {eps_offset}")));
        }
        if !(level > 0.0 && level < 1.0) {
            return Err(PalsError::Config(format!("surface level must lie in (0, 1), got {level}")));
        }
        let n = points.len();
        let mut samples = Vec::with_capacity(3 * n);
        samples.extend_from_slice(&points);
        samples.extend(points.iter().zip(&normals).map(|(p, nn)| p + nn * eps_offset));
        samples.extend(points.iter().zip(&normals).map(|(p, nn)| p - nn * eps_offset));
        Ok(PointCloudData { acq, points, normals, eps_offset, level, index: NeighborIndex::new(samples) })
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn normals(&self) -> &[Vector3<f64>] {
        &self.normals
    }

    pub fn eps_offset(&self) -> f64 {
        self.eps_offset
    }

    pub fn level(&self) -> f64 {
        self.level
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// On-surface, outer and inner sample points, in residual order.
    pub fn samples(&self) -> &[Vector3<f64>] {
        self.index.points()
    }

    /// Targets `[level; 0; 1]` per block.
    pub fn targets(&self) -> Vec<f64> {
        let n = self.len();
        let mut t = vec![self.level; n];
        t.extend(std::iter::repeat_n(0.0, n));
        t.extend(std::iter::repeat_n(1.0, n));
        t
    }
}

pub(crate) struct PcEval {
    pub residuals: Vec<f64>,
    pub jacobian: Option<DMatrix<f64>>,
}

pub(crate) fn pc_eval(
    pals: &ParameterVector,
    acq: &AcquisitionParams,
    cloud: &PointCloudData,
    model: &FieldModel,
    x_mid: &Vector3<f64>,
    want_jacobian: bool,
) -> Result<PcEval> {
    let rotated = rotate_params(pals, acq, x_mid)?;
    let ev = eval_indexed(&rotated, &cloud.index, model, want_jacobian)?;
    let residuals = ev.values.iter().zip(cloud.targets()).map(|(u, t)| u - t).collect();
    let jacobian = match ev.jacobian {
        Some(j) => {
            let blocks = column_blocks(&j.to_dense(), pals.kind().n_params());
            let chain = RotationChain::new(pals.kind(), acq, x_mid)?;
            let mut local = chain.apply(pals, &blocks);
            if blocks.is_empty() {
                local = DMatrix::zeros(3 * cloud.len(), local.ncols());
            }
            Some(local)
        }
        None => None,
    };
    Ok(PcEval { residuals, jacobian })
}

/// Residuals `[u(xᵢ) - level; u(xᵢ + εnᵢ); u(xᵢ - εnᵢ) - 1]` of cloud `j`,
/// with the Jacobian over all of `m_ext`. `x_mid` is the rotation center.
pub fn pc_residuals(
    m_ext: &ExtendedParameters,
    cloud: &PointCloudData,
    model: &FieldModel,
    x_mid: &Vector3<f64>,
    j: usize,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let acq = m_ext.transform(j, *x_mid)?.acq;
    let ev = pc_eval(&m_ext.pals, &acq, cloud, model, x_mid, true)?;
    let local = ev.jacobian.expect("jacobian requested");
    Ok((ev.residuals, widen(&local, m_ext.pals.n_params(), m_ext.acq_offset(j), m_ext.n_params())))
}
