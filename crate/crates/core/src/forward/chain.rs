use nalgebra::DMatrix;

use crate::calib::{AcquisitionParams, RotationJacobian, ACQ_PARAMS};
use crate::error::Result;
use crate::field::{BasisKind, ParameterVector};

/// Per-experiment chain rule through the parameter rotation.
pub(crate) struct RotationChain {
    rj: RotationJacobian,
    params_block: DMatrix<f64>,
}

impl RotationChain {
    pub(crate) fn new(kind: BasisKind, acq: &AcquisitionParams, x_mid: &nalgebra::Vector3<f64>) -> Result<Self> {
        let rj = RotationJacobian::new(kind, acq, x_mid)?;
        let params_block = rj.params_block();
        Ok(RotationChain { rj, params_block })
    }

    /// Turns per-basis blocks of `∂y/∂rot(m)` into `∂y/∂(m, θ, φ, b)`, with the
    /// acquisition columns last.
    pub(crate) fn apply(&self, pals: &ParameterVector, blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
        let nb = pals.kind().n_params();
        let n_rows = blocks.first().map_or(0, |b| b.nrows());
        let np = pals.n_params();
        let mut out = DMatrix::zeros(n_rows, np + ACQ_PARAMS);
        let mut acq = DMatrix::zeros(n_rows, ACQ_PARAMS);
        for (i, (basis, block)) in pals.bases().iter().zip(blocks).enumerate() {
            if block.iter().all(|&v| v == 0.0) {
                continue;
            }
            out.view_mut((0, i * nb), (n_rows, nb)).copy_from(&(block * &self.params_block));
            acq += block * self.rj.acq_block(basis);
        }
        out.view_mut((0, np), (n_rows, ACQ_PARAMS)).copy_from(&acq);
        out
    }
}

/// Splits a dense Jacobian into per-basis column blocks.
pub(crate) fn column_blocks(j: &DMatrix<f64>, nb: usize) -> Vec<DMatrix<f64>> {
    (0..j.ncols() / nb).map(|i| j.columns(i * nb, nb).into_owned()).collect()
}

/// Widens a local `[m | acq_j]` Jacobian to the full extended layout.
pub(crate) fn widen(local: &DMatrix<f64>, np: usize, acq_offset: usize, n_ext: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(local.nrows(), n_ext);
    out.columns_mut(0, np).copy_from(&local.columns(0, np));
    out.columns_mut(acq_offset, ACQ_PARAMS).copy_from(&local.columns(np, ACQ_PARAMS));
    out
}
