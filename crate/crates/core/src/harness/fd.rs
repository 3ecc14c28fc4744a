//! Central finite differences, the oracle for every analytic Jacobian.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::Result;

/// Step for a parameter of magnitude `x`.
pub fn fd_step(x: f64) -> f64 {
    1e-5 * x.abs().max(1.0)
}

/// `∂f/∂x` at `x0` by central differences, one column per coordinate.
pub fn central_jacobian(x0: &[f64], f: impl Fn(&[f64]) -> Result<Vec<f64>> + Sync) -> Result<DMatrix<f64>> {
    let n_out = f(x0)?.len();
    let cols: Vec<Vec<f64>> = (0..x0.len())
        .into_par_iter()
        .map(|c| {
            let h = fd_step(x0[c]);
            let mut x = x0.to_vec();
            x[c] = x0[c] + h;
            let p = f(&x)?;
            x[c] = x0[c] - h;
            let q = f(&x)?;
            Ok(p.iter().zip(&q).map(|(a, b)| (a - b) / (2.0 * h)).collect())
        })
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_fn(n_out, x0.len(), |r, c| cols[c][r]))
}

/// `max |a - b| / max |b|`, the largest deviation relative to the scale of the reference.
pub fn relative_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape(), "jacobian shapes differ");
    let scale = b.amax();
    let diff = (a - b).amax();
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}
