use nalgebra::{DMatrix, DVector, Matrix3};

use crate::error::{PalsError, Result};
use crate::field::{Basis, BasisKind, ParameterVector, TRIL_POSITIONS};

/// Value, gradient and Hessian of a scalar penalty.
#[derive(Debug, Clone, PartialEq)]
pub struct Penalty {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

/// `λ‖m - anchor‖²` with gradient `2λ(m - anchor)` and Hessian `2λI`.
pub fn iterated_tikhonov(m: &[f64], anchor: &[f64], lambda: f64) -> Result<Penalty> {
    if m.len() != anchor.len() {
        return Err(PalsError::Contract(format!(
            "Tikhonov anchor has {} entries for {} parameters",
            anchor.len(),
            m.len()
        )));
    }
    let d = DVector::from_iterator(m.len(), m.iter().zip(anchor).map(|(a, b)| a - b));
    Ok(Penalty {
        value: lambda * d.norm_squared(),
        gradient: d * (2.0 * lambda),
        hessian: DMatrix::identity(m.len(), m.len()) * (2.0 * lambda),
    })
}

/// Symmetric direction of the packed entry `k`.
fn direction(k: usize) -> Matrix3<f64> {
    let (i, j) = TRIL_POSITIONS[k];
    let mut e = Matrix3::zeros();
    e[(i, j)] = 1.0;
    e[(j, i)] = 1.0;
    e
}

/// `-w Σᵢ log det Bᵢ` over the packed shape entries of every ellipsoid.
/// Gradient and Hessian are laid out like the flattened parameter vector.
pub fn logdet_barrier(params: &ParameterVector, weight: f64) -> Result<Penalty> {
    if params.kind() != BasisKind::Ellipsoidal {
        return Err(PalsError::UnsupportedKind(params.kind()));
    }
    let n = params.n_params();
    let mut value = 0.0;
    let mut gradient = DVector::zeros(n);
    let mut hessian = DMatrix::zeros(n, n);
    let dirs: Vec<Matrix3<f64>> = (0..6).map(direction).collect();
    for (i, basis) in params.bases().iter().enumerate() {
        let Basis::Ellipsoidal(e) = basis else { unreachable!("kind checked above") };
        let b = e.matrix();
        let det = b.determinant();
        let inv = match b.cholesky() {
            Some(c) if det > 0.0 => c.inverse(),
            _ => return Err(PalsError::BarrierViolation { index: i, det }),
        };
        value -= weight * det.ln();
        let col = i * 10 + 1;
        let inv_e: Vec<Matrix3<f64>> = dirs.iter().map(|d| inv * d).collect();
        for k in 0..6 {
            gradient[col + k] = -weight * inv_e[k].trace();
            for l in 0..6 {
                hessian[(col + k, col + l)] = weight * (inv_e[k] * inv_e[l]).trace();
            }
        }
    }
    Ok(Penalty { value, gradient, hessian })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{pack_symmetric, EllipsoidBasis};
    use crate::harness::fd::{central_jacobian, relative_error};
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_params(rng: &mut ChaCha8Rng, n: usize) -> ParameterVector {
        let bases = (0..n)
            .map(|_| {
                let a = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
                let b = a * a.transpose() + Matrix3::identity() * 0.5;
                Basis::Ellipsoidal(EllipsoidBasis::new(rng.random(), pack_symmetric(&b), Vector3::new(1.0, 2.0, 3.0)))
            })
            .collect();
        ParameterVector::new(BasisKind::Ellipsoidal, bases).unwrap()
    }

    #[test]
    fn tikhonov_contract() {
        let m = [1.0, -2.0, 0.5];
        let p = iterated_tikhonov(&m, &m, 0.3).unwrap();
        assert_eq!(p.value, 0.0);
        assert!(p.gradient.iter().all(|&g| g == 0.0));
        assert_eq!(p.hessian, DMatrix::identity(3, 3) * 0.6);
        let q = iterated_tikhonov(&m, &[0.0; 3], 0.0).unwrap();
        assert_eq!(q.value, 0.0);
        assert!(q.gradient.iter().all(|&g| g == 0.0));
        assert!(iterated_tikhonov(&m, &[0.0; 2], 1.0).is_err());
        let r = iterated_tikhonov(&[1.0, 1.0], &[0.0, 0.0], 2.0).unwrap();
        assert_eq!(r.value, 4.0);
    }

    #[test]
    fn identity_shapes_have_zero_barrier() {
        let pv = ParameterVector::new(
            BasisKind::Ellipsoidal,
            vec![Basis::Ellipsoidal(EllipsoidBasis::ball(0.3, 1.0, Vector3::zeros())); 3],
        )
        .unwrap();
        assert_eq!(logdet_barrier(&pv, 1.0).unwrap().value, 0.0);
    }

    #[test]
    fn barrier_derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        for _ in 0..5 {
            let pv = random_params(&mut rng, 3);
            let p = logdet_barrier(&pv, 0.7).unwrap();
            let x0 = pv.flatten();
            let value = |x: &[f64]| Ok(vec![logdet_barrier(&pv.unflatten_like(x)?, 0.7)?.value]);
            let grad = |x: &[f64]| Ok(logdet_barrier(&pv.unflatten_like(x)?, 0.7)?.gradient.as_slice().to_vec());
            let g_fd = central_jacobian(&x0, value).unwrap();
            let h_fd = central_jacobian(&x0, grad).unwrap();
            assert!(relative_error(&DMatrix::from_row_slice(1, x0.len(), p.gradient.as_slice()), &g_fd) < 1e-6);
            assert!(relative_error(&p.hessian, &h_fd) < 1e-6);
        }
    }

    #[test]
    fn barrier_blows_up_near_singularity_and_rejects_indefinite() {
        let mk = |d: f64| {
            ParameterVector::new(
                BasisKind::Ellipsoidal,
                vec![Basis::Ellipsoidal(EllipsoidBasis::new(1.0, [1.0, 0.0, 0.0, 1.0, 0.0, d], Vector3::zeros()))],
            )
            .unwrap()
        };
        let a = logdet_barrier(&mk(1e-3), 1.0).unwrap().value;
        let b = logdet_barrier(&mk(1e-9), 1.0).unwrap().value;
        assert!(b > a && b > 20.0);
        assert!(matches!(logdet_barrier(&mk(-1e-3), 1.0), Err(PalsError::BarrierViolation { index: 0, .. })));
        assert!(logdet_barrier(&ParameterVector::empty(BasisKind::Spherical), 1.0).is_err());
    }
}
