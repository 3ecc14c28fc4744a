//! Rigid acquisition transforms and the analytic rotation of PaLS parameters.
//!
//! An experiment's pose is `T(x) = Q(θ,φ)(x - x_mid) + b + x_mid`. Rotating
//! the object is done on the parameters: centers move with `T`, ellipsoid
//! shape matrices become `Q B Qᵀ`, spherical radii are untouched. The
//! Jacobians of that map with respect to both the basis parameters and the
//! acquisition parameters `(θ, φ, b)` are what lets the solver estimate the
//! calibration alongside the shape.

use nalgebra::{DMatrix, Matrix3, SMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{PalsError, Result};
use crate::field::{
    duplication_matrix, pack_symmetric, tril_select, vec9, Basis, BasisKind, EllipsoidBasis, ParameterVector,
    ScalarField, SphericalBasis, TRIL_INDICES,
};

/// Number of acquisition parameters per experiment: `θ, φ, b₁, b₂, b₃`.
pub const ACQ_PARAMS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AcquisitionParams {
    /// Azimuth (radians).
    pub theta: f64,
    /// Polar angle (radians).
    pub phi: f64,
    /// Translation in domain units.
    pub b: [f64; 3],
}

impl AcquisitionParams {
    pub fn new(theta: f64, phi: f64, b: Vector3<f64>) -> Self {
        AcquisitionParams { theta, phi, b: b.into() }
    }

    pub fn translation(&self) -> Vector3<f64> {
        Vector3::from(self.b)
    }

    pub fn to_array(&self) -> [f64; ACQ_PARAMS] {
        [self.theta, self.phi, self.b[0], self.b[1], self.b[2]]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        AcquisitionParams { theta: v[0], phi: v[1], b: [v[2], v[3], v[4]] }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// Direction, in object coordinates, that the experiment's third axis looks along.
    pub fn view_direction(&self) -> Vector3<f64> {
        rotation_matrix(self.theta, self.phi).transpose() * Vector3::z()
    }
}

/// `Q(θ, φ) = R_y(φ) R_z(θ)`: spin by the azimuth about the third axis, then tilt by the polar angle.
pub fn rotation_matrix(theta: f64, phi: f64) -> Matrix3<f64> {
    r_y(phi) * r_z(theta)
}

/// `(∂Q/∂θ, ∂Q/∂φ)`.
pub fn rotation_matrix_derivs(theta: f64, phi: f64) -> (Matrix3<f64>, Matrix3<f64>) {
    (r_y(phi) * r_z_prime(theta), r_y_prime(phi) * r_z(theta))
}

fn r_z(t: f64) -> Matrix3<f64> {
    let (s, c) = t.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn r_z_prime(t: f64) -> Matrix3<f64> {
    let (s, c) = t.sin_cos();
    Matrix3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0)
}

fn r_y(t: f64) -> Matrix3<f64> {
    let (s, c) = t.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn r_y_prime(t: f64) -> Matrix3<f64> {
    let (s, c) = t.sin_cos();
    Matrix3::new(-s, 0.0, c, 0.0, 0.0, 0.0, -c, 0.0, -s)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub acq: AcquisitionParams,
    pub x_mid: Vector3<f64>,
    q: Matrix3<f64>,
}

impl RigidTransform {
    pub fn new(acq: AcquisitionParams, x_mid: Vector3<f64>) -> Self {
        RigidTransform { acq, x_mid, q: rotation_matrix(acq.theta, acq.phi) }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.q
    }

    /// `T(x) = Q(x - x_mid) + b + x_mid`.
    pub fn apply(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.q * (x - self.x_mid) + self.acq.translation() + self.x_mid
    }

    /// `T⁻¹(x) = Qᵀ(x - x_mid - b) + x_mid`.
    pub fn inverse(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.q.transpose() * (x - self.x_mid - self.acq.translation()) + self.x_mid
    }
}

pub fn transform_apply(t: &RigidTransform, x: &Vector3<f64>) -> Vector3<f64> {
    t.apply(x)
}

pub fn transform_inverse(t: &RigidTransform, x: &Vector3<f64>) -> Vector3<f64> {
    t.inverse(x)
}

/// PaLS parameters plus one acquisition block per experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedParameters {
    pub pals: ParameterVector,
    pub acq_list: Vec<AcquisitionParams>,
}

impl ExtendedParameters {
    pub fn new(pals: ParameterVector, acq_list: Vec<AcquisitionParams>) -> Self {
        ExtendedParameters { pals, acq_list }
    }

    pub fn n_params(&self) -> usize {
        self.pals.n_params() + ACQ_PARAMS * self.acq_list.len()
    }

    /// Column of the first acquisition parameter of experiment `j`.
    pub fn acq_offset(&self, j: usize) -> usize {
        self.pals.n_params() + ACQ_PARAMS * j
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.pals.flatten();
        for a in &self.acq_list {
            v.extend_from_slice(&a.to_array());
        }
        v
    }

    /// Same layout as `self` with new values.
    pub fn unflatten_like(&self, values: &[f64]) -> Result<Self> {
        if values.len() != self.n_params() {
            return Err(PalsError::Contract(format!(
                "expected {} extended parameters, got {}",
                self.n_params(),
                values.len()
            )));
        }
        let np = self.pals.n_params();
        let pals = self.pals.unflatten_like(&values[..np])?;
        let acq_list = values[np..].chunks_exact(ACQ_PARAMS).map(AcquisitionParams::from_slice).collect();
        Ok(ExtendedParameters { pals, acq_list })
    }

    pub fn transform(&self, j: usize, x_mid: Vector3<f64>) -> Result<RigidTransform> {
        let acq = self
            .acq_list
            .get(j)
            .ok_or_else(|| PalsError::Contract(format!("experiment {j} out of range ({} known)", self.acq_list.len())))?;
        Ok(RigidTransform::new(*acq, x_mid))
    }
}

fn check_rotatable(kind: BasisKind) -> Result<()> {
    match kind {
        BasisKind::Cholesky => Err(PalsError::UnsupportedKind(kind)),
        _ => Ok(()),
    }
}

fn rotate_basis(basis: &Basis, t: &RigidTransform) -> Result<Basis> {
    match basis {
        Basis::Spherical(b) => Ok(Basis::Spherical(SphericalBasis { alpha: b.alpha, beta: b.beta, xi: t.apply(&b.xi) })),
        Basis::Ellipsoidal(b) => {
            let q = t.rotation();
            let rotated = q * b.matrix() * q.transpose();
            Ok(Basis::Ellipsoidal(EllipsoidBasis { alpha: b.alpha, b_tril: pack_symmetric(&rotated), xi: t.apply(&b.xi) }))
        }
        Basis::Cholesky(_) => Err(PalsError::UnsupportedKind(BasisKind::Cholesky)),
    }
}

/// Parameters of the object as seen by an experiment with pose `acq`.
pub fn rotate_params(params: &ParameterVector, acq: &AcquisitionParams, x_mid: &Vector3<f64>) -> Result<ParameterVector> {
    check_rotatable(params.kind())?;
    let t = RigidTransform::new(*acq, *x_mid);
    let bases = params.bases().iter().map(|b| rotate_basis(b, &t)).collect::<Result<Vec<_>>>()?;
    Ok(ParameterVector::new(params.kind(), bases)?.with_eps_norm(params.eps_norm).with_bias(params.bias))
}

/// Per-experiment pieces of the rotation Jacobian that do not depend on the basis.
#[derive(Debug, Clone)]
pub(crate) struct RotationJacobian {
    kind: BasisKind,
    q: Matrix3<f64>,
    q_theta: Matrix3<f64>,
    q_phi: Matrix3<f64>,
    x_mid: Vector3<f64>,
    /// `tril((Q⊗Q)P)`, ellipsoids only.
    shape_block: SMatrix<f64, 6, 6>,
}

impl RotationJacobian {
    pub(crate) fn new(kind: BasisKind, acq: &AcquisitionParams, x_mid: &Vector3<f64>) -> Result<Self> {
        check_rotatable(kind)?;
        let q = rotation_matrix(acq.theta, acq.phi);
        let (q_theta, q_phi) = rotation_matrix_derivs(acq.theta, acq.phi);
        let shape_block = if kind == BasisKind::Ellipsoidal {
            let qq = q.kronecker(&q);
            let full = qq * duplication_matrix();
            SMatrix::<f64, 6, 6>::from_fn(|r, c| full[(TRIL_INDICES[r], c)])
        } else {
            SMatrix::zeros()
        };
        Ok(RotationJacobian { kind, q, q_theta, q_phi, x_mid: *x_mid, shape_block })
    }

    /// `∂rot(basis)/∂basis`, `nb × nb` row-major.
    pub(crate) fn params_block(&self) -> DMatrix<f64> {
        let nb = self.kind.n_params();
        let mut m = DMatrix::zeros(nb, nb);
        m[(0, 0)] = 1.0;
        let c = self.kind.center_offset();
        match self.kind {
            BasisKind::Spherical => m[(1, 1)] = 1.0,
            _ => {
                for r in 0..6 {
                    for k in 0..6 {
                        m[(1 + r, 1 + k)] = self.shape_block[(r, k)];
                    }
                }
            }
        }
        for r in 0..3 {
            for k in 0..3 {
                m[(c + r, c + k)] = self.q[(r, k)];
            }
        }
        m
    }

    /// `∂rot(basis)/∂(θ, φ, b)`, `nb × 5`.
    pub(crate) fn acq_block(&self, basis: &Basis) -> DMatrix<f64> {
        let nb = self.kind.n_params();
        let c = self.kind.center_offset();
        let mut m = DMatrix::zeros(nb, ACQ_PARAMS);
        let d = basis.center() - self.x_mid;
        let z_theta = self.q_theta * d;
        let z_phi = self.q_phi * d;
        for r in 0..3 {
            m[(c + r, 0)] = z_theta[r];
            m[(c + r, 1)] = z_phi[r];
            m[(c + r, 2 + r)] = 1.0;
        }
        if let Basis::Ellipsoidal(e) = basis {
            let b = e.matrix();
            let t_theta = shape_rate(&self.q, &self.q_theta, &b);
            let t_phi = shape_rate(&self.q, &self.q_phi, &b);
            for k in 0..6 {
                m[(1 + k, 0)] = t_theta[k];
                m[(1 + k, 1)] = t_phi[k];
            }
        }
        m
    }
}

/// `tril(Q B Q'ᵀ + Q' B Qᵀ)`.
fn shape_rate(q: &Matrix3<f64>, dq: &Matrix3<f64>, b: &Matrix3<f64>) -> [f64; 6] {
    let m = q * b * dq.transpose() + dq * b * q.transpose();
    tril_select(&vec9(&m))
}

/// Dense `∂rot/∂(basis)` for one basis: `5×5` spherical, `10×10` ellipsoidal.
pub fn rot_jacobian_params(basis: &Basis, acq: &AcquisitionParams, x_mid: &Vector3<f64>) -> Result<DMatrix<f64>> {
    Ok(RotationJacobian::new(basis.kind(), acq, x_mid)?.params_block())
}

/// Dense `∂rot/∂(basis, θ, φ, b)`: `5×10` spherical, `10×15` ellipsoidal.
pub fn rot_jacobian_acq(basis: &Basis, acq: &AcquisitionParams, x_mid: &Vector3<f64>) -> Result<DMatrix<f64>> {
    let rj = RotationJacobian::new(basis.kind(), acq, x_mid)?;
    let p = rj.params_block();
    let a = rj.acq_block(basis);
    let nb = p.nrows();
    let mut m = DMatrix::zeros(nb, nb + ACQ_PARAMS);
    m.view_mut((0, 0), (nb, nb)).copy_from(&p);
    m.view_mut((0, nb), (nb, ACQ_PARAMS)).copy_from(&a);
    Ok(m)
}

/// Backward warp: output at `x` is the trilinear sample of `field` at `T⁻¹(x)`.
pub fn warp_field(field: &ScalarField, t: &RigidTransform) -> ScalarField {
    let grid = field.grid;
    let values = (0..grid.len()).map(|idx| field.sample(&t.inverse(&grid.center_of(idx)))).collect();
    ScalarField { grid, values }
}
