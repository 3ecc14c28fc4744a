use std::fmt;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::symmetric::{is_spd, unpack_lower, unpack_symmetric, TRIL_POSITIONS};
use crate::error::{PalsError, Result};

/// Default floor inside the pseudo-norm `sqrt(‖v‖² + eps)`.
pub const DEFAULT_EPS_NORM: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisKind {
    Spherical,
    Ellipsoidal,
    Cholesky,
}

impl BasisKind {
    /// Number of scalar parameters per basis function.
    pub fn n_params(self) -> usize {
        match self {
            BasisKind::Spherical => 5,
            BasisKind::Ellipsoidal | BasisKind::Cholesky => 10,
        }
    }

    /// Offset of the center inside one basis block.
    pub fn center_offset(self) -> usize {
        self.n_params() - 3
    }
}

impl fmt::Display for BasisKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BasisKind::Spherical => "spherical",
            BasisKind::Ellipsoidal => "ellipsoidal",
            BasisKind::Cholesky => "cholesky",
        })
    }
}

impl std::str::FromStr for BasisKind {
    type Err = PalsError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spherical" => Ok(BasisKind::Spherical),
            "ellipsoidal" => Ok(BasisKind::Ellipsoidal),
            "cholesky" => Ok(BasisKind::Cholesky),
            other => Err(PalsError::Config(format!("unknown basis kind '{other}'"))),
        }
    }
}

/// Sphere of radius `1/beta` around `xi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalBasis {
    pub alpha: f64,
    pub beta: f64,
    pub xi: Vector3<f64>,
}

/// Ellipsoid `{x : (x-xi)ᵀB(x-xi) < 1}` with `B` packed as `B¹..B⁶`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipsoidBasis {
    pub alpha: f64,
    pub b_tril: [f64; 6],
    pub xi: Vector3<f64>,
}

/// Ellipsoid with shape matrix `LLᵀ`, `L` lower triangular.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CholeskyBasis {
    pub alpha: f64,
    pub l_tril: [f64; 6],
    pub xi: Vector3<f64>,
}

impl SphericalBasis {
    pub fn new(alpha: f64, beta: f64, xi: Vector3<f64>) -> Result<Self> {
        let b = SphericalBasis { alpha, beta, xi };
        b.check(0)?;
        Ok(b)
    }

    fn check(&self, index: usize) -> Result<()> {
        if !(self.beta > 0.0) {
            return Err(PalsError::SingularBasis { index, reason: format!("beta = {} is not positive", self.beta) });
        }
        Ok(())
    }
}

impl EllipsoidBasis {
    pub fn new(alpha: f64, b_tril: [f64; 6], xi: Vector3<f64>) -> Self {
        EllipsoidBasis { alpha, b_tril, xi }
    }

    /// `B = I / radius²`.
    pub fn ball(alpha: f64, radius: f64, xi: Vector3<f64>) -> Self {
        let d = 1.0 / (radius * radius);
        EllipsoidBasis { alpha, b_tril: [d, 0.0, 0.0, d, 0.0, d], xi }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        unpack_symmetric(&self.b_tril)
    }

    fn check(&self, index: usize) -> Result<()> {
        let b = self.matrix();
        if !is_spd(&b) {
            return Err(PalsError::SingularBasis {
                index,
                reason: format!("shape matrix is not positive definite (det = {:e})", b.determinant()),
            });
        }
        Ok(())
    }
}

impl CholeskyBasis {
    pub fn new(alpha: f64, l_tril: [f64; 6], xi: Vector3<f64>) -> Result<Self> {
        let b = CholeskyBasis { alpha, l_tril, xi };
        b.check(0)?;
        Ok(b)
    }

    pub fn ball(alpha: f64, radius: f64, xi: Vector3<f64>) -> Self {
        let d = 1.0 / radius;
        CholeskyBasis { alpha, l_tril: [d, 0.0, 0.0, d, 0.0, d], xi }
    }

    pub fn factor(&self) -> Matrix3<f64> {
        unpack_lower(&self.l_tril)
    }

    /// `LLᵀ`, the equivalent ellipsoid shape matrix.
    pub fn shape_matrix(&self) -> Matrix3<f64> {
        let l = self.factor();
        l * l.transpose()
    }

    fn check(&self, index: usize) -> Result<()> {
        let diag = [self.l_tril[0], self.l_tril[3], self.l_tril[5]];
        if diag.iter().any(|d| !(*d > 0.0)) {
            return Err(PalsError::SingularBasis {
                index,
                reason: format!("Cholesky diagonal {diag:?} is not strictly positive"),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Basis {
    Spherical(SphericalBasis),
    Ellipsoidal(EllipsoidBasis),
    Cholesky(CholeskyBasis),
}

/// Evaluation of one basis at one point: the pseudo-norm radius and its
/// gradient with respect to the basis' shape and center parameters
/// (everything except `alpha`, in block order).
#[derive(Debug, Clone, Copy)]
pub(crate) struct LocalRadius {
    pub r: f64,
    pub dr: [f64; 9],
}

impl Basis {
    pub fn kind(&self) -> BasisKind {
        match self {
            Basis::Spherical(_) => BasisKind::Spherical,
            Basis::Ellipsoidal(_) => BasisKind::Ellipsoidal,
            Basis::Cholesky(_) => BasisKind::Cholesky,
        }
    }

    pub fn alpha(&self) -> f64 {
        match self {
            Basis::Spherical(b) => b.alpha,
            Basis::Ellipsoidal(b) => b.alpha,
            Basis::Cholesky(b) => b.alpha,
        }
    }

    pub fn set_alpha(&mut self, alpha: f64) {
        match self {
            Basis::Spherical(b) => b.alpha = alpha,
            Basis::Ellipsoidal(b) => b.alpha = alpha,
            Basis::Cholesky(b) => b.alpha = alpha,
        }
    }

    pub fn center(&self) -> Vector3<f64> {
        match self {
            Basis::Spherical(b) => b.xi,
            Basis::Ellipsoidal(b) => b.xi,
            Basis::Cholesky(b) => b.xi,
        }
    }

    /// Fails with a singular-basis error if the basis cannot be evaluated.
    pub fn check(&self, index: usize) -> Result<()> {
        match self {
            Basis::Spherical(b) => b.check(index),
            Basis::Ellipsoidal(b) => b.check(index),
            Basis::Cholesky(b) => b.check(index),
        }
    }

    /// Shape matrix `M` with support `{z : zᵀMz < 1}`.
    pub fn shape_matrix(&self) -> Matrix3<f64> {
        match self {
            Basis::Spherical(b) => Matrix3::identity() * (b.beta * b.beta),
            Basis::Ellipsoidal(b) => b.matrix(),
            Basis::Cholesky(b) => b.shape_matrix(),
        }
    }

    /// Half extents of the axis-aligned box around the support; `sqrt((M⁻¹)_aa)`.
    pub fn support_half_extents(&self) -> Vector3<f64> {
        match self {
            Basis::Spherical(b) => Vector3::repeat(1.0 / b.beta),
            _ => {
                let inv = self.shape_matrix().try_inverse().unwrap_or_else(|| Matrix3::from_element(f64::INFINITY));
                Vector3::new(inv[(0, 0)].sqrt(), inv[(1, 1)].sqrt(), inv[(2, 2)].sqrt())
            }
        }
    }

    /// Radius of a ball centered at `xi` enclosing the support.
    pub fn support_radius(&self) -> f64 {
        match self {
            Basis::Spherical(b) => 1.0 / b.beta,
            _ => self.support_half_extents().norm(),
        }
    }

    pub(crate) fn flatten_into(&self, out: &mut Vec<f64>) {
        match self {
            Basis::Spherical(b) => out.extend_from_slice(&[b.alpha, b.beta, b.xi.x, b.xi.y, b.xi.z]),
            Basis::Ellipsoidal(b) => {
                out.push(b.alpha);
                out.extend_from_slice(&b.b_tril);
                out.extend_from_slice(b.xi.as_slice());
            }
            Basis::Cholesky(b) => {
                out.push(b.alpha);
                out.extend_from_slice(&b.l_tril);
                out.extend_from_slice(b.xi.as_slice());
            }
        }
    }

    pub(crate) fn from_slice(kind: BasisKind, v: &[f64]) -> Basis {
        let xi = |o: usize| Vector3::new(v[o], v[o + 1], v[o + 2]);
        let six = || {
            let mut a = [0.0; 6];
            a.copy_from_slice(&v[1..7]);
            a
        };
        match kind {
            BasisKind::Spherical => Basis::Spherical(SphericalBasis { alpha: v[0], beta: v[1], xi: xi(2) }),
            BasisKind::Ellipsoidal => Basis::Ellipsoidal(EllipsoidBasis { alpha: v[0], b_tril: six(), xi: xi(7) }),
            BasisKind::Cholesky => Basis::Cholesky(CholeskyBasis { alpha: v[0], l_tril: six(), xi: xi(7) }),
        }
    }

    /// Pseudo-norm radius at `x` and its gradient w.r.t. the non-`alpha` parameters.
    #[inline]
    pub(crate) fn local_radius(&self, x: &Vector3<f64>, eps_norm: f64) -> LocalRadius {
        let mut dr = [0.0; 9];
        match self {
            Basis::Spherical(b) => {
                let z = x - b.xi;
                let zz = z.norm_squared();
                let r = (b.beta * b.beta * zz + eps_norm).sqrt();
                dr[0] = b.beta * zz / r;
                let g = -(b.beta * b.beta / r) * z;
                dr[1..4].copy_from_slice(g.as_slice());
                LocalRadius { r, dr }
            }
            Basis::Ellipsoidal(b) => {
                let z = x - b.xi;
                let bm = b.matrix();
                let bz = bm * z;
                let r = (z.dot(&bz).max(0.0) + eps_norm).sqrt();
                // d(zᵀBz)/dB^k is z_a z_b for off-diagonal entries counted twice
                for (k, &(i, j)) in TRIL_POSITIONS.iter().enumerate() {
                    let factor = if i == j { 0.5 } else { 1.0 };
                    dr[k] = factor * z[i] * z[j] / r;
                }
                let g = -bz / r;
                dr[6..9].copy_from_slice(g.as_slice());
                LocalRadius { r, dr }
            }
            Basis::Cholesky(b) => {
                let z = x - b.xi;
                let l = b.factor();
                let w = l.transpose() * z;
                let r = (w.norm_squared() + eps_norm).sqrt();
                for (k, &(i, j)) in TRIL_POSITIONS.iter().enumerate() {
                    dr[k] = z[i] * w[j] / r;
                }
                let g = -(l * w) / r;
                dr[6..9].copy_from_slice(g.as_slice());
                LocalRadius { r, dr }
            }
        }
    }

    /// Radius only; cheaper than [`Basis::local_radius`].
    #[inline]
    pub(crate) fn radius(&self, x: &Vector3<f64>, eps_norm: f64) -> f64 {
        match self {
            Basis::Spherical(b) => (b.beta * b.beta * (x - b.xi).norm_squared() + eps_norm).sqrt(),
            Basis::Ellipsoidal(b) => {
                let z = x - b.xi;
                (z.dot(&(b.matrix() * z)).max(0.0) + eps_norm).sqrt()
            }
            Basis::Cholesky(b) => {
                let z = x - b.xi;
                ((b.factor().transpose() * z).norm_squared() + eps_norm).sqrt()
            }
        }
    }
}

/// The PaLS parameter vector: an ordered list of same-kind bases.
///
/// `bias` is a fixed constant added to the RBF sum before the Heaviside; it
/// is not part of the optimized vector. With the default `bias = 0` an empty
/// list evaluates to `σ(0) = 0.5`; reconstructions use a negative bias so
/// that space not covered by any basis reads as empty.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    kind: BasisKind,
    bases: Vec<Basis>,
    pub eps_norm: f64,
    pub bias: f64,
}

impl ParameterVector {
    pub fn empty(kind: BasisKind) -> Self {
        ParameterVector { kind, bases: Vec::new(), eps_norm: DEFAULT_EPS_NORM, bias: 0.0 }
    }

    pub fn new(kind: BasisKind, bases: Vec<Basis>) -> Result<Self> {
        if let Some((i, b)) = bases.iter().enumerate().find(|(_, b)| b.kind() != kind) {
            return Err(PalsError::Contract(format!("basis {i} is {} in a {kind} parameter vector", b.kind())));
        }
        Ok(ParameterVector { kind, bases, eps_norm: DEFAULT_EPS_NORM, bias: 0.0 })
    }

    pub fn with_eps_norm(mut self, eps_norm: f64) -> Self {
        self.eps_norm = eps_norm;
        self
    }

    pub fn with_bias(mut self, bias: f64) -> Self {
        self.bias = bias;
        self
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn bases(&self) -> &[Basis] {
        &self.bases
    }

    pub fn len(&self) -> usize {
        self.bases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bases.is_empty()
    }

    pub fn push(&mut self, basis: Basis) -> Result<()> {
        if basis.kind() != self.kind {
            return Err(PalsError::Contract(format!("cannot push a {} basis into a {} vector", basis.kind(), self.kind)));
        }
        self.bases.push(basis);
        Ok(())
    }

    /// Number of scalar parameters, `n_params(kind) · n_RBF`.
    pub fn n_params(&self) -> usize {
        self.kind.n_params() * self.bases.len()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for b in &self.bases {
            b.flatten_into(&mut out);
        }
        out
    }

    /// Rebuilds a vector of the same kind, floor and bias from flat values.
    pub fn unflatten_like(&self, values: &[f64]) -> Result<Self> {
        Self::unflatten(self.kind, values, self.eps_norm, self.bias)
    }

    pub fn unflatten(kind: BasisKind, values: &[f64], eps_norm: f64, bias: f64) -> Result<Self> {
        let n = kind.n_params();
        if !values.len().is_multiple_of(n) {
            return Err(PalsError::Contract(format!(
                "flat length {} is not a multiple of {n} for {kind} bases",
                values.len()
            )));
        }
        let bases = values.chunks_exact(n).map(|c| Basis::from_slice(kind, c)).collect();
        Ok(ParameterVector { kind, bases, eps_norm, bias })
    }

    /// Checks every basis can be evaluated.
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_norm > 0.0) {
            return Err(PalsError::Domain(format!("eps_norm must be positive, got {}", self.eps_norm)));
        }
        for (i, b) in self.bases.iter().enumerate() {
            b.check(i)?;
        }
        Ok(())
    }
}
