//! The parametric level-set field `u(x, m) = σ(bias + Σᵢ αᵢ ψ(rᵢ(x)))` for
//! spherical, ellipsoidal and Cholesky-factor bases, with exact Jacobians.

mod basis;
mod eval;
mod grid;
mod kernels;
mod sparse;
mod symmetric;

pub use basis::{
    Basis, BasisKind, CholeskyBasis, EllipsoidBasis, ParameterVector, SphericalBasis, DEFAULT_EPS_NORM,
};
pub(crate) use eval::{eval_grid, eval_indexed, projected_blocks, NO_ROW};
pub use eval::{binarize, field_eval, field_eval_points, level_sums, FieldModel, ScalarField};
pub use grid::{GridSpec, DEFAULT_EXTENT};
pub use kernels::{
    heaviside_deriv, heaviside_eval, pseudo_norm, pseudo_norm_b, wendland_deriv, wendland_eval, HeavisideConfig,
    WendlandOrder,
};
pub use sparse::SparseJacobian;
pub use symmetric::{
    duplication_matrix, is_spd, pack_lower, pack_symmetric, tril_select, unpack_lower, unpack_symmetric, vec9,
    TRIL_INDICES, TRIL_POSITIONS,
};
