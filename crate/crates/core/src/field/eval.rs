use nalgebra::{DMatrix, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::basis::ParameterVector;
use super::grid::GridSpec;
use super::kernels::{HeavisideConfig, WendlandOrder};
use super::sparse::SparseJacobian;
use crate::error::{PalsError, Result};
use crate::forward::NeighborIndex;

/// Heaviside and Wendland choices shared by every evaluation of one model.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldModel {
    pub heaviside: HeavisideConfig,
    pub order: WendlandOrder,
}

/// Gridded field values, x-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(PalsError::Contract(format!(
                "field has {} values for a grid of {} voxels",
                values.len(),
                grid.len()
            )));
        }
        Ok(ScalarField { grid, values })
    }

    pub fn constant(grid: GridSpec, value: f64) -> Self {
        ScalarField { grid, values: vec![value; grid.len()] }
    }

    pub fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.grid.index(i, j, k)]
    }

    /// Sum of values times voxel volume.
    pub fn volume(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.voxel_volume()
    }

    /// Trilinear sample at a world point; samples outside the lattice read 0.
    pub fn sample(&self, x: &Vector3<f64>) -> f64 {
        let c = self.grid.continuous_index(x);
        let dims = self.grid.dims;
        let mut base = [0i64; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            if !c[a].is_finite() || c[a] <= -1.0 || c[a] >= dims[a] as f64 {
                return 0.0;
            }
            let f = c[a].floor();
            base[a] = f as i64;
            frac[a] = c[a] - f;
        }
        let mut acc = 0.0;
        for corner in 0..8 {
            let mut w = 1.0;
            let mut idx = [0usize; 3];
            let mut inside = true;
            for a in 0..3 {
                let bit = (corner >> a) & 1;
                let p = base[a] + bit as i64;
                w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
                if p < 0 || p >= dims[a] as i64 {
                    inside = false;
                } else {
                    idx[a] = p as usize;
                }
            }
            if inside && w != 0.0 {
                acc += w * self.values[self.grid.index(idx[0], idx[1], idx[2])];
            }
        }
        acc
    }
}

/// Internal result of one field evaluation.
pub(crate) struct FieldEval {
    pub values: Vec<f64>,
    pub sums: Vec<f64>,
    pub jacobian: Option<SparseJacobian>,
}

/// `u(x, m)` at every voxel center of `grid`, optionally with `∂u/∂m`.
pub fn field_eval(
    params: &ParameterVector,
    grid: &GridSpec,
    cfg: &HeavisideConfig,
    order: WendlandOrder,
    want_jacobian: bool,
) -> Result<(ScalarField, Option<SparseJacobian>)> {
    let model = FieldModel { heaviside: *cfg, order };
    let ev = eval_grid(params, grid, &model, want_jacobian)?;
    Ok((ScalarField { grid: *grid, values: ev.values }, ev.jacobian))
}

/// `u(x, m)` at arbitrary points.
pub fn field_eval_points(
    params: &ParameterVector,
    points: &[Vector3<f64>],
    cfg: &HeavisideConfig,
    order: WendlandOrder,
    want_jacobian: bool,
) -> Result<(Vec<f64>, Option<SparseJacobian>)> {
    if points.iter().any(|p| !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite())) {
        return Err(PalsError::Domain("sample points must have finite coordinates".into()));
    }
    let index = NeighborIndex::new(points.to_vec());
    let model = FieldModel { heaviside: *cfg, order };
    let ev = eval_indexed(params, &index, &model, want_jacobian)?;
    Ok((ev.values, ev.jacobian))
}

/// Pre-Heaviside sums `bias + Σ αψ(r)` on the grid.
pub fn level_sums(params: &ParameterVector, grid: &GridSpec, order: WendlandOrder) -> Result<Vec<f64>> {
    params.validate()?;
    Ok(grid_sums(params, grid, order))
}

fn grid_sums(params: &ParameterVector, grid: &GridSpec, order: WendlandOrder) -> Vec<f64> {
    let mut sums = vec![params.bias; grid.len()];
    for basis in params.bases() {
        let alpha = basis.alpha();
        if alpha == 0.0 {
            continue;
        }
        for_each_voxel_in_support(grid, basis, |idx, x| {
            let r = basis.radius(x, params.eps_norm);
            if r < 1.0 {
                sums[idx] += alpha * order.value(r);
            }
        });
    }
    sums
}

fn for_each_voxel_in_support(grid: &GridSpec, basis: &super::Basis, mut f: impl FnMut(usize, &Vector3<f64>)) {
    let c = basis.center();
    let h = basis.support_half_extents();
    let Some([(i0, i1), (j0, j1), (k0, k1)]) = grid.index_range(&(c - h), &(c + h), 1) else {
        return;
    };
    for k in k0..=k1 {
        for j in j0..=j1 {
            for i in i0..=i1 {
                let x = grid.center(i, j, k);
                f(grid.index(i, j, k), &x);
            }
        }
    }
}

pub(crate) fn eval_grid(
    params: &ParameterVector,
    grid: &GridSpec,
    model: &FieldModel,
    want_jacobian: bool,
) -> Result<FieldEval> {
    params.validate()?;
    let sums = grid_sums(params, grid, model.order);
    let values = sums.iter().map(|&s| model.heaviside.value(s).clamp(0.0, 1.0)).collect();
    let jacobian = if want_jacobian {
        let nb = params.kind().n_params();
        let per_basis: Vec<Vec<(usize, usize, f64)>> = params
            .bases()
            .par_iter()
            .enumerate()
            .map(|(i, basis)| {
                let mut out = Vec::new();
                for_each_voxel_in_support(grid, basis, |idx, x| {
                    let slope = model.heaviside.slope(sums[idx]);
                    if slope == 0.0 {
                        return;
                    }
                    push_basis_entries(&mut out, idx, i * nb, nb, basis, x, params.eps_norm, model.order, slope);
                });
                out
            })
            .collect();
        let triplets = per_basis.into_iter().flatten().collect();
        Some(SparseJacobian::from_triplets(grid.len(), params.n_params(), triplets)?)
    } else {
        None
    };
    Ok(FieldEval { values, sums, jacobian })
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn push_basis_entries(
    out: &mut Vec<(usize, usize, f64)>,
    row: usize,
    col0: usize,
    nb: usize,
    basis: &super::Basis,
    x: &Vector3<f64>,
    eps_norm: f64,
    order: WendlandOrder,
    slope: f64,
) {
    let lr = basis.local_radius(x, eps_norm);
    if lr.r >= 1.0 {
        return;
    }
    out.push((row, col0, slope * order.value(lr.r)));
    let g = slope * basis.alpha() * order.slope(lr.r);
    for k in 0..nb - 1 {
        out.push((row, col0 + 1 + k, g * lr.dr[k]));
    }
}

/// Marks a voxel that does not contribute to any projected row.
pub(crate) const NO_ROW: usize = usize::MAX;

/// Per-basis blocks of `W ∂u/∂m` for a projection `W` with at most one
/// nonzero per voxel: voxel `v` adds `weights[v]` times its Jacobian row to
/// row `rows[v]`. Each block is `n_rows × n_params(kind)`.
pub(crate) fn projected_blocks(
    params: &ParameterVector,
    grid: &GridSpec,
    model: &FieldModel,
    sums: &[f64],
    rows: &[usize],
    weights: &[f64],
    n_rows: usize,
) -> Vec<DMatrix<f64>> {
    let nb = params.kind().n_params();
    params
        .bases()
        .par_iter()
        .map(|basis| {
            let mut block = DMatrix::zeros(n_rows, nb);
            let alpha = basis.alpha();
            for_each_voxel_in_support(grid, basis, |idx, x| {
                let row = rows[idx];
                if row == NO_ROW || weights[idx] == 0.0 {
                    return;
                }
                let slope = model.heaviside.slope(sums[idx]);
                if slope == 0.0 {
                    return;
                }
                let lr = basis.local_radius(x, params.eps_norm);
                if lr.r >= 1.0 {
                    return;
                }
                let w = weights[idx] * slope;
                block[(row, 0)] += w * model.order.value(lr.r);
                let g = w * alpha * model.order.slope(lr.r);
                for k in 0..nb - 1 {
                    block[(row, 1 + k)] += g * lr.dr[k];
                }
            });
            block
        })
        .collect()
}

/// Field evaluation at the points of a prebuilt index; each basis only visits
/// the points inside its bounding ball.
pub(crate) fn eval_indexed(
    params: &ParameterVector,
    index: &NeighborIndex,
    model: &FieldModel,
    want_jacobian: bool,
) -> Result<FieldEval> {
    params.validate()?;
    let points = index.points();
    let neighborhoods: Vec<Vec<usize>> =
        params.bases().par_iter().map(|b| index.query_ball(&b.center(), b.support_radius())).collect();
    let mut sums = vec![params.bias; points.len()];
    for (basis, hood) in params.bases().iter().zip(&neighborhoods) {
        let alpha = basis.alpha();
        if alpha == 0.0 {
            continue;
        }
        for &p in hood {
            let r = basis.radius(&points[p], params.eps_norm);
            if r < 1.0 {
                sums[p] += alpha * model.order.value(r);
            }
        }
    }
    let values = sums.iter().map(|&s| model.heaviside.value(s).clamp(0.0, 1.0)).collect();
    let jacobian = if want_jacobian {
        let nb = params.kind().n_params();
        let mut triplets = Vec::new();
        for (i, (basis, hood)) in params.bases().iter().zip(&neighborhoods).enumerate() {
            for &p in hood {
                let slope = model.heaviside.slope(sums[p]);
                if slope == 0.0 {
                    continue;
                }
                push_basis_entries(&mut triplets, p, i * nb, nb, basis, &points[p], params.eps_norm, model.order, slope);
            }
        }
        Some(SparseJacobian::from_triplets(points.len(), params.n_params(), triplets)?)
    } else {
        None
    };
    Ok(FieldEval { values, sums, jacobian })
}

/// 1 where `u > threshold`, else 0.
pub fn binarize(field: &ScalarField, threshold: f64) -> Result<ScalarField> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(PalsError::Config(format!("binarization threshold must lie in (0, 1), got {threshold}")));
    }
    Ok(ScalarField {
        grid: field.grid,
        values: field.values.iter().map(|&u| if u > threshold { 1.0 } else { 0.0 }).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{Basis, BasisKind, CholeskyBasis, EllipsoidBasis, SphericalBasis};

    fn grid() -> GridSpec {
        GridSpec::cube(16, 5.0).unwrap()
    }

    #[test]
    fn empty_parameters_give_half_everywhere() {
        let pv = ParameterVector::empty(BasisKind::Ellipsoidal);
        let (u, j) = field_eval(&pv, &grid(), &HeavisideConfig::default(), WendlandOrder::Psi1, true).unwrap();
        assert!(u.values.iter().all(|&v| v == 0.5));
        assert_eq!(j.unwrap().nnz(), 0);
    }

    #[test]
    fn single_sphere_at_its_center_saturates() {
        let xi = Vector3::new(2.5, 2.5, 2.5);
        let pv = ParameterVector::new(
            BasisKind::Spherical,
            vec![Basis::Spherical(SphericalBasis::new(1.0, 1.0, xi).unwrap())],
        )
        .unwrap();
        let cfg = HeavisideConfig::default();
        let (u, _) = field_eval_points(&pv, &[xi], &cfg, WendlandOrder::Psi1, false).unwrap();
        // psi1(0.01) = 0.99^4 * 1.04 = 0.99940... > delta + eps
        let expected = cfg.value(WendlandOrder::Psi1.value(0.01));
        assert_eq!(u[0], expected);
        assert_eq!(u[0], 1.0);
    }

    #[test]
    fn identity_ellipsoid_matches_unit_sphere() {
        let g = grid();
        let xi = Vector3::new(2.3, 2.6, 2.4);
        let s = ParameterVector::new(
            BasisKind::Spherical,
            vec![Basis::Spherical(SphericalBasis::new(0.13, 1.0, xi).unwrap())],
        )
        .unwrap();
        let e = ParameterVector::new(BasisKind::Ellipsoidal, vec![Basis::Ellipsoidal(EllipsoidBasis::ball(0.13, 1.0, xi))])
            .unwrap();
        let cfg = HeavisideConfig::default();
        let (us, _) = field_eval(&s, &g, &cfg, WendlandOrder::Psi1, false).unwrap();
        let (ue, _) = field_eval(&e, &g, &cfg, WendlandOrder::Psi1, false).unwrap();
        for (a, b) in us.values.iter().zip(&ue.values) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn voxels_outside_all_supports_have_empty_rows() {
        let g = grid();
        let xi = Vector3::new(1.0, 1.0, 1.0);
        let pv = ParameterVector::new(BasisKind::Ellipsoidal, vec![Basis::Ellipsoidal(EllipsoidBasis::ball(0.05, 0.8, xi))])
            .unwrap();
        let (u, j) = field_eval(&pv, &g, &HeavisideConfig::default(), WendlandOrder::Psi1, true).unwrap();
        let j = j.unwrap();
        for idx in 0..g.len() {
            let x = g.center_of(idx);
            if (x - xi).norm() > 0.8 {
                assert_eq!(u.values[idx], 0.5);
                assert_eq!(j.row(idx).0.len(), 0);
            }
        }
        assert!(j.nnz() > 0);
    }

    #[test]
    fn points_at_voxel_centers_reproduce_grid_bitwise() {
        let g = GridSpec::cube(12, 5.0).unwrap();
        let bases = vec![
            Basis::Cholesky(CholeskyBasis::new(0.3, [1.2, 0.1, -0.2, 0.9, 0.05, 1.1], Vector3::new(2.4, 2.5, 2.6)).unwrap()),
            Basis::Cholesky(CholeskyBasis::new(-0.1, [2.0, 0.0, 0.3, 1.5, 0.0, 2.2], Vector3::new(3.0, 2.2, 2.0)).unwrap()),
        ];
        let pv = ParameterVector::new(BasisKind::Cholesky, bases).unwrap().with_bias(-0.05);
        let cfg = HeavisideConfig::default();
        let (u, jg) = field_eval(&pv, &g, &cfg, WendlandOrder::Psi1, true).unwrap();
        let (up, jp) = field_eval_points(&pv, &g.centers(), &cfg, WendlandOrder::Psi1, true).unwrap();
        assert_eq!(u.values, up);
        assert_eq!(jg.unwrap(), jp.unwrap());
    }

    #[test]
    fn far_point_reads_half() {
        let pv = ParameterVector::new(
            BasisKind::Spherical,
            vec![Basis::Spherical(SphericalBasis::new(1.0, 2.0, Vector3::zeros()).unwrap())],
        )
        .unwrap();
        let (u, _) =
            field_eval_points(&pv, &[Vector3::new(10.0, 0.0, 0.0)], &HeavisideConfig::default(), WendlandOrder::Psi1, false)
                .unwrap();
        assert_eq!(u, vec![0.5]);
    }

    #[test]
    fn singular_ellipsoid_is_rejected() {
        let pv = ParameterVector::new(
            BasisKind::Ellipsoidal,
            vec![Basis::Ellipsoidal(EllipsoidBasis::new(1.0, [1.0, 2.0, 0.0, 1.0, 0.0, 1.0], Vector3::zeros()))],
        )
        .unwrap();
        let err = field_eval(&pv, &grid(), &HeavisideConfig::default(), WendlandOrder::Psi1, false).unwrap_err();
        assert!(matches!(err, PalsError::SingularBasis { .. }));
    }

    #[test]
    fn binarize_is_strict() {
        let g = GridSpec::cube(2, 1.0).unwrap();
        let f = ScalarField::new(g, vec![0.5, 0.7, 0.7000001, 1.0, 0.0, 0.69, 0.71, 0.3]).unwrap();
        let b = binarize(&f, 0.7).unwrap();
        assert_eq!(b.values, vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0]);
        assert!(binarize(&ScalarField::constant(g, 0.5), 0.7).unwrap().values.iter().all(|&v| v == 0.0));
        assert!(binarize(&ScalarField::constant(g, 1.0), 0.7).unwrap().values.iter().all(|&v| v == 1.0));
        assert!(binarize(&f, 1.0).is_err());
        assert!(binarize(&f, 0.0).is_err());
    }

    #[test]
    fn trilinear_sample_reproduces_centers_and_zero_pads() {
        let g = GridSpec::cube(4, 4.0).unwrap();
        let values: Vec<f64> = (0..g.len()).map(|i| i as f64).collect();
        let f = ScalarField::new(g, values).unwrap();
        for idx in 0..g.len() {
            assert!((f.sample(&g.center_of(idx)) - idx as f64).abs() < 1e-9);
        }
        assert_eq!(f.sample(&Vector3::new(-3.0, 1.0, 1.0)), 0.0);
        // halfway between the last center and the padded zero
        let edge = f.sample(&Vector3::new(4.0, 0.5, 0.5));
        assert!((edge - 1.5).abs() < 1e-12);
    }
}
