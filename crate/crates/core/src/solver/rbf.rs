use nalgebra::Vector3;
use rand::Rng;

use super::config::RBFSchedule;
use crate::error::{PalsError, Result};
use crate::field::{
    Basis, BasisKind, CholeskyBasis, EllipsoidBasis, GridSpec, HeavisideConfig, ParameterVector, SphericalBasis,
};

/// A ball of the given radius in the requested parameterization.
pub fn ball_basis(kind: BasisKind, alpha: f64, radius: f64, center: Vector3<f64>) -> Basis {
    match kind {
        BasisKind::Spherical => Basis::Spherical(SphericalBasis { alpha, beta: 1.0 / radius, xi: center }),
        BasisKind::Ellipsoidal => Basis::Ellipsoidal(EllipsoidBasis::ball(alpha, radius, center)),
        BasisKind::Cholesky => Basis::Cholesky(CholeskyBasis::ball(alpha, radius, center)),
    }
}

/// `p0` unit-radius bases with small random coefficients, centered uniformly
/// in the central 20% cube of the grid.
pub fn initial_bases(
    kind: BasisKind,
    schedule: &RBFSchedule,
    grid: &GridSpec,
    eps_norm: f64,
    rng: &mut impl Rng,
) -> Result<ParameterVector> {
    let mid = grid.mid();
    let half = Vector3::from(grid.extent) * 0.1;
    let bases = (0..schedule.p0)
        .map(|_| {
            let c = Vector3::from_fn(|a, _| mid[a] + rng.random_range(-half[a]..=half[a]));
            ball_basis(kind, rng.random_range(0.05..=0.15), schedule.init_radius, c)
        })
        .collect();
    Ok(ParameterVector::new(kind, bases)?.with_eps_norm(eps_norm).with_bias(schedule.bias))
}

/// Appends up to `schedule.p` zero-coefficient bases at the voxels where
/// `s = |σ'(sum) ∇_u F|` is largest, keeping every new center at least
/// `min_spacing_cells` (Chebyshev) away from the others and from the centers
/// of the previous insertion batch (the last `p` bases past the initial `p0`).
/// Returns the augmented parameters and the chosen voxel indices.
pub fn add_rbfs(
    m: &ParameterVector,
    sums: &[f64],
    grad_u: &[f64],
    schedule: &RBFSchedule,
    grid: &GridSpec,
    heaviside: &HeavisideConfig,
) -> Result<(ParameterVector, Vec<usize>)> {
    if grad_u.len() != grid.len() || sums.len() != grid.len() {
        return Err(PalsError::Contract(format!(
            "add_rbfs needs one sum and one gradient entry per voxel ({}), got {} and {}",
            grid.len(),
            sums.len(),
            grad_u.len()
        )));
    }
    let mut candidates: Vec<(f64, usize)> = sums
        .iter()
        .zip(grad_u)
        .enumerate()
        .map(|(i, (&s, &g))| ((heaviside.slope(s) * g).abs(), i))
        .filter(|(s, _)| *s > 0.0 && s.is_finite())
        .collect();
    // larger scores first, ties by voxel index for determinism
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let spacing = schedule.min_spacing_cells as i64;
    let recent = m.len().saturating_sub(schedule.p0).min(schedule.p);
    let mut taken: Vec<[i64; 3]> = m
        .bases()
        .iter()
        .skip(m.len() - recent)
        .filter_map(|b| grid.voxel_of(&b.center()))
        .map(|v| v.map(|c| c as i64))
        .collect();
    let mut chosen = Vec::new();
    let mut out = m.clone();
    for (_, idx) in candidates {
        if chosen.len() == schedule.p {
            break;
        }
        let c = grid.coords(idx).map(|c| c as i64);
        let far = taken.iter().all(|t| (0..3).map(|a| (t[a] - c[a]).abs()).max().unwrap_or(0) >= spacing);
        if !far {
            continue;
        }
        taken.push(c);
        chosen.push(idx);
        out.push(ball_basis(m.kind(), 0.0, schedule.add_radius, grid.center_of(idx)))?;
    }
    if chosen.len() < schedule.p {
        log::warn!("only {} of {} requested bases could be placed", chosen.len(), schedule.p);
    }
    Ok((out, chosen))
}
