//! Named derivative families checked against central finite differences at
//! random feasible configurations.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::fd::{central_jacobian, relative_error};
use crate::calib::{rot_jacobian_acq, rot_jacobian_params, rotate_params, AcquisitionParams, ExtendedParameters};
use crate::error::{PalsError, Result};
use crate::field::{
    field_eval_points, pack_lower, pack_symmetric, Basis, BasisKind, CholeskyBasis, EllipsoidBasis, FieldModel,
    GridSpec, ParameterVector, SphericalBasis,
};
use crate::forward::{dip_forward, pc_residuals, sfs_forward, PointCloudData, DEFAULT_LEVEL};
use crate::solver::logdet_barrier;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradFamily {
    FieldSpherical,
    FieldEllipsoid,
    FieldCholesky,
    RotParams,
    RotAcq,
    Dip,
    Sfs,
    Pointcloud,
    Barrier,
}

impl GradFamily {
    pub const ALL: [GradFamily; 9] = [
        GradFamily::FieldSpherical,
        GradFamily::FieldEllipsoid,
        GradFamily::FieldCholesky,
        GradFamily::RotParams,
        GradFamily::RotAcq,
        GradFamily::Dip,
        GradFamily::Sfs,
        GradFamily::Pointcloud,
        GradFamily::Barrier,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GradFamily::FieldSpherical => "field-spherical",
            GradFamily::FieldEllipsoid => "field-ellipsoid",
            GradFamily::FieldCholesky => "field-cholesky",
            GradFamily::RotParams => "rot-params",
            GradFamily::RotAcq => "rot-acq",
            GradFamily::Dip => "dip",
            GradFamily::Sfs => "sfs",
            GradFamily::Pointcloud => "pointcloud",
            GradFamily::Barrier => "barrier",
        }
    }

    /// Acceptance tolerance on the max relative error.
    pub fn tolerance(self) -> f64 {
        match self {
            GradFamily::RotParams | GradFamily::RotAcq => 1e-7,
            GradFamily::Barrier => 1e-6,
            _ => 1e-5,
        }
    }
}

impl fmt::Display for GradFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GradFamily {
    type Err = PalsError;
    fn from_str(s: &str) -> Result<Self> {
        GradFamily::ALL.into_iter().find(|f| f.name() == s).ok_or_else(|| {
            let names: Vec<_> = GradFamily::ALL.iter().map(|f| f.name()).collect();
            PalsError::Config(format!("unknown derivative family '{s}' (expected one of {})", names.join(", ")))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradReport {
    pub family: GradFamily,
    pub trials: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub seconds: f64,
}

impl fmt::Display for GradReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<16} {} trials  max rel err {:.3e}  tol {:.0e}  {}",
            self.family.name(),
            self.trials,
            self.max_rel_err,
            self.tolerance,
            if self.passed { "ok" } else { "FAIL" }
        )
    }
}

/// Domain used by every grid-based family.
fn check_grid() -> GridSpec {
    GridSpec::cube(12, 5.0).expect("valid grid")
}

fn random_center(rng: &mut impl Rng, c: Vector3<f64>, spread: f64) -> Vector3<f64> {
    c + Vector3::from_fn(|_, _| rng.random_range(-spread..spread))
}

fn random_spd(rng: &mut impl Rng) -> Matrix3<f64> {
    let a = Matrix3::from_fn(|_, _| rng.random_range(-0.3..0.3));
    a * a.transpose() + Matrix3::identity() * 0.6
}

/// `n` overlapping random bases of `kind` near `c`, on a background bias of -0.5.
pub fn random_params(rng: &mut impl Rng, kind: BasisKind, n: usize, c: Vector3<f64>) -> ParameterVector {
    let bases = (0..n)
        .map(|_| {
            let alpha = rng.random_range(0.4..1.0);
            let xi = random_center(rng, c, 0.6);
            match kind {
                BasisKind::Spherical => Basis::Spherical(SphericalBasis { alpha, beta: rng.random_range(0.6..1.2), xi }),
                BasisKind::Ellipsoidal => Basis::Ellipsoidal(EllipsoidBasis::new(alpha, pack_symmetric(&random_spd(rng)), xi)),
                BasisKind::Cholesky => {
                    let mut l = Matrix3::from_fn(|i, j| if i > j { rng.random_range(-0.3..0.3) } else { 0.0 });
                    for d in 0..3 {
                        l[(d, d)] = rng.random_range(0.7..1.2);
                    }
                    Basis::Cholesky(CholeskyBasis { alpha, l_tril: pack_lower(&l), xi })
                }
            }
        })
        .collect();
    ParameterVector::new(kind, bases).expect("single kind").with_bias(-0.5)
}

pub fn random_acq(rng: &mut impl Rng) -> AcquisitionParams {
    AcquisitionParams::new(
        rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
        rng.random_range(0.1..3.0),
        Vector3::from_fn(|_, _| rng.random_range(-0.1..0.1)),
    )
}

/// Unit normals drawn uniformly on the sphere, with points at `c + radius·n`.
pub fn random_sphere_samples(
    rng: &mut impl Rng,
    n: usize,
    c: Vector3<f64>,
    radius: f64,
) -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>) {
    let normals: Vec<Vector3<f64>> = (0..n)
        .map(|_| {
            let z: f64 = rng.random_range(-1.0..1.0);
            let t: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let s = (1.0 - z * z).sqrt();
            Vector3::new(s * t.cos(), s * t.sin(), z)
        })
        .collect();
    let points = normals.iter().map(|nn| c + nn * radius).collect();
    (points, normals)
}

fn fd_against(x0: &[f64], analytic: &DMatrix<f64>, f: impl Fn(&[f64]) -> Result<Vec<f64>> + Sync) -> Result<f64> {
    let fd = central_jacobian(x0, f)?;
    Ok(relative_error(analytic, &fd))
}

fn field_trial(rng: &mut ChaCha8Rng, kind: BasisKind) -> Result<f64> {
    let c = Vector3::repeat(2.5);
    let m = random_params(rng, kind, 3, c);
    let points: Vec<Vector3<f64>> = (0..40).map(|_| random_center(rng, c, 1.2)).collect();
    let model = FieldModel::default();
    let (_, j) = field_eval_points(&m, &points, &model.heaviside, model.order, true)?;
    let j = j.expect("jacobian requested").to_dense();
    fd_against(&m.flatten(), &j, |x| Ok(field_eval_points(&m.unflatten_like(x)?, &points, &model.heaviside, model.order, false)?.0))
}

fn rot_params_trial(rng: &mut ChaCha8Rng) -> Result<f64> {
    let c = Vector3::repeat(2.5);
    let acq = random_acq(rng);
    let mut worst: f64 = 0.0;
    for kind in [BasisKind::Spherical, BasisKind::Ellipsoidal] {
        let m = random_params(rng, kind, 1, c);
        let basis = &m.bases()[0];
        let j = rot_jacobian_params(basis, &acq, &c)?;
        let err = fd_against(&m.flatten(), &j, |x| Ok(rotate_params(&m.unflatten_like(x)?, &acq, &c)?.flatten()))?;
        worst = worst.max(err);
    }
    Ok(worst)
}

fn rot_acq_trial(rng: &mut ChaCha8Rng) -> Result<f64> {
    let c = Vector3::repeat(2.5);
    let acq = random_acq(rng);
    let mut worst: f64 = 0.0;
    for kind in [BasisKind::Spherical, BasisKind::Ellipsoidal] {
        let m = random_params(rng, kind, 1, c);
        let nb = kind.n_params();
        let j = rot_jacobian_acq(&m.bases()[0], &acq, &c)?;
        let mut x0 = m.flatten();
        x0.extend(acq.to_array());
        let err = fd_against(&x0, &j, |x| {
            let (p, a) = x.split_at(nb);
            Ok(rotate_params(&m.unflatten_like(p)?, &AcquisitionParams::from_slice(a), &c)?.flatten())
        })?;
        worst = worst.max(err);
    }
    Ok(worst)
}

fn ext_check(m_ext: &ExtendedParameters, analytic: &DMatrix<f64>, f: impl Fn(&ExtendedParameters) -> Result<Vec<f64>> + Sync) -> Result<f64> {
    fd_against(&m_ext.flatten(), analytic, |x| f(&m_ext.unflatten_like(x)?))
}

fn dip_trial(rng: &mut ChaCha8Rng) -> Result<f64> {
    let grid = check_grid();
    let model = FieldModel::default();
    let m_ext = ExtendedParameters::new(random_params(rng, BasisKind::Ellipsoidal, 3, grid.mid()), vec![random_acq(rng)]);
    let (_, j) = dip_forward(&m_ext, &grid, &model, 0)?;
    ext_check(&m_ext, &j, |m| Ok(dip_forward(m, &grid, &model, 0)?.0))
}

fn sfs_trial(rng: &mut ChaCha8Rng) -> Result<f64> {
    let grid = check_grid();
    let model = FieldModel::default();
    let eta = 20.0;
    let m_ext = ExtendedParameters::new(random_params(rng, BasisKind::Ellipsoidal, 3, grid.mid()), vec![random_acq(rng)]);
    let (_, j) = sfs_forward(&m_ext, &grid, &model, eta, 0)?;
    ext_check(&m_ext, &j, |m| Ok(sfs_forward(m, &grid, &model, eta, 0)?.0))
}

fn pointcloud_trial(rng: &mut ChaCha8Rng) -> Result<f64> {
    let c = Vector3::repeat(2.5);
    let (points, normals) = random_sphere_samples(rng, 20, c, 1.0);
    let acq = random_acq(rng);
    let cloud = PointCloudData::new(points, normals, 0.3, DEFAULT_LEVEL, acq)?;
    let model = FieldModel::default();
    let m_ext = ExtendedParameters::new(random_params(rng, BasisKind::Ellipsoidal, 3, c), vec![acq]);
    let (_, j) = pc_residuals(&m_ext, &cloud, &model, &c, 0)?;
    ext_check(&m_ext, &j, |m| Ok(pc_residuals(m, &cloud, &model, &c, 0)?.0))
}

fn barrier_trial(rng: &mut ChaCha8Rng) -> Result<f64> {
    let m = random_params(rng, BasisKind::Ellipsoidal, 3, Vector3::repeat(2.5));
    let w = 0.7;
    let p = logdet_barrier(&m, w)?;
    let x0 = m.flatten();
    let g = DMatrix::from_row_slice(1, x0.len(), p.gradient.as_slice());
    let eg = fd_against(&x0, &g, |x| Ok(vec![logdet_barrier(&m.unflatten_like(x)?, w)?.value]))?;
    let eh = fd_against(&x0, &p.hessian, |x| Ok(logdet_barrier(&m.unflatten_like(x)?, w)?.gradient.as_slice().to_vec()))?;
    Ok(eg.max(eh))
}

/// Runs `trials` random configurations of `family` and reports the worst relative error.
pub fn gradcheck(family: GradFamily, trials: usize, seed: u64) -> Result<GradReport> {
    if trials == 0 {
        return Err(PalsError::Config("gradcheck needs at least one trial".into()));
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(family as u64);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let err = match family {
            GradFamily::FieldSpherical => field_trial(&mut rng, BasisKind::Spherical),
            GradFamily::FieldEllipsoid => field_trial(&mut rng, BasisKind::Ellipsoidal),
            GradFamily::FieldCholesky => field_trial(&mut rng, BasisKind::Cholesky),
            GradFamily::RotParams => rot_params_trial(&mut rng),
            GradFamily::RotAcq => rot_acq_trial(&mut rng),
            GradFamily::Dip => dip_trial(&mut rng),
            GradFamily::Sfs => sfs_trial(&mut rng),
            GradFamily::Pointcloud => pointcloud_trial(&mut rng),
            GradFamily::Barrier => barrier_trial(&mut rng),
        }?;
        // NaN must fail the check
        worst = if err.is_nan() { f64::NAN } else { worst.max(err) };
    }
    let tolerance = family.tolerance();
    Ok(GradReport {
        family,
        trials,
        max_rel_err: worst,
        tolerance,
        passed: worst < tolerance,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Every family, in declaration order.
pub fn gradcheck_all(trials: usize, seed: u64) -> Result<Vec<GradReport>> {
    GradFamily::ALL.into_iter().map(|f| gradcheck(f, trials, seed)).collect()
}
