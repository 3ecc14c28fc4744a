use std::sync::Arc;

use nalgebra::{DMatrix, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::calib::{AcquisitionParams, ExtendedParameters};
use crate::error::Result;
use crate::field::{Basis, BasisKind, GridSpec, ParameterVector, SphericalBasis};

/// `r = A m - b` over the flattened PaLS parameters, ignoring the pose.
struct Linear {
    a: DMatrix<f64>,
    b: Vec<f64>,
}

impl ResidualModel for Linear {
    fn modality(&self) -> &'static str {
        "linear"
    }

    fn n_residuals(&self) -> usize {
        self.b.len()
    }

    fn recorded_acq(&self) -> AcquisitionParams {
        AcquisitionParams::default()
    }

    fn grid(&self) -> Option<&GridSpec> {
        None
    }

    fn evaluate(&self, pals: &ParameterVector, _acq: &AcquisitionParams, want_jacobian: bool) -> Result<TermEval> {
        let m = nalgebra::DVector::from_vec(pals.flatten());
        let r = &self.a * m;
        let residuals = r.iter().zip(&self.b).map(|(x, y)| x - y).collect();
        let jacobian = want_jacobian.then(|| {
            let mut j = DMatrix::zeros(self.b.len(), pals.n_params() + 5);
            j.columns_mut(0, pals.n_params()).copy_from(&self.a);
            j
        });
        Ok(TermEval { residuals, jacobian })
    }

    fn misfit_gradient_u(&self, _: &ParameterVector, _: &AcquisitionParams, grid: &GridSpec) -> Result<Vec<f64>> {
        Ok(vec![0.0; grid.len()])
    }
}

fn spheres(n: usize) -> ParameterVector {
    let bases = (0..n)
        .map(|i| Basis::Spherical(SphericalBasis::new(0.1, 1.0, Vector3::new(1.0 + i as f64, 2.0, 2.5)).unwrap()))
        .collect();
    ParameterVector::new(BasisKind::Spherical, bases).unwrap()
}

fn linear_problem(rng: &mut ChaCha8Rng, pals: &ParameterVector, rows: usize) -> Arc<dyn ResidualModel> {
    let n = pals.n_params();
    let a = DMatrix::from_fn(rows, n, |_, _| rng.random_range(-1.0..1.0));
    // target reachable at a point with positive β
    let mut target = pals.flatten();
    for v in target.iter_mut() {
        *v += rng.random_range(-0.1..0.1);
    }
    let b = (&a * nalgebra::DVector::from_vec(target)).as_slice().to_vec();
    Arc::new(Linear { a, b })
}

fn reg_for(m_ext: &ExtendedParameters, lambda: f64) -> Regularization {
    Regularization { lambda, anchor: active_vector(m_ext, false), barrier_weight: 0.0, pose_prior: None }
}

#[test]
fn linear_least_squares_is_solved_in_one_full_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let pals = spheres(2);
    let obj = joint_objective(vec![vec![linear_problem(&mut rng, &pals, 30)]], GammaMode::Auto).unwrap();
    let m_ext = ExtendedParameters::new(pals, vec![AcquisitionParams::default()]);
    let reg = reg_for(&m_ext, 1e-12);
    let (next, rec) = gauss_newton_step(&m_ext, &obj, &reg, &GNConfig::default(), false).unwrap();
    assert_eq!(rec.step, 1.0);
    assert!(rec.misfit < 1e-16, "{}", rec.misfit);
    assert!(rec.objective() < rec.objective_before);
    assert_eq!(next.acq_list, m_ext.acq_list);
}

#[test]
fn huge_lambda_freezes_the_parameters() {
    let mut rng = ChaCha8Rng::seed_from_u64(72);
    let pals = spheres(2);
    let obj = joint_objective(vec![vec![linear_problem(&mut rng, &pals, 30)]], GammaMode::Auto).unwrap();
    let m_ext = ExtendedParameters::new(pals.clone(), vec![AcquisitionParams::default()]);
    let (next, _) = gauss_newton_step(&m_ext, &obj, &reg_for(&m_ext, 1e12), &GNConfig::default(), false).unwrap();
    let d: f64 = next.pals.flatten().iter().zip(pals.flatten()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(d < 1e-9);
}

#[test]
fn joint_weights_and_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(73);
    let pals = spheres(2);
    let a = linear_problem(&mut rng, &pals, 10);
    let b = linear_problem(&mut rng, &pals, 12);
    let m_ext = ExtendedParameters::new(pals, vec![AcquisitionParams::default(); 2]);

    // auto balance: weighted misfits are equal
    let mut obj = joint_objective(vec![vec![a.clone()], vec![b.clone()]], GammaMode::Auto).unwrap();
    let gammas = obj.balance(&m_ext).unwrap();
    let misfits = obj.modality_misfits(&m_ext).unwrap();
    assert!((misfits[0] - gammas[1] * misfits[1]).abs() <= 1e-9 * misfits[0]);

    // shared gradient is the sum of the per-modality gradients
    let joint = joint_objective(vec![vec![a.clone()], vec![b.clone()]], GammaMode::Fixed(1.0)).unwrap();
    let only_a = joint_objective(vec![vec![a.clone()]], GammaMode::Fixed(1.0)).unwrap();
    let only_b = joint_objective(vec![vec![b]], GammaMode::Fixed(1.0)).unwrap();
    let one = ExtendedParameters::new(m_ext.pals.clone(), vec![AcquisitionParams::default()]);
    let (_, gj, _) = normal_equations(&m_ext, &joint, false).unwrap();
    let (_, ga, _) = normal_equations(&one, &only_a, false).unwrap();
    let (_, gb, _) = normal_equations(&one, &only_b, false).unwrap();
    assert!((gj - ga - gb).amax() < 1e-12);

    // a single modality is unaffected by γ
    let fixed = joint_objective(vec![vec![a.clone()]], GammaMode::Fixed(7.0)).unwrap();
    assert_eq!(data_misfit(&one, &fixed).unwrap(), data_misfit(&one, &only_a).unwrap());
    assert!(joint_objective(vec![], GammaMode::Auto).is_err());
}

#[test]
fn infeasible_steps_are_rejected() {
    // pull β towards a negative value; every accepted iterate must keep β > 0
    let pals = spheres(1);
    let mut a = DMatrix::zeros(1, 5);
    a[(0, 1)] = 1.0;
    let model: Arc<dyn ResidualModel> = Arc::new(Linear { a, b: vec![-3.0] });
    let obj = joint_objective(vec![vec![model]], GammaMode::Auto).unwrap();
    let mut m_ext = ExtendedParameters::new(pals, vec![AcquisitionParams::default()]);
    let reg = reg_for(&m_ext, 1e-6);
    for _ in 0..5 {
        let (next, rec) = gauss_newton_step(&m_ext, &obj, &reg, &GNConfig::default(), false).unwrap();
        assert!(rec.objective() <= rec.objective_before);
        m_ext = next;
        m_ext.pals.validate().unwrap();
    }
}
