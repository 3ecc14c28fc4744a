//! End-to-end acceptance criteria, run in order by one driver so the wall-clock
//! budgets are measured without contention and the optimizer contracts can be
//! checked against every reconstruction made along the way. Prints one
//! `criterion N: PASS|FAIL` line per criterion.

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use num::{BigRational, ToPrimitive};

use pals::calib::{rotate_params, warp_field, AcquisitionParams, ExtendedParameters, RigidTransform};
use pals::field::{
    binarize, field_eval, field_eval_points, heaviside_eval, level_sums, wendland_eval, BasisKind, FieldModel,
    GridSpec, HeavisideConfig, ParameterVector, WendlandOrder,
};
use pals::forward::{dip_forward, sfs_boundary_run, softmax_vote};
use pals::harness::gradcheck::random_params;
use pals::harness::{
    ground_truth, gradcheck_all, iou, random_pose, simulate, voxelize, Modality, NoiseSpec, Phantom, SimulationSpec,
};
use pals::solver::{
    add_rbfs, joint_objective, reconstruct, GNConfig, GammaMode, OptimizationTrace, RBFSchedule, Reconstruction,
    ReconstructionProblem, ResidualModel,
};

struct Suite {
    results: Vec<(usize, bool)>,
    /// Every reconstruction trace with its schedule, for the optimizer contracts.
    traces: Vec<(String, RBFSchedule, OptimizationTrace)>,
}

impl Suite {
    fn report(&mut self, n: usize, pass: bool, detail: String) {
        println!("criterion {n}: {} - {detail}", if pass { "PASS" } else { "FAIL" });
        self.results.push((n, pass));
    }

    #[allow(clippy::too_many_arguments)]
    fn run(
        &mut self,
        label: &str,
        modalities: Vec<Vec<Arc<dyn ResidualModel>>>,
        grid: GridSpec,
        kind: BasisKind,
        schedule: &RBFSchedule,
        cfg: &GNConfig,
        calibrate: bool,
        seed: u64,
    ) -> Reconstruction {
        let objective = joint_objective(modalities, GammaMode::Auto).unwrap();
        let problem = ReconstructionProblem::new(objective, grid, FieldModel::default(), kind).unwrap();
        let rec = reconstruct(&problem, schedule, cfg, calibrate, seed).unwrap();
        self.traces.push((label.to_string(), *schedule, rec.trace.clone()));
        rec
    }
}

/// Binarization threshold of the default schedule, also used for the references.
const THRESHOLD: f64 = 0.7;

fn ten_outer() -> RBFSchedule {
    RBFSchedule { outer_iters: 10, ..Default::default() }
}

fn wrap(a: f64) -> f64 {
    (a + PI).rem_euclid(2.0 * PI) - PI
}

/// Mean of `(|Δθ| + |Δφ|) / 2` in degrees.
fn mean_angle_error(est: &[AcquisitionParams], truth: &[AcquisitionParams]) -> f64 {
    let total: f64 = est
        .iter()
        .zip(truth)
        .map(|(a, b)| (wrap(a.theta - b.theta).abs() + wrap(a.phi - b.phi).abs()) / 2.0)
        .sum();
    (total / est.len() as f64).to_degrees()
}

fn criterion_1(s: &mut Suite) {
    let start = Instant::now();
    let reports = gradcheck_all(5, 1).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let failed: Vec<String> = reports.iter().filter(|r| !r.passed).map(|r| r.to_string()).collect();
    let worst = reports.iter().map(|r| r.max_rel_err / r.tolerance).fold(0.0, f64::max);
    s.report(
        1,
        failed.is_empty() && reports.len() == 9 && secs < 30.0,
        format!("{} families, worst err/tol {worst:.2e}, {secs:.1}s, failures {failed:?}", reports.len()),
    );
}

fn criterion_2(s: &mut Suite) {
    let grid = GridSpec::default();
    let mid = grid.mid();
    let model = FieldModel::default();
    let m = ParameterVector::new(
        BasisKind::Spherical,
        vec![pals::solver::ball_basis(BasisKind::Spherical, 1.0, 1.5, mid + Vector3::new(0.5, -0.3, 0.2))],
    )
    .unwrap()
    .with_bias(-0.2);
    let (u, _) = field_eval(&m, &grid, &model.heaviside, model.order, false).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 1.0;
    for _ in 0..10 {
        let acq = random_pose(&mut rng, 0.1);
        let rotated = rotate_params(&m, &acq, &mid).unwrap();
        let (ur, _) = field_eval(&rotated, &grid, &model.heaviside, model.order, false).unwrap();
        let warped = warp_field(&u, &RigidTransform::new(acq, mid));
        let score = iou(&binarize(&ur, 0.5).unwrap(), &binarize(&warped, 0.5).unwrap()).unwrap();
        worst = worst.min(score);
    }
    s.report(2, worst >= 0.95, format!("min IoU {worst:.4} over 10 poses"));
}

fn criterion_3(s: &mut Suite) {
    let grid = GridSpec::default();
    let mid = grid.mid();
    let model = FieldModel::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let m = random_params(&mut rng, BasisKind::Spherical, 6, mid);
    let acq = random_pose(&mut rng, 0.1);
    let t = RigidTransform::new(acq, mid);
    let rotated = rotate_params(&m, &acq, &mid).unwrap();
    let points: Vec<Vector3<f64>> =
        (0..100).map(|_| mid + Vector3::from_fn(|_, _| rng.random_range(-1.5..1.5))).collect();
    let back: Vec<Vector3<f64>> = points.iter().map(|x| t.inverse(x)).collect();
    let (a, _) = field_eval_points(&rotated, &points, &model.heaviside, model.order, false).unwrap();
    let (b, _) = field_eval_points(&m, &back, &model.heaviside, model.order, false).unwrap();
    let worst = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let interior = a.iter().filter(|v| **v > 0.0 && **v < 1.0).count();
    s.report(3, worst < 1e-10, format!("max |Δu| {worst:.2e} at 100 points ({interior} on the transition)"));
}

fn criterion_4(s: &mut Suite) {
    let grid = GridSpec::cube(64, pals::field::DEFAULT_EXTENT).unwrap();
    let mid = grid.mid();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let m = random_params(&mut rng, BasisKind::Spherical, 6, mid);
    let acqs: Vec<AcquisitionParams> = (0..8).map(|_| random_pose(&mut rng, 0.1)).collect();
    let m_ext = ExtendedParameters::new(m, acqs);
    let totals: Vec<f64> = (0..8)
        .map(|j| dip_forward(&m_ext, &grid, &FieldModel::default(), j).unwrap().0.iter().sum())
        .collect();
    let lo = totals.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = totals.iter().cloned().fold(0.0, f64::max);
    let mean = totals.iter().sum::<f64>() / totals.len() as f64;
    let spread = (hi - lo) / mean;
    s.report(4, spread < 0.02 && mean > 0.0, format!("total volume {mean:.4}, relative spread {:.3}%", spread * 100.0));
}

fn criterion_5(s: &mut Suite) {
    let start = Instant::now();
    let spec = SimulationSpec { noise: NoiseSpec { seed: 5, ..Default::default() }, ..SimulationSpec::new(Modality::Dip, 30) };
    let phantom = Phantom::ellipsoid(spec.grid_lo.mid());
    let sim = simulate(&phantom, &spec).unwrap();
    let terms = sim.data.terms(&spec.grid_lo, FieldModel::default()).unwrap();
    let rec = s.run("ellipsoid", vec![terms], spec.grid_lo, BasisKind::Ellipsoidal, &ten_outer(), &GNConfig::default(), false, 5);
    let score = iou(&rec.binary, &ground_truth(&phantom, &spec, THRESHOLD).unwrap()).unwrap();
    let centers = iou(&rec.binary, &voxelize(&phantom, &spec.grid_lo)).unwrap();
    let drop = rec.trace.initial_misfit / rec.trace.final_misfit();
    let secs = start.elapsed().as_secs_f64();
    s.report(
        5,
        score >= 0.9 && drop >= 100.0 && secs < 120.0,
        format!("IoU {score:.3} (vs center-sampled phantom {centers:.3}), misfit drop {drop:.1}x, {secs:.1}s"),
    );
}

fn criterion_6(s: &mut Suite) {
    let start = Instant::now();
    let noise = NoiseSpec { seed: 6, angle_sigma_deg: 4.0, trans_frac: 0.04, ..Default::default() };
    let spec = SimulationSpec { noise, ..SimulationSpec::new(Modality::Dip, 60) };
    let phantom = Phantom::dumbbell(spec.grid_lo.mid());
    let sim = simulate(&phantom, &spec).unwrap();
    let terms = sim.data.terms(&spec.grid_lo, FieldModel::default()).unwrap();
    let truth = ground_truth(&phantom, &spec, THRESHOLD).unwrap();
    let cfg = GNConfig::default();
    let off = s.run("calibration off", vec![terms.clone()], spec.grid_lo, BasisKind::Ellipsoidal, &ten_outer(), &cfg, false, 6);
    let on = s.run("calibration on", vec![terms], spec.grid_lo, BasisKind::Ellipsoidal, &ten_outer(), &cfg, true, 6);
    let secs = start.elapsed().as_secs_f64();
    let (iou_off, iou_on) = (iou(&off.binary, &truth).unwrap(), iou(&on.binary, &truth).unwrap());
    let injected = mean_angle_error(&sim.data.recorded(), &sim.truth);
    let estimated = mean_angle_error(&on.params.acq_list, &sim.truth);
    s.report(
        6,
        iou_on >= iou_off + 0.05 && estimated <= 0.5 * injected && secs < 300.0,
        format!(
            "IoU {iou_off:.3} -> {iou_on:.3}, mean angle error {injected:.2} -> {estimated:.2} deg, {secs:.1}s"
        ),
    );
}

fn criterion_7(s: &mut Suite) {
    let dip_spec = SimulationSpec { noise: NoiseSpec { seed: 7, ..Default::default() }, ..SimulationSpec::new(Modality::Dip, 20) };
    let sfs_spec = SimulationSpec { noise: NoiseSpec { seed: 17, ..Default::default() }, ..SimulationSpec::new(Modality::Sfs, 8) };
    let grid = dip_spec.grid_lo;
    let phantom = Phantom::dumbbell(grid.mid());
    let dips = simulate(&phantom, &dip_spec).unwrap().data.terms(&grid, FieldModel::default()).unwrap();
    let sils = simulate(&phantom, &sfs_spec).unwrap().data.terms(&grid, FieldModel::default()).unwrap();
    let truth = ground_truth(&phantom, &dip_spec, THRESHOLD).unwrap();
    let cfg = GNConfig::default();
    let alone = s.run("dips", vec![dips.clone()], grid, BasisKind::Ellipsoidal, &ten_outer(), &cfg, false, 7);
    let joint = s.run("dips + silhouettes", vec![dips, sils], grid, BasisKind::Ellipsoidal, &ten_outer(), &cfg, false, 7);
    let (a, j) = (iou(&alone.binary, &truth).unwrap(), iou(&joint.binary, &truth).unwrap());
    s.report(7, j > a, format!("IoU dips {a:.3}, joint {j:.3} (gamma {:?})", joint.trace.gammas));
}

fn criterion_8(s: &mut Suite) {
    let spec = SimulationSpec { noise: NoiseSpec::none(8), random_poses: false, ..SimulationSpec::new(Modality::Pc, 1) };
    let grid = spec.grid_lo;
    let phantom = Phantom::sphere(grid.mid(), 1.0);
    let sim = simulate(&phantom, &spec).unwrap();
    let terms = sim.data.terms(&grid, FieldModel::default()).unwrap();
    let rec = s.run("point cloud", vec![terms], grid, BasisKind::Ellipsoidal, &ten_outer(), &GNConfig::default(), false, 8);
    let pals::harness::ExperimentData::Pc(clouds) = &sim.data else { unreachable!() };
    let cloud = &clouds[0];
    let model = FieldModel::default();
    let (u, _) = field_eval_points(&rec.params.pals, cloud.points(), &model.heaviside, model.order, false).unwrap();
    let rms = (u.iter().map(|v| (v - cloud.level()).powi(2)).sum::<f64>() / u.len() as f64).sqrt();
    let score = iou(&rec.binary, &voxelize(&phantom, &grid)).unwrap();
    s.report(8, rms < 0.05 && score >= 0.9, format!("{} points, RMS {rms:.4}, IoU {score:.3}", cloud.len()));
}

/// Residuals of every term before and after inserting zero-weight bases.
fn alpha_zero_identical(terms: &[Arc<dyn ResidualModel>], grid: &GridSpec, seed: u64) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = random_params(&mut rng, BasisKind::Ellipsoidal, 8, grid.mid()).with_bias(-0.2);
    let schedule = RBFSchedule { p0: 8, ..Default::default() };
    let sums = level_sums(&m, grid, WendlandOrder::default()).unwrap();
    let grad = vec![1.0; grid.len()];
    let (grown, picked) = add_rbfs(&m, &sums, &grad, &schedule, grid, &HeavisideConfig::default()).unwrap();
    assert!(!picked.is_empty(), "no bases were inserted");
    terms.iter().all(|t| {
        let before = t.evaluate(&m, &t.recorded_acq(), false).unwrap().residuals;
        let after = t.evaluate(&grown, &t.recorded_acq(), false).unwrap().residuals;
        before.len() == after.len() && before.iter().zip(&after).all(|(a, b)| a.to_bits() == b.to_bits())
    })
}

fn criterion_9(s: &mut Suite) {
    let spec = SimulationSpec { noise: NoiseSpec { seed: 9, ..Default::default() }, ..SimulationSpec::new(Modality::Dip, 6) };
    let phantom = Phantom::ellipsoid(spec.grid_lo.mid());
    let terms = simulate(&phantom, &spec).unwrap().data.terms(&spec.grid_lo, FieldModel::default()).unwrap();
    let defaults = RBFSchedule::default();
    let cfg = GNConfig { it_gn: 1, ..Default::default() };
    let long = s.run("default schedule", vec![terms.clone()], spec.grid_lo, BasisKind::Spherical, &defaults, &cfg, false, 9);
    let final_count = long.params.pals.len();

    let mut monotone_violations = Vec::new();
    let mut count_violations = Vec::new();
    let mut accepted = 0;
    for (label, schedule, trace) in &s.traces {
        for st in trace.steps.iter().filter(|st| !st.stalled) {
            accepted += 1;
            if st.objective() > st.objective_before {
                monotone_violations.push(format!("{label} outer {} inner {}", st.outer, st.inner));
            }
        }
        for (k, n) in trace.n_rbf_per_outer.iter().enumerate() {
            if *n != schedule.p0 + (k + 1) * schedule.p {
                count_violations.push(format!("{label} outer {k}: {n}"));
            }
        }
    }

    let mut identical = alpha_zero_identical(&terms, &spec.grid_lo, 90);
    for (modality, n) in [(Modality::Sfs, 2), (Modality::Pc, 1)] {
        let spec = SimulationSpec { noise: NoiseSpec::none(9), ..SimulationSpec::new(modality, n) };
        let terms = simulate(&phantom, &spec).unwrap().data.terms(&spec.grid_lo, FieldModel::default()).unwrap();
        identical &= alpha_zero_identical(&terms, &spec.grid_lo, 91);
    }

    s.report(
        9,
        monotone_violations.is_empty() && count_violations.is_empty() && final_count == 220 && identical,
        format!(
            "{} runs, {accepted} accepted steps, objective increases {monotone_violations:?}, count mismatches {count_violations:?}, {final_count} bases after 40 outer iterations, alpha-zero residuals identical: {identical}",
            s.traces.len()
        ),
    );
}

/// The quadratic Heaviside branch evaluated in exact rational arithmetic at the
/// binary values of the inputs, rounded once to the nearest double.
fn quadratic_branch_exact(x: f64, delta: f64, eps: f64) -> f64 {
    let r = |v: f64| BigRational::from_float(v).unwrap();
    let t = r(x) + r(delta) + r(eps);
    let v = &t * &t / (BigRational::from_integer(8.into()) * r(delta) * r(eps));
    v.to_f64().unwrap()
}

fn criterion_10(s: &mut Suite) {
    let h = HeavisideConfig { delta: 0.1, eps: 0.01 };
    let w = |r| wendland_eval(WendlandOrder::Psi1, r).unwrap();
    let branches = [
        (w(0.0), 1.0),
        (w(1.0), 0.0),
        (w(0.5), 0.1875),
        (heaviside_eval(&h, -0.2), 0.0),
        (heaviside_eval(&h, 0.0), 0.5),
        // -0.105 has no exact binary form, so the reference is the exact value at
        // the stored input; it differs from the decimal 0.003125 by 1.2e-17
        (heaviside_eval(&h, -0.105), quadratic_branch_exact(-0.105, 0.1, 0.01)),
    ];
    let exact = branches.iter().all(|(got, want)| got == want);

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut in_range = true;
    let mut sharp_gap: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.random_range(1..12);
        let mut ray: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        ray.sort_by(f64::total_cmp);
        for eta in [1e-3, 1.0, 50.0, 1e3] {
            let (d, _) = softmax_vote(&ray, eta);
            in_range &= (0.0..=1.0).contains(&d);
        }
        let top = ray[n - 1];
        sharp_gap = sharp_gap.max(top - softmax_vote(&ray, 1e3).0);
    }
    let empty = vec![0.0; 16];
    let run = sfs_boundary_run(&empty);
    let empty_d = softmax_vote(&empty[run.clone()], 50.0).0;

    s.report(
        10,
        exact && in_range && sharp_gap < 1e-3 && run.is_empty() && empty_d == 0.0,
        format!(
            "branch values {}, softmax in [0,1]: {in_range}, eta 1e3 gap to max {sharp_gap:.2e}, empty ray d {empty_d}",
            if exact { "exact" } else { "mismatch" }
        ),
    );
    if !exact {
        println!("  branch values (got, want): {branches:?}");
    }
}

#[test]
fn acceptance_criteria() {
    assert_eq!(RBFSchedule::default().binarize_threshold, THRESHOLD);
    let mut suite = Suite { results: Vec::new(), traces: Vec::new() };
    criterion_1(&mut suite);
    criterion_2(&mut suite);
    criterion_3(&mut suite);
    criterion_4(&mut suite);
    criterion_5(&mut suite);
    criterion_6(&mut suite);
    criterion_7(&mut suite);
    criterion_8(&mut suite);
    criterion_9(&mut suite);
    criterion_10(&mut suite);
    let failed: Vec<usize> = suite.results.iter().filter(|(_, p)| !p).map(|(n, _)| *n).collect();
    println!("acceptance: {} of {} criteria pass", suite.results.len() - failed.len(), suite.results.len());
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
