use std::sync::Arc;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::phantom::{downsample, voxelize, Phantom};
use crate::calib::{AcquisitionParams, RigidTransform};
use crate::error::{PalsError, Result};
use crate::field::{binarize, FieldModel, GridSpec, ScalarField};
use crate::forward::{
    sfs_boundary_run, softmax_vote, DipExperiment, PointCloudData, SilhouetteExperiment, DEFAULT_ETA, DEFAULT_LEVEL,
};
use crate::solver::{DipTerm, PointCloudTerm, ResidualModel, SilhouetteTerm};

/// Data noise and calibration uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSpec {
    /// Trace noise std as a multiple of the reconstruction voxel volume.
    pub data_sigma_voxels: f64,
    /// Std of the recorded-angle perturbation, degrees.
    pub angle_sigma_deg: f64,
    /// Std of the recorded-translation perturbation as a fraction of the domain edge.
    pub trans_frac: f64,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec { data_sigma_voxels: 2.0, angle_sigma_deg: 0.0, trans_frac: 0.0, seed: 0 }
    }
}

impl NoiseSpec {
    pub fn none(seed: u64) -> Self {
        NoiseSpec { data_sigma_voxels: 0.0, angle_sigma_deg: 0.0, trans_frac: 0.0, seed }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("data_sigma_voxels", self.data_sigma_voxels),
            ("angle_sigma_deg", self.angle_sigma_deg),
            ("trans_frac", self.trans_frac),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(PalsError::Config(format!("noise {name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Dip,
    Sfs,
    Pc,
}

impl std::str::FromStr for Modality {
    type Err = PalsError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dip" => Ok(Modality::Dip),
            "sfs" => Ok(Modality::Sfs),
            "pc" => Ok(Modality::Pc),
            other => Err(PalsError::Config(format!("unknown modality '{other}' (dip, sfs, pc)"))),
        }
    }
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Modality::Dip => "dip",
            Modality::Sfs => "sfs",
            Modality::Pc => "pc",
        })
    }
}

/// What to simulate and at which resolutions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    pub modality: Modality,
    pub n_experiments: usize,
    #[serde(default)]
    pub noise: NoiseSpec,
    /// Grid the phantom is rasterized on.
    pub grid_hi: GridSpec,
    /// Reconstruction grid; its dims must divide those of `grid_hi`.
    pub grid_lo: GridSpec,
    /// Half-width of the box true translations are drawn from, as a fraction of the domain edge.
    #[serde(default = "default_pose_box")]
    pub pose_box_frac: f64,
    /// Draw random poses; when off every true pose is the identity.
    #[serde(default = "default_true")]
    pub random_poses: bool,
    #[serde(default = "default_eta")]
    pub eta: f64,
    /// Points per cloud.
    #[serde(default = "default_points")]
    pub n_points: usize,
    /// Normal offset of the point-cloud side samples, in domain units;
    /// two voxel widths of `grid_lo` when absent.
    #[serde(default)]
    pub eps_offset: Option<f64>,
    #[serde(default = "default_level")]
    pub level: f64,
}

fn default_pose_box() -> f64 {
    0.02
}
fn default_true() -> bool {
    true
}
fn default_eta() -> f64 {
    DEFAULT_ETA
}
fn default_points() -> usize {
    500
}
fn default_level() -> f64 {
    DEFAULT_LEVEL
}

impl SimulationSpec {
    /// Defaults for `modality` at the desk-scale 64³ → 32³ resolutions on a 5-unit cube.
    pub fn new(modality: Modality, n_experiments: usize) -> Self {
        SimulationSpec {
            modality,
            n_experiments,
            noise: NoiseSpec::default(),
            grid_hi: GridSpec::cube(64, crate::field::DEFAULT_EXTENT).expect("valid grid"),
            grid_lo: GridSpec::default(),
            pose_box_frac: default_pose_box(),
            random_poses: true,
            eta: DEFAULT_ETA,
            n_points: default_points(),
            eps_offset: None,
            level: DEFAULT_LEVEL,
        }
    }

    /// Point-cloud normal offset in force.
    pub fn offset(&self) -> f64 {
        self.eps_offset.unwrap_or_else(|| 2.0 * self.grid_lo.spacing().max())
    }

    pub fn factor(&self) -> Result<usize> {
        let f = self.grid_hi.dims[0] / self.grid_lo.dims[0].max(1);
        let same_domain = self.grid_hi.origin == self.grid_lo.origin && self.grid_hi.extent == self.grid_lo.extent;
        if f == 0 || !same_domain || self.grid_hi.coarsen(f).ok() != Some(self.grid_lo) {
            return Err(PalsError::Config(format!(
                "reconstruction grid {:?} is not an integer coarsening of the simulation grid {:?} over the same domain",
                self.grid_lo.dims, self.grid_hi.dims
            )));
        }
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_experiments == 0 {
            return Err(PalsError::Config("at least one experiment is required".into()));
        }
        self.grid_hi.validate()?;
        self.grid_lo.validate()?;
        self.factor()?;
        self.noise.validate()?;
        if !(self.pose_box_frac >= 0.0) || !(self.eta > 0.0) || !self.eps_offset.is_none_or(|e| e > 0.0) {
            return Err(PalsError::Config("pose box must be >= 0, η and the normal offset > 0".into()));
        }
        if self.modality == Modality::Pc && self.n_points == 0 {
            return Err(PalsError::Config("point clouds need at least one point".into()));
        }
        Ok(())
    }
}

/// Simulated experiments of one modality.
#[derive(Debug, Clone)]
pub enum ExperimentData {
    Dip(Vec<DipExperiment>),
    Sfs(Vec<SilhouetteExperiment>),
    Pc(Vec<PointCloudData>),
}

impl ExperimentData {
    pub fn modality(&self) -> Modality {
        match self {
            ExperimentData::Dip(_) => Modality::Dip,
            ExperimentData::Sfs(_) => Modality::Sfs,
            ExperimentData::Pc(_) => Modality::Pc,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ExperimentData::Dip(v) => v.len(),
            ExperimentData::Sfs(v) => v.len(),
            ExperimentData::Pc(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// One residual model per experiment on the reconstruction grid.
    pub fn terms(&self, grid: &GridSpec, model: FieldModel) -> Result<Vec<Arc<dyn ResidualModel>>> {
        match self {
            ExperimentData::Dip(v) => v
                .iter()
                .map(|e| Ok(Arc::new(DipTerm::new(e.clone(), *grid, model)?) as Arc<dyn ResidualModel>))
                .collect(),
            ExperimentData::Sfs(v) => v
                .iter()
                .map(|e| Ok(Arc::new(SilhouetteTerm::new(e.clone(), *grid, model)?) as Arc<dyn ResidualModel>))
                .collect(),
            ExperimentData::Pc(v) => {
                Ok(v.iter().map(|c| Arc::new(PointCloudTerm::new(c.clone(), model, grid.mid())) as Arc<dyn ResidualModel>).collect())
            }
        }
    }

    /// Recorded (possibly perturbed) poses.
    pub fn recorded(&self) -> Vec<AcquisitionParams> {
        match self {
            ExperimentData::Dip(v) => v.iter().map(|e| e.acq).collect(),
            ExperimentData::Sfs(v) => v.iter().map(|e| e.acq).collect(),
            ExperimentData::Pc(v) => v.iter().map(|e| e.acq).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub data: ExperimentData,
    /// Poses the data were generated with.
    pub truth: Vec<AcquisitionParams>,
}

/// Occupancy of the phantom moved by `t`: `y` is inside when `T⁻¹(y)` is.
pub fn voxelize_posed(phantom: &Phantom, grid: &GridSpec, t: &RigidTransform) -> ScalarField {
    let values = (0..grid.len())
        .into_par_iter()
        .map(|i| if phantom.contains(&t.inverse(&grid.center_of(i))) { 1.0 } else { 0.0 })
        .collect();
    ScalarField { grid: *grid, values }
}

/// Angles uniform on the sphere: `θ ~ U[0, 2π)`, `φ = acos(1 - 2v)`; translation uniform in `±half_box`.
pub fn random_pose(rng: &mut impl Rng, half_box: f64) -> AcquisitionParams {
    let theta = rng.random_range(0.0..std::f64::consts::TAU);
    let phi = (1.0 - 2.0 * rng.random::<f64>()).acos();
    let b = if half_box > 0.0 {
        Vector3::from_fn(|_, _| rng.random_range(-half_box..=half_box))
    } else {
        Vector3::zeros()
    };
    AcquisitionParams::new(theta, phi, b)
}

/// Gaussian perturbation of a pose: `sigma_angle` radians on both angles, `sigma_trans` per translation axis.
pub fn perturb_pose(
    rng: &mut impl Rng,
    acq: &AcquisitionParams,
    sigma_angle: f64,
    sigma_trans: f64,
) -> AcquisitionParams {
    let mut g = |s: f64| if s > 0.0 { Normal::new(0.0, s).expect("positive std").sample(rng) } else { 0.0 };
    let theta = acq.theta + g(sigma_angle);
    let phi = acq.phi + g(sigma_angle);
    let b = [acq.b[0] + g(sigma_trans), acq.b[1] + g(sigma_trans), acq.b[2] + g(sigma_trans)];
    AcquisitionParams { theta, phi, b }
}

/// Adds `N(0, sigma²)` to every entry and clamps at zero (volumes are non-negative).
pub fn add_trace_noise(rng: &mut impl Rng, trace: &mut [f64], sigma: f64) {
    if sigma <= 0.0 {
        return;
    }
    let normal = Normal::new(0.0, sigma).expect("positive std");
    for v in trace.iter_mut() {
        *v = (*v + normal.sample(rng)).max(0.0);
    }
}

/// Clean dip trace of a posed high-resolution occupancy, integrated over the
/// slices of the reconstruction grid.
fn dip_trace(hi: &ScalarField, factor: usize) -> Vec<f64> {
    let [n1, n2, n3] = hi.grid.dims;
    let plane = n1 * n2;
    let v = hi.grid.voxel_volume();
    let per_slice: Vec<f64> = hi.values.chunks_exact(plane).map(|s| s.iter().sum::<f64>() * v).collect();
    (0..n3 / factor).map(|k| per_slice[k * factor..(k + 1) * factor].iter().sum()).collect()
}

/// No-fill silhouette of a soft field, one softmax vote per `(i, j)` ray.
pub fn silhouette_image(field: &ScalarField, eta: f64) -> Vec<f64> {
    let [n1, n2, n3] = field.grid.dims;
    let n_pix = n1 * n2;
    let mut ray = vec![0.0; n3];
    (0..n_pix)
        .map(|pix| {
            for (k, r) in ray.iter_mut().enumerate() {
                *r = field.values[pix + n_pix * k];
            }
            let run = sfs_boundary_run(&ray);
            softmax_vote(&ray[run], eta).0
        })
        .collect()
}

/// Surface points of the union with outward normals, uniform over each
/// primitive's parameterization and kept only where no other primitive covers them.
pub fn sample_surface(phantom: &Phantom, n: usize, rng: &mut impl Rng) -> Result<(Vec<Vector3<f64>>, Vec<Vector3<f64>>)> {
    let weights: Vec<f64> = phantom.primitives.iter().map(|p| p.volume().powf(2.0 / 3.0)).collect();
    let total: f64 = weights.iter().sum();
    let mut points = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while points.len() < n {
        attempts += 1;
        if attempts > 1000 * n.max(1) {
            return Err(PalsError::Numerical(format!(
                "could not place {n} surface points on phantom '{}'",
                phantom.name
            )));
        }
        let mut pick = rng.random::<f64>() * total;
        let mut which = weights.len() - 1;
        for (i, w) in weights.iter().enumerate() {
            if pick < *w {
                which = i;
                break;
            }
            pick -= w;
        }
        let prim = &phantom.primitives[which];
        let (p, nn) = prim.surface_point(rng.random(), rng.random());
        let covered = phantom.primitives.iter().enumerate().any(|(i, q)| i != which && q.signed_distance(&p) < 0.0);
        if !covered {
            points.push(p);
            normals.push(nn);
        }
    }
    Ok((points, normals))
}

/// Generates `spec.n_experiments` experiments of `spec.modality` from the phantom.
///
/// True poses are drawn first; the data are produced under the true poses and
/// only the recorded poses carry the calibration noise. Every experiment uses
/// its own random stream, so the output does not depend on the thread count.
pub fn simulate(phantom: &Phantom, spec: &SimulationSpec) -> Result<Simulation> {
    spec.validate()?;
    phantom.validate()?;
    let factor = spec.factor()?;
    let edge = spec.grid_lo.extent.iter().cloned().fold(0.0, f64::max);
    let mut pose_rng = ChaCha8Rng::seed_from_u64(spec.noise.seed);
    let truth: Vec<AcquisitionParams> = (0..spec.n_experiments)
        .map(|_| {
            if spec.random_poses {
                random_pose(&mut pose_rng, spec.pose_box_frac * edge)
            } else {
                AcquisitionParams::default()
            }
        })
        .collect();
    let sigma_angle = spec.noise.angle_sigma_deg.to_radians();
    let sigma_trans = spec.noise.trans_frac * edge;
    let x_mid = spec.grid_lo.mid();
    let sigma_data = spec.noise.data_sigma_voxels * spec.grid_lo.voxel_volume();

    let stream = |j: usize| {
        let mut r = ChaCha8Rng::seed_from_u64(spec.noise.seed);
        r.set_stream(j as u64 + 1);
        r
    };

    let data = match spec.modality {
        Modality::Dip => {
            let exps = truth
                .par_iter()
                .enumerate()
                .map(|(j, acq)| {
                    let mut rng = stream(j);
                    let hi = voxelize_posed(phantom, &spec.grid_hi, &RigidTransform::new(*acq, x_mid));
                    let mut trace = dip_trace(&hi, factor);
                    add_trace_noise(&mut rng, &mut trace, sigma_data);
                    DipExperiment::new(perturb_pose(&mut rng, acq, sigma_angle, sigma_trans), trace)
                })
                .collect::<Result<_>>()?;
            ExperimentData::Dip(exps)
        }
        Modality::Sfs => {
            let exps = truth
                .par_iter()
                .enumerate()
                .map(|(j, acq)| {
                    let mut rng = stream(j);
                    let hi = voxelize_posed(phantom, &spec.grid_hi, &RigidTransform::new(*acq, x_mid));
                    let lo = downsample(&hi, factor)?;
                    let image = silhouette_image(&lo, spec.eta);
                    SilhouetteExperiment::new(perturb_pose(&mut rng, acq, sigma_angle, sigma_trans), image, spec.eta)
                })
                .collect::<Result<_>>()?;
            ExperimentData::Sfs(exps)
        }
        Modality::Pc => {
            let exps = truth
                .par_iter()
                .enumerate()
                .map(|(j, acq)| {
                    let mut rng = stream(j);
                    let t = RigidTransform::new(*acq, x_mid);
                    let q: Matrix3<f64> = *t.rotation();
                    let (points, normals) = sample_surface(phantom, spec.n_points, &mut rng)?;
                    let points = points.iter().map(|p| t.apply(p)).collect();
                    let normals = normals.iter().map(|n| (q * n).normalize()).collect();
                    let recorded = perturb_pose(&mut rng, acq, sigma_angle, sigma_trans);
                    PointCloudData::new(points, normals, spec.offset(), spec.level, recorded)
                })
                .collect::<Result<_>>()?;
            ExperimentData::Pc(exps)
        }
    };
    Ok(Simulation { data, truth })
}

/// Reconstruction-quality metrics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub iou: f64,
    pub volume_rel_err: f64,
    #[serde(default)]
    pub misfit_history: Vec<f64>,
}

fn check_same_grid(a: &ScalarField, b: &ScalarField) -> Result<()> {
    if a.grid != b.grid {
        return Err(PalsError::Contract(format!("fields live on different grids ({:?} vs {:?})", a.grid.dims, b.grid.dims)));
    }
    Ok(())
}

/// Binary reference on `spec.grid_lo`: the phantom rasterized on `grid_hi`,
/// block-averaged to occupancy fractions and thresholded like a reconstruction.
/// An exact reconstruction of the occupancy scores IoU 1 against it.
pub fn ground_truth(phantom: &Phantom, spec: &SimulationSpec, threshold: f64) -> Result<ScalarField> {
    let occupancy = downsample(&voxelize(phantom, &spec.grid_hi), spec.factor()?)?;
    binarize(&occupancy, threshold)
}

/// Intersection over union of `values > 0.5`. Two empty volumes count as identical.
pub fn iou(a: &ScalarField, b: &ScalarField) -> Result<f64> {
    check_same_grid(a, b)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (x, y) in a.values.iter().zip(&b.values) {
        let (x, y) = (*x > 0.5, *y > 0.5);
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// `|V(recon) - V(truth)| / V(truth)` over binarized volumes.
pub fn volume_rel_err(recon: &ScalarField, truth: &ScalarField) -> Result<f64> {
    check_same_grid(recon, truth)?;
    let count = |f: &ScalarField| f.values.iter().filter(|v| **v > 0.5).count() as f64;
    let t = count(truth);
    if t == 0.0 {
        return Err(PalsError::Domain("reference volume is empty".into()));
    }
    Ok((count(recon) - t).abs() / t)
}

pub fn metrics(recon: &ScalarField, truth: &ScalarField, misfit_history: Vec<f64>) -> Result<Metrics> {
    Ok(Metrics { iou: iou(recon, truth)?, volume_rel_err: volume_rel_err(recon, truth)?, misfit_history })
}
