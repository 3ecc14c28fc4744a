use std::sync::Arc;

use nalgebra::{DMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::calib::{AcquisitionParams, ExtendedParameters, RigidTransform};
use crate::error::{PalsError, Result};
use crate::field::{FieldModel, GridSpec, ParameterVector};
use crate::forward::dip::dip_eval;
use crate::forward::pointcloud::pc_eval;
use crate::forward::sfs::sfs_eval;
use crate::forward::{DipExperiment, PointCloudData, SilhouetteExperiment};

/// Residuals of one experiment and their Jacobian in the local layout
/// `[m | θ, φ, b]` (the experiment's own acquisition block last).
pub struct TermEval {
    pub residuals: Vec<f64>,
    pub jacobian: Option<DMatrix<f64>>,
}

/// One experiment of one modality, seen as a residual function of the PaLS
/// parameters and the experiment's pose.
pub trait ResidualModel: Send + Sync {
    fn modality(&self) -> &'static str;

    fn n_residuals(&self) -> usize;

    /// Pose as recorded by the acquisition.
    fn recorded_acq(&self) -> AcquisitionParams;

    /// Grid the forward model samples on, if any.
    fn grid(&self) -> Option<&GridSpec>;

    fn evaluate(&self, pals: &ParameterVector, acq: &AcquisitionParams, want_jacobian: bool) -> Result<TermEval>;

    /// `∂‖r‖²/∂u` mapped back onto the voxels of `grid` in object coordinates.
    fn misfit_gradient_u(&self, pals: &ParameterVector, acq: &AcquisitionParams, grid: &GridSpec)
        -> Result<Vec<f64>>;
}

/// Dip traces on a fixed grid.
pub struct DipTerm {
    pub experiment: DipExperiment,
    pub grid: GridSpec,
    pub model: FieldModel,
}

impl DipTerm {
    pub fn new(experiment: DipExperiment, grid: GridSpec, model: FieldModel) -> Result<Self> {
        experiment.check_grid(&grid)?;
        Ok(DipTerm { experiment, grid, model })
    }
}

impl ResidualModel for DipTerm {
    fn modality(&self) -> &'static str {
        "dip"
    }

    fn n_residuals(&self) -> usize {
        self.experiment.observed.len()
    }

    fn recorded_acq(&self) -> AcquisitionParams {
        self.experiment.acq
    }

    fn grid(&self) -> Option<&GridSpec> {
        Some(&self.grid)
    }

    fn evaluate(&self, pals: &ParameterVector, acq: &AcquisitionParams, want_jacobian: bool) -> Result<TermEval> {
        let ev = dip_eval(pals, acq, &self.grid, &self.model, want_jacobian)?;
        let residuals = ev.trace.iter().zip(&self.experiment.observed).map(|(a, b)| a - b).collect();
        Ok(TermEval { residuals, jacobian: ev.jacobian })
    }

    fn misfit_gradient_u(
        &self,
        pals: &ParameterVector,
        acq: &AcquisitionParams,
        grid: &GridSpec,
    ) -> Result<Vec<f64>> {
        let r = self.evaluate(pals, acq, false)?.residuals;
        let v = self.grid.voxel_volume();
        let t = RigidTransform::new(*acq, self.grid.mid());
        let o = self.grid.origin[2];
        let h = self.grid.spacing()[2];
        let n3 = self.grid.dims[2] as f64;
        Ok((0..grid.len())
            .map(|idx| {
                let y = t.apply(&grid.center_of(idx));
                let k = ((y.z - o) / h).floor();
                if k >= 0.0 && k < n3 {
                    2.0 * r[k as usize] * v
                } else {
                    0.0
                }
            })
            .collect())
    }
}

/// No-fill silhouettes on a fixed grid.
pub struct SilhouetteTerm {
    pub experiment: SilhouetteExperiment,
    pub grid: GridSpec,
    pub model: FieldModel,
}

impl SilhouetteTerm {
    pub fn new(experiment: SilhouetteExperiment, grid: GridSpec, model: FieldModel) -> Result<Self> {
        experiment.check_grid(&grid)?;
        Ok(SilhouetteTerm { experiment, grid, model })
    }
}

impl ResidualModel for SilhouetteTerm {
    fn modality(&self) -> &'static str {
        "sfs"
    }

    fn n_residuals(&self) -> usize {
        self.experiment.observed.len()
    }

    fn recorded_acq(&self) -> AcquisitionParams {
        self.experiment.acq
    }

    fn grid(&self) -> Option<&GridSpec> {
        Some(&self.grid)
    }

    fn evaluate(&self, pals: &ParameterVector, acq: &AcquisitionParams, want_jacobian: bool) -> Result<TermEval> {
        let ev = sfs_eval(pals, acq, self.experiment.eta, &self.grid, &self.model, want_jacobian)?;
        let residuals = ev.image.iter().zip(&self.experiment.observed).map(|(a, b)| a - b).collect();
        Ok(TermEval { residuals, jacobian: ev.jacobian })
    }

    fn misfit_gradient_u(
        &self,
        pals: &ParameterVector,
        acq: &AcquisitionParams,
        grid: &GridSpec,
    ) -> Result<Vec<f64>> {
        let ev = sfs_eval(pals, acq, self.experiment.eta, &self.grid, &self.model, false)?;
        let n_pix = self.grid.dims[0] * self.grid.dims[1];
        let g_rot: Vec<f64> = ev
            .voxel_weights
            .iter()
            .enumerate()
            .map(|(v, w)| {
                let pix = v % n_pix;
                2.0 * (ev.image[pix] - self.experiment.observed[pix]) * w
            })
            .collect();
        let t = RigidTransform::new(*acq, self.grid.mid());
        Ok((0..grid.len())
            .map(|idx| match self.grid.voxel_of(&t.apply(&grid.center_of(idx))) {
                Some([i, j, k]) => g_rot[self.grid.index(i, j, k)],
                None => 0.0,
            })
            .collect())
    }
}

/// Mesh-free point-cloud residuals.
pub struct PointCloudTerm {
    pub cloud: PointCloudData,
    pub model: FieldModel,
    /// Rotation center of the cloud's pose.
    pub x_mid: Vector3<f64>,
}

impl PointCloudTerm {
    pub fn new(cloud: PointCloudData, model: FieldModel, x_mid: Vector3<f64>) -> Self {
        PointCloudTerm { cloud, model, x_mid }
    }
}

impl ResidualModel for PointCloudTerm {
    fn modality(&self) -> &'static str {
        "pc"
    }

    fn n_residuals(&self) -> usize {
        3 * self.cloud.len()
    }

    fn recorded_acq(&self) -> AcquisitionParams {
        self.cloud.acq
    }

    fn grid(&self) -> Option<&GridSpec> {
        None
    }

    fn evaluate(&self, pals: &ParameterVector, acq: &AcquisitionParams, want_jacobian: bool) -> Result<TermEval> {
        let ev = pc_eval(pals, acq, &self.cloud, &self.model, &self.x_mid, want_jacobian)?;
        Ok(TermEval { residuals: ev.residuals, jacobian: ev.jacobian })
    }

    fn misfit_gradient_u(
        &self,
        pals: &ParameterVector,
        acq: &AcquisitionParams,
        grid: &GridSpec,
    ) -> Result<Vec<f64>> {
        let r = self.evaluate(pals, acq, false)?.residuals;
        let t = RigidTransform::new(*acq, self.x_mid);
        let mut g = vec![0.0; grid.len()];
        for (p, r) in self.cloud.samples().iter().zip(&r) {
            if let Some([i, j, k]) = grid.voxel_of(&t.inverse(p)) {
                g[grid.index(i, j, k)] += 2.0 * r;
            }
        }
        Ok(g)
    }
}

/// A weighted residual model bound to one slot of the joint acquisition list.
#[derive(Clone)]
pub struct ObjectiveTerm {
    pub model: Arc<dyn ResidualModel>,
    pub weight: f64,
    pub modality: usize,
    pub acq_index: usize,
}

/// How modalities after the first are weighted against it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[derive(Default)]
pub enum GammaMode {
    Fixed(f64),
    /// Chosen once at the initial model so that all weighted misfits are equal.
    #[default]
    Auto,
}


/// All experiments of all modalities with their weights.
#[derive(Clone)]
pub struct JointObjective {
    pub terms: Vec<ObjectiveTerm>,
    pub gamma: GammaMode,
    pub modality_names: Vec<&'static str>,
}

/// Stacks the modalities, routing experiment `e` of modality `k` to slot
/// `Σ_{k'<k} n_{k'} + e` of the joint acquisition list. The first modality has
/// weight 1, every other one `γ`.
pub fn joint_objective(modalities: Vec<Vec<Arc<dyn ResidualModel>>>, gamma: GammaMode) -> Result<JointObjective> {
    if modalities.is_empty() || modalities.iter().any(|m| m.is_empty()) {
        return Err(PalsError::Config("the joint objective needs at least one non-empty modality".into()));
    }
    if let GammaMode::Fixed(g) = gamma {
        if !(g > 0.0 && g.is_finite()) {
            return Err(PalsError::Config(format!("gamma must be positive, got {g}")));
        }
    }
    let mut terms = Vec::new();
    let mut modality_names = Vec::new();
    for (k, models) in modalities.into_iter().enumerate() {
        modality_names.push(models[0].modality());
        let weight = match (k, gamma) {
            (0, _) => 1.0,
            (_, GammaMode::Fixed(g)) => g,
            (_, GammaMode::Auto) => 1.0,
        };
        for model in models {
            let acq_index = terms.len();
            terms.push(ObjectiveTerm { model, weight, modality: k, acq_index });
        }
    }
    Ok(JointObjective { terms, gamma, modality_names })
}

impl JointObjective {
    pub fn n_modalities(&self) -> usize {
        self.modality_names.len()
    }

    /// Recorded poses, in acquisition-slot order.
    pub fn recorded_acqs(&self) -> Vec<AcquisitionParams> {
        self.terms.iter().map(|t| t.model.recorded_acq()).collect()
    }

    /// Unweighted misfit `Σ‖r‖²` of each modality.
    pub fn modality_misfits(&self, m_ext: &ExtendedParameters) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.n_modalities()];
        for t in &self.terms {
            let r = t.model.evaluate(&m_ext.pals, &m_ext.acq_list[t.acq_index], false)?.residuals;
            out[t.modality] += r.iter().map(|v| v * v).sum::<f64>();
        }
        Ok(out)
    }

    /// Resolves [`GammaMode::Auto`] at `m_ext`; fixed weights are left alone.
    pub fn balance(&mut self, m_ext: &ExtendedParameters) -> Result<Vec<f64>> {
        let misfits = self.modality_misfits(m_ext)?;
        let mut gammas = vec![1.0; misfits.len()];
        for k in 1..misfits.len() {
            gammas[k] = match self.gamma {
                GammaMode::Fixed(g) => g,
                GammaMode::Auto if misfits[k] > 0.0 => misfits[0] / misfits[k],
                GammaMode::Auto => 1.0,
            };
        }
        for t in &mut self.terms {
            t.weight = gammas[t.modality];
        }
        Ok(gammas)
    }

    /// Common grid of the grid-based terms, if there are any.
    pub fn grid(&self) -> Result<Option<GridSpec>> {
        let mut grid: Option<GridSpec> = None;
        for t in &self.terms {
            if let Some(g) = t.model.grid() {
                match grid {
                    Some(ref known) if known != g => {
                        return Err(PalsError::Config("all grid-based experiments must share one grid".into()))
                    }
                    _ => grid = Some(*g),
                }
            }
        }
        Ok(grid)
    }
}
