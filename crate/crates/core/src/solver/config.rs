use serde::{Deserialize, Serialize};

use crate::error::{PalsError, Result};

const POSE_PRIOR_WEIGHT: f64 = 1e-2;

/// Inner Gauss-Newton settings. `lambda0`, `barrier_weight` and
/// `pose_prior_weight` are relative to the data misfit of the initial model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GNConfig {
    pub it_gn: usize,
    pub lambda0: f64,
    /// Factor applied to λ after every outer iteration.
    pub lambda_decay: f64,
    pub armijo_c: f64,
    pub armijo_shrink: f64,
    pub armijo_max: usize,
    /// Weight of the log-det barrier on ellipsoid shape matrices.
    pub barrier_weight: f64,
    /// Weight of the pull toward the recorded poses when calibrating; 0 disables it.
    pub pose_prior_weight: f64,
}

impl Default for GNConfig {
    fn default() -> Self {
        GNConfig {
            it_gn: 5,
            lambda0: 1e-3,
            lambda_decay: 0.8,
            armijo_c: 1e-4,
            armijo_shrink: 0.5,
            armijo_max: 20,
            barrier_weight: 1e-6,
            pose_prior_weight: POSE_PRIOR_WEIGHT,
        }
    }
}

impl GNConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lambda0", self.lambda0),
            ("lambda_decay", self.lambda_decay),
            ("armijo_c", self.armijo_c),
            ("barrier_weight", self.barrier_weight),
        ];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return Err(PalsError::Config(format!("{name} must be positive, got {v}")));
        }
        if !(self.pose_prior_weight >= 0.0 && self.pose_prior_weight.is_finite()) {
            return Err(PalsError::Config(format!("pose_prior_weight must be non-negative, got {}", self.pose_prior_weight)));
        }
        if self.it_gn == 0 || self.armijo_max == 0 {
            return Err(PalsError::Config("it_gn and armijo_max must be at least 1".into()));
        }
        if !(self.armijo_shrink > 0.0 && self.armijo_shrink < 1.0) {
            return Err(PalsError::Config(format!("armijo_shrink must lie in (0, 1), got {}", self.armijo_shrink)));
        }
        Ok(())
    }
}

/// Outer-loop schedule: how many bases to start with, how many to add and where.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RBFSchedule {
    pub p0: usize,
    pub p: usize,
    pub outer_iters: usize,
    pub init_radius: f64,
    pub add_radius: f64,
    /// Minimum Chebyshev distance, in cells, between a new center and any other center.
    pub min_spacing_cells: usize,
    pub binarize_threshold: f64,
    /// Constant added to the RBF sum before the Heaviside, so that empty space reads 0.
    pub bias: f64,
}

impl Default for RBFSchedule {
    fn default() -> Self {
        RBFSchedule {
            p0: 20,
            p: 5,
            outer_iters: 40,
            init_radius: 1.0,
            add_radius: 1.0 / 3.0,
            min_spacing_cells: 2,
            binarize_threshold: 0.7,
            bias: -0.2,
        }
    }
}

impl RBFSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.p0 == 0 || self.p == 0 {
            return Err(PalsError::Config("p0 and p must be at least 1".into()));
        }
        if !(self.init_radius > 0.0 && self.add_radius > 0.0) {
            return Err(PalsError::Config("basis radii must be positive".into()));
        }
        if !(self.binarize_threshold > 0.0 && self.binarize_threshold < 1.0) {
            return Err(PalsError::Config(format!(
                "binarize_threshold must lie in (0, 1), got {}",
                self.binarize_threshold
            )));
        }
        if !self.bias.is_finite() {
            return Err(PalsError::Config("bias must be finite".into()));
        }
        Ok(())
    }

    /// Basis count after `k` outer iterations.
    pub fn n_rbf_after(&self, k: usize) -> usize {
        self.p0 + k * self.p
    }
}
