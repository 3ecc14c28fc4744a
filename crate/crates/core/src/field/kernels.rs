//! Scalar building blocks of the level-set field: Wendland radial profiles,
//! the piecewise-polynomial Heaviside and the pseudo-norms that feed them.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{PalsError, Result};

/// Compactly supported Wendland profile `ψ(r)`, zero for `r >= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum WendlandOrder {
    /// `(1-r)²`, C⁰.
    Psi0,
    /// `(1-r)⁴(4r+1)`, C².
    #[default]
    Psi1,
    /// `(1-r)⁶(35r²+18r+3)/3`, C⁴.
    Psi2,
    /// `(1-r)⁸(32r³+25r²+8r+1)`, C⁶.
    Psi3,
}

impl WendlandOrder {
    pub fn from_order(order: u8) -> Result<Self> {
        match order {
            0 => Ok(Self::Psi0),
            1 => Ok(Self::Psi1),
            2 => Ok(Self::Psi2),
            3 => Ok(Self::Psi3),
            other => Err(PalsError::Config(format!("Wendland order must be 0..=3, got {other}"))),
        }
    }

    pub fn order(self) -> u8 {
        match self {
            Self::Psi0 => 0,
            Self::Psi1 => 1,
            Self::Psi2 => 2,
            Self::Psi3 => 3,
        }
    }

    /// `ψ(r)` without the sign check; callers guarantee `r >= 0`.
    #[inline]
    pub fn value(self, r: f64) -> f64 {
        if r >= 1.0 {
            return 0.0;
        }
        let s = 1.0 - r;
        match self {
            Self::Psi0 => s * s,
            Self::Psi1 => {
                let s2 = s * s;
                s2 * s2 * (4.0 * r + 1.0)
            }
            Self::Psi2 => {
                let s2 = s * s;
                s2 * s2 * s2 * (35.0 * r * r + 18.0 * r + 3.0) / 3.0
            }
            Self::Psi3 => {
                let s2 = s * s;
                let s4 = s2 * s2;
                s4 * s4 * (((32.0 * r + 25.0) * r + 8.0) * r + 1.0)
            }
        }
    }

    /// `dψ/dr`, zero for `r >= 1`.
    #[inline]
    pub fn slope(self, r: f64) -> f64 {
        if r >= 1.0 {
            return 0.0;
        }
        let s = 1.0 - r;
        match self {
            Self::Psi0 => -2.0 * s,
            Self::Psi1 => -20.0 * r * s * s * s,
            Self::Psi2 => {
                let s2 = s * s;
                -(56.0 / 3.0) * r * s2 * s2 * s * (5.0 * r + 1.0)
            }
            Self::Psi3 => {
                let s2 = s * s;
                let s4 = s2 * s2;
                -22.0 * r * s4 * s2 * s * ((16.0 * r + 7.0) * r + 1.0)
            }
        }
    }
}

impl TryFrom<u8> for WendlandOrder {
    type Error = PalsError;
    fn try_from(v: u8) -> Result<Self> {
        Self::from_order(v)
    }
}

impl From<WendlandOrder> for u8 {
    fn from(o: WendlandOrder) -> u8 {
        o.order()
    }
}

pub fn wendland_eval(order: WendlandOrder, r: f64) -> Result<f64> {
    check_radius(r)?;
    Ok(order.value(r))
}

pub fn wendland_deriv(order: WendlandOrder, r: f64) -> Result<f64> {
    check_radius(r)?;
    Ok(order.slope(r))
}

fn check_radius(r: f64) -> Result<()> {
    if r < 0.0 || r.is_nan() {
        return Err(PalsError::Domain(format!("Wendland radius must be nonnegative, got {r}")));
    }
    Ok(())
}

/// Transition half-width `delta` and corner smoothing width `eps` of the Heaviside.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeavisideConfig {
    pub delta: f64,
    pub eps: f64,
}

impl Default for HeavisideConfig {
    fn default() -> Self {
        HeavisideConfig { delta: 0.1, eps: 0.01 }
    }
}

impl HeavisideConfig {
    pub fn new(delta: f64, eps: f64) -> Result<Self> {
        let cfg = HeavisideConfig { delta, eps };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps < self.delta && self.delta.is_finite()) {
            return Err(PalsError::Config(format!(
                "Heaviside requires 0 < eps < delta, got delta={} eps={}",
                self.delta, self.eps
            )));
        }
        Ok(())
    }

    /// Branch boundaries of the piecewise definition, ascending.
    pub fn knots(&self) -> [f64; 4] {
        let (d, e) = (self.delta, self.eps);
        [-d - e, -d + e, d - e, d + e]
    }

    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        let (d, e) = (self.delta, self.eps);
        if x < -d - e {
            0.0
        } else if x < -d + e {
            let t = x + d + e;
            t * t / (8.0 * d * e)
        } else if x < d - e {
            (x + d) / (2.0 * d)
        } else if x < d + e {
            let t = d + e - x;
            1.0 - t * t / (8.0 * d * e)
        } else {
            1.0
        }
    }

    #[inline]
    pub fn slope(&self, x: f64) -> f64 {
        let (d, e) = (self.delta, self.eps);
        if x < -d - e {
            0.0
        } else if x < -d + e {
            (x + d + e) / (4.0 * d * e)
        } else if x < d - e {
            1.0 / (2.0 * d)
        } else if x < d + e {
            (d + e - x) / (4.0 * d * e)
        } else {
            0.0
        }
    }
}

pub fn heaviside_eval(cfg: &HeavisideConfig, x: f64) -> f64 {
    cfg.value(x)
}

pub fn heaviside_deriv(cfg: &HeavisideConfig, x: f64) -> f64 {
    cfg.slope(x)
}

/// `sqrt(‖v‖² + eps_norm)`.
pub fn pseudo_norm(v: &Vector3<f64>, eps_norm: f64) -> Result<f64> {
    check_eps(eps_norm)?;
    Ok((v.norm_squared() + eps_norm).sqrt())
}

/// `sqrt(vᵀBv + eps_norm)`.
pub fn pseudo_norm_b(v: &Vector3<f64>, b: &Matrix3<f64>, eps_norm: f64) -> Result<f64> {
    check_eps(eps_norm)?;
    let q = v.dot(&(b * v));
    if q < 0.0 {
        return Err(PalsError::Domain(format!("weight matrix is not positive semidefinite (vᵀBv = {q:e})")));
    }
    Ok((q + eps_norm).sqrt())
}

fn check_eps(eps_norm: f64) -> Result<()> {
    if !(eps_norm > 0.0) {
        return Err(PalsError::Domain(format!("pseudo-norm floor must be positive, got {eps_norm}")));
    }
    Ok(())
}
