use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{PalsError, Result};

/// Default edge length of the reconstruction cube.
pub const DEFAULT_EXTENT: f64 = 5.0;

/// Regular voxel grid. Samples sit at cell centers and are stored x-fastest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dims: [usize; 3],
    pub origin: [f64; 3],
    pub extent: [f64; 3],
}

impl GridSpec {
    pub fn new(dims: [usize; 3], origin: [f64; 3], extent: [f64; 3]) -> Result<Self> {
        let grid = GridSpec { dims, origin, extent };
        grid.validate()?;
        Ok(grid)
    }

    /// `n³` grid over `[0, edge]³`.
    pub fn cube(n: usize, edge: f64) -> Result<Self> {
        Self::new([n; 3], [0.0; 3], [edge; 3])
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d < 2) {
            return Err(PalsError::Config(format!("grid dims must all be >= 2, got {:?}", self.dims)));
        }
        if self.extent.iter().any(|&e| !(e > 0.0) || !e.is_finite()) {
            return Err(PalsError::Config(format!("grid extent must be positive, got {:?}", self.extent)));
        }
        if self.origin.iter().any(|o| !o.is_finite()) {
            return Err(PalsError::Config("grid origin must be finite".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self) -> Vector3<f64> {
        Vector3::new(
            self.extent[0] / self.dims[0] as f64,
            self.extent[1] / self.dims[1] as f64,
            self.extent[2] / self.dims[2] as f64,
        )
    }

    pub fn voxel_volume(&self) -> f64 {
        let h = self.spacing();
        h.x * h.y * h.z
    }

    pub fn origin(&self) -> Vector3<f64> {
        Vector3::from(self.origin)
    }

    /// Geometric center of the domain, used as the rotation center.
    pub fn mid(&self) -> Vector3<f64> {
        Vector3::new(
            self.origin[0] + 0.5 * self.extent[0],
            self.origin[1] + 0.5 * self.extent[1],
            self.origin[2] + 0.5 * self.extent[2],
        )
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let n1 = self.dims[0];
        let n2 = self.dims[1];
        [idx % n1, (idx / n1) % n2, idx / (n1 * n2)]
    }

    #[inline]
    pub fn center(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        let h = self.spacing();
        Vector3::new(
            self.origin[0] + (i as f64 + 0.5) * h.x,
            self.origin[1] + (j as f64 + 0.5) * h.y,
            self.origin[2] + (k as f64 + 0.5) * h.z,
        )
    }

    pub fn center_of(&self, idx: usize) -> Vector3<f64> {
        let [i, j, k] = self.coords(idx);
        self.center(i, j, k)
    }

    /// All cell centers in storage order.
    pub fn centers(&self) -> Vec<Vector3<f64>> {
        (0..self.len()).map(|idx| self.center_of(idx)).collect()
    }

    /// Continuous index coordinate of `x` (cell centers land on integers).
    pub fn continuous_index(&self, x: &Vector3<f64>) -> Vector3<f64> {
        let h = self.spacing();
        Vector3::new(
            (x.x - self.origin[0]) / h.x - 0.5,
            (x.y - self.origin[1]) / h.y - 0.5,
            (x.z - self.origin[2]) / h.z - 0.5,
        )
    }

    /// Voxel containing `x`, if any.
    pub fn voxel_of(&self, x: &Vector3<f64>) -> Option<[usize; 3]> {
        let h = self.spacing();
        let mut out = [0usize; 3];
        for a in 0..3 {
            let t = ((x[a] - self.origin[a]) / h[a]).floor();
            if t < 0.0 || t >= self.dims[a] as f64 {
                return None;
            }
            out[a] = t as usize;
        }
        Some(out)
    }

    /// Inclusive voxel index range whose centers may fall in `[lo, hi]`, padded by `pad` voxels.
    pub fn index_range(&self, lo: &Vector3<f64>, hi: &Vector3<f64>, pad: usize) -> Option<[(usize, usize); 3]> {
        let h = self.spacing();
        let mut out = [(0usize, 0usize); 3];
        for a in 0..3 {
            let n = self.dims[a] as i64;
            let first = ((lo[a] - self.origin[a]) / h[a] - 0.5).floor() as i64 - pad as i64;
            let last = ((hi[a] - self.origin[a]) / h[a] - 0.5).ceil() as i64 + pad as i64;
            let first = first.max(0);
            let last = last.min(n - 1);
            if first > last {
                return None;
            }
            out[a] = (first as usize, last as usize);
        }
        Some(out)
    }

    /// Same grid with every dimension divided by `factor`.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.dims.iter().any(|d| d % factor != 0) {
            return Err(PalsError::Config(format!(
                "factor {factor} does not divide grid dims {:?}",
                self.dims
            )));
        }
        GridSpec::new(
            [self.dims[0] / factor, self.dims[1] / factor, self.dims[2] / factor],
            self.origin,
            self.extent,
        )
    }

    /// Same domain at a different per-axis resolution.
    pub fn with_dims(&self, dims: [usize; 3]) -> Result<Self> {
        GridSpec::new(dims, self.origin, self.extent)
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { dims: [32; 3], origin: [0.0; 3], extent: [DEFAULT_EXTENT; 3] }
    }
}
