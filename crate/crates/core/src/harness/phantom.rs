use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::calib::rotation_matrix;
use crate::error::{PalsError, Result};
use crate::field::{GridSpec, ScalarField};

/// An analytic solid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase", deny_unknown_fields)]
pub enum Primitive {
    /// Ellipsoid with semi-axes `radii`, rotated by `Q(theta, phi)`.
    Ellipsoid {
        center: [f64; 3],
        radii: [f64; 3],
        #[serde(default)]
        theta: f64,
        #[serde(default)]
        phi: f64,
    },
    /// Axis-aligned box.
    Box { min: [f64; 3], max: [f64; 3] },
}

impl Primitive {
    pub fn sphere(center: Vector3<f64>, radius: f64) -> Self {
        Primitive::Ellipsoid { center: center.into(), radii: [radius; 3], theta: 0.0, phi: 0.0 }
    }

    fn axes(theta: f64, phi: f64) -> Matrix3<f64> {
        rotation_matrix(theta, phi)
    }

    /// Point in the ellipsoid's own frame, scaled so the surface is the unit sphere.
    fn local(center: &[f64; 3], radii: &[f64; 3], theta: f64, phi: f64, x: &Vector3<f64>) -> Vector3<f64> {
        let q = Self::axes(theta, phi);
        let z = q.transpose() * (x - Vector3::from(*center));
        Vector3::new(z.x / radii[0], z.y / radii[1], z.z / radii[2])
    }

    pub fn contains(&self, x: &Vector3<f64>) -> bool {
        match self {
            Primitive::Ellipsoid { center, radii, theta, phi } => {
                Self::local(center, radii, *theta, *phi, x).norm_squared() <= 1.0
            }
            Primitive::Box { min, max } => (0..3).all(|a| x[a] >= min[a] && x[a] <= max[a]),
        }
    }

    pub fn volume(&self) -> f64 {
        match self {
            Primitive::Ellipsoid { radii, .. } => 4.0 / 3.0 * std::f64::consts::PI * radii[0] * radii[1] * radii[2],
            Primitive::Box { min, max } => (0..3).map(|a| max[a] - min[a]).product(),
        }
    }

    /// Surface point and outward unit normal for surface coordinates `(s, t) ∈ [0,1)²`.
    pub fn surface_point(&self, s: f64, t: f64) -> (Vector3<f64>, Vector3<f64>) {
        match self {
            Primitive::Ellipsoid { center, radii, theta, phi } => {
                let cz = 1.0 - 2.0 * s;
                let sz = (1.0 - cz * cz).max(0.0).sqrt();
                let az = 2.0 * std::f64::consts::PI * t;
                let u = Vector3::new(sz * az.cos(), sz * az.sin(), cz);
                let q = Self::axes(*theta, *phi);
                let p = Vector3::new(u.x * radii[0], u.y * radii[1], u.z * radii[2]);
                let n = Vector3::new(u.x / radii[0], u.y / radii[1], u.z / radii[2]);
                (q * p + Vector3::from(*center), (q * n).normalize())
            }
            Primitive::Box { min, max } => {
                // pick a face proportional to its area, then a point on it
                let e = Vector3::new(max[0] - min[0], max[1] - min[1], max[2] - min[2]);
                let areas = [e.y * e.z, e.y * e.z, e.x * e.z, e.x * e.z, e.x * e.y, e.x * e.y];
                let total: f64 = areas.iter().sum();
                let mut acc = 0.0;
                let mut face = 5;
                for (f, a) in areas.iter().enumerate() {
                    acc += a / total;
                    if s < acc {
                        face = f;
                        break;
                    }
                }
                let lo = if face == 0 { 0.0 } else { areas[..face].iter().sum::<f64>() / total };
                let local_s = ((s - lo) / (areas[face] / total)).clamp(0.0, 1.0);
                let axis = face / 2;
                let (a1, a2) = ((axis + 1) % 3, (axis + 2) % 3);
                let mut p = Vector3::from(*min);
                p[axis] = if face % 2 == 0 { min[axis] } else { max[axis] };
                p[a1] = min[a1] + local_s * e[a1];
                p[a2] = min[a2] + t * e[a2];
                let mut n = Vector3::zeros();
                n[axis] = if face % 2 == 0 { -1.0 } else { 1.0 };
                (p, n)
            }
        }
    }

    /// Signed distance for spheres and boxes; an algebraic approximation for general ellipsoids.
    pub fn signed_distance(&self, x: &Vector3<f64>) -> f64 {
        match self {
            Primitive::Ellipsoid { center, radii, theta, phi } => {
                let l = Self::local(center, radii, *theta, *phi, x);
                let k0 = l.norm();
                let g = Vector3::new(l.x / radii[0], l.y / radii[1], l.z / radii[2]).norm();
                if g == 0.0 {
                    -radii.iter().cloned().fold(f64::INFINITY, f64::min)
                } else {
                    k0 * (k0 - 1.0) / g
                }
            }
            Primitive::Box { min, max } => {
                let c = (Vector3::from(*min) + Vector3::from(*max)) / 2.0;
                let h = (Vector3::from(*max) - Vector3::from(*min)) / 2.0;
                let q = (x - c).abs() - h;
                let outside = q.map(|v| v.max(0.0)).norm();
                outside + q.max().min(0.0)
            }
        }
    }
}

/// Union of primitives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phantom {
    pub name: String,
    pub primitives: Vec<Primitive>,
}

impl Phantom {
    pub fn new(name: impl Into<String>, primitives: Vec<Primitive>) -> Result<Self> {
        let p = Phantom { name: name.into(), primitives };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.primitives.is_empty() {
            return Err(PalsError::Config(format!("phantom '{}' has no primitives", self.name)));
        }
        for p in &self.primitives {
            let ok = match p {
                Primitive::Ellipsoid { center, radii, theta, phi } => {
                    radii.iter().all(|r| *r > 0.0) && center.iter().chain([theta, phi]).all(|v| v.is_finite())
                }
                Primitive::Box { min, max } => (0..3).all(|a| min[a] < max[a]),
            };
            if !ok {
                return Err(PalsError::Config(format!("degenerate primitive in phantom '{}': {p:?}", self.name)));
            }
        }
        Ok(())
    }

    pub fn contains(&self, x: &Vector3<f64>) -> bool {
        self.primitives.iter().any(|p| p.contains(x))
    }

    /// Union signed distance (exact away from primitive intersections for spheres and boxes).
    pub fn signed_distance(&self, x: &Vector3<f64>) -> f64 {
        self.primitives.iter().map(|p| p.signed_distance(x)).fold(f64::INFINITY, f64::min)
    }

    /// A single ellipsoid with distinct semi-axes, tilted off the grid axes.
    pub fn ellipsoid(mid: Vector3<f64>) -> Self {
        Phantom {
            name: "ellipsoid".into(),
            primitives: vec![Primitive::Ellipsoid {
                center: (mid + Vector3::new(0.1, -0.05, 0.05)).into(),
                radii: [1.2, 0.8, 0.6],
                theta: 0.5,
                phi: 0.7,
            }],
        }
    }

    pub fn sphere(mid: Vector3<f64>, radius: f64) -> Self {
        Phantom { name: "sphere".into(), primitives: vec![Primitive::sphere(mid, radius)] }
    }

    /// A non-convex "dumbbell": two balls joined by a thin bar, plus a side lobe.
    pub fn dumbbell(mid: Vector3<f64>) -> Self {
        let m = mid;
        Phantom {
            name: "dumbbell".into(),
            primitives: vec![
                Primitive::sphere(m + Vector3::new(-0.85, 0.0, 0.0), 0.6),
                Primitive::sphere(m + Vector3::new(0.85, 0.1, 0.0), 0.55),
                Primitive::Box {
                    min: (m + Vector3::new(-0.85, -0.15, -0.15)).into(),
                    max: (m + Vector3::new(0.85, 0.15, 0.15)).into(),
                },
                Primitive::Ellipsoid {
                    center: (m + Vector3::new(0.0, 0.55, 0.3)).into(),
                    radii: [0.3, 0.45, 0.3],
                    theta: 0.3,
                    phi: 0.4,
                },
            ],
        }
    }

    /// Named built-in phantom on a domain with midpoint `mid`.
    pub fn builtin(name: &str, mid: Vector3<f64>) -> Result<Self> {
        match name {
            "ellipsoid" => Ok(Self::ellipsoid(mid)),
            "sphere" => Ok(Self::sphere(mid, 1.0)),
            "dumbbell" => Ok(Self::dumbbell(mid)),
            other => Err(PalsError::Config(format!("unknown phantom '{other}' (ellipsoid, sphere, dumbbell)"))),
        }
    }
}

/// Binary occupancy at voxel centers.
pub fn voxelize(phantom: &Phantom, grid: &GridSpec) -> ScalarField {
    let values = (0..grid.len()).map(|i| if phantom.contains(&grid.center_of(i)) { 1.0 } else { 0.0 }).collect();
    ScalarField { grid: *grid, values }
}

/// Average over `factor³` blocks.
pub fn downsample(field: &ScalarField, factor: usize) -> Result<ScalarField> {
    let coarse = field.grid.coarsen(factor)?;
    let [n1, n2, n3] = coarse.dims;
    let norm = 1.0 / (factor * factor * factor) as f64;
    let mut values = vec![0.0; coarse.len()];
    for k in 0..n3 {
        for j in 0..n2 {
            for i in 0..n1 {
                let mut acc = 0.0;
                for dk in 0..factor {
                    for dj in 0..factor {
                        for di in 0..factor {
                            acc += field.at(i * factor + di, j * factor + dj, k * factor + dk);
                        }
                    }
                }
                values[coarse.index(i, j, k)] = acc * norm;
            }
        }
    }
    Ok(ScalarField { grid: coarse, values })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_box_gives_all_ones() {
        let grid = GridSpec::cube(8, 5.0).unwrap();
        let p = Phantom::new("cube", vec![Primitive::Box { min: [0.0; 3], max: [5.0; 3] }]).unwrap();
        assert!(voxelize(&p, &grid).values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn downsample_constant_and_bad_factor() {
        let grid = GridSpec::cube(8, 5.0).unwrap();
        let f = ScalarField::constant(grid, 0.25);
        let d = downsample(&f, 2).unwrap();
        assert_eq!(d.grid.dims, [4, 4, 4]);
        assert!(d.values.iter().all(|&v| v == 0.25));
        assert!(downsample(&f, 3).is_err());
    }

    #[test]
    fn sphere_volume_at_64() {
        let grid = GridSpec::cube(64, 5.0).unwrap();
        let r = 1.3;
        let f = voxelize(&Phantom::sphere(grid.mid(), r), &grid);
        let exact = 4.0 / 3.0 * std::f64::consts::PI * r * r * r;
        assert!((f.volume() - exact).abs() / exact < 0.03);
    }

    #[test]
    fn surface_samples_lie_on_the_surface() {
        let mid = Vector3::repeat(2.5);
        for p in Phantom::dumbbell(mid).primitives.iter().chain(Phantom::ellipsoid(mid).primitives.iter()) {
            for k in 0..50 {
                let (x, n) = p.surface_point((k as f64 * 0.618) % 1.0, (k as f64 * 0.377) % 1.0);
                assert!(p.signed_distance(&x).abs() < 1e-9);
                assert!((n.norm() - 1.0).abs() < 1e-12);
                assert!(p.signed_distance(&(x + n * 1e-4)) > 0.0);
            }
        }
    }

    #[test]
    fn rejects_empty_and_degenerate() {
        assert!(Phantom::new("x", vec![]).is_err());
        assert!(Phantom::new("x", vec![Primitive::Box { min: [1.0; 3], max: [1.0; 3] }]).is_err());
        assert!(Phantom::builtin("teapot", Vector3::zeros()).is_err());
    }
}
