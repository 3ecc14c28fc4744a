//! Shape reconstruction with parametric level sets built from compactly
//! supported radial basis functions.
//!
//! The object is the super-level set of `u(x, m) = σ(bias + Σᵢ αᵢ ψ(rᵢ(x)))`
//! where each basis is spherical, ellipsoidal or parameterized by a Cholesky
//! factor. [`field`] evaluates `u` and `∂u/∂m`, [`calib`] rotates parameters
//! into an acquisition pose, [`forward`] holds the dip-trace, silhouette and
//! point-cloud models, [`solver`] runs the Gauss-Newton reconstruction and
//! [`harness`] provides phantoms, simulated data, metrics and file formats.

pub mod calib;
pub mod error;
pub mod field;
pub mod forward;
pub mod harness;
pub mod solver;

pub use error::{PalsError, Result};
