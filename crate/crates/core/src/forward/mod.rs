//! Forward models for the three data modalities and their sensitivities.

mod chain;
pub(crate) mod dip;
mod neighbors;
pub(crate) mod pointcloud;
pub(crate) mod sfs;

pub use dip::{dip_forward, DipExperiment};
pub use neighbors::NeighborIndex;
pub use pointcloud::{pc_residuals, PointCloudData, DEFAULT_LEVEL};
pub use sfs::{sfs_boundary_run, sfs_forward, softmax_vote, SilhouetteExperiment, BACKGROUND_FLOOR, DEFAULT_ETA};
