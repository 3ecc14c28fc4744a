//! Synthetic phantoms, simulated data, metrics, file formats and the
//! finite-difference gradient check.

pub mod fd;
pub mod gradcheck;
pub mod io;
pub mod phantom;
pub mod simulate;

pub use gradcheck::{gradcheck, gradcheck_all, GradFamily, GradReport};
pub use phantom::{downsample, voxelize, Phantom, Primitive};
pub use simulate::{
    add_trace_noise, ground_truth, iou, metrics, perturb_pose, random_pose, sample_surface, silhouette_image, simulate, volume_rel_err,
    voxelize_posed, ExperimentData, Metrics, Modality, NoiseSpec, Simulation, SimulationSpec,
};
