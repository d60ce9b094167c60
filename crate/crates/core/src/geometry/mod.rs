//! Pinhole camera geometry.
//!
//! World coordinates are local East-North-Up meters with the road surface at
//! `z = 0`. A [`CameraPose`] maps world points into the camera frame
//! (`x_cam = R * x_world + T`), and [`CameraIntrinsics`] maps camera-frame
//! points to pixels.

mod camera;
mod enu;
mod homography;
pub mod io;
mod pnp;

pub use camera::{
    project_point, rotation_angle_between, CameraIntrinsics, CameraPose, MIN_DEPTH,
};
pub use enu::GeoReference;
pub use homography::{estimate_homography, image_to_ground, pose_to_ground_homography, Homography};
pub use pnp::{
    reprojection_report, solve_pnp, LandmarkCorrespondence, PoseSolution, ReprojectionReport,
    SolveOptions,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point is behind the camera (depth {depth:.3e} m)")]
    PointBehindCamera { depth: f64 },
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("pose refinement did not converge after {iterations} iterations (rms {rms:.4} px)")]
    NoConvergence { iterations: usize, rms: f64 },
    #[error("pixel maps to a point at infinity on the ground plane")]
    PointAtInfinity,
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}
