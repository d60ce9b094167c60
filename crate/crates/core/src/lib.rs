//! roadforge: synthetic training data for roadside vehicle detectors.
//!
//! A calibrated roadside camera plus a clean background plate is enough to
//! manufacture labeled images: simulated traffic is rendered through the
//! camera onto the plate, restyled, and annotated with the pixel position of
//! every vehicle's bottom center. The same crate ships the evaluation harness
//! that scores bottom-center detectors by pixel distance.
//!
//! Stages:
//!
//! 1. [`geometry`] – pinhole projection, landmark PnP, image/ground homographies.
//! 2. [`background`] – temporal-median background plates and a tagged library.
//! 3. [`traffic`] – IDM car-following on a lane network, pose randomization,
//!    footprint collision filtering.
//! 4. [`render`] – OBJ-subset mesh loading and a z-buffered software rasterizer.
//! 5. [`enhance`] – per-vehicle crops, photometric harmonization, and the
//!    directory exchange protocol for external translators.
//! 6. [`annotate`] – bottom-face boxes, visibility, and the dataset manifest.
//! 7. [`localize`] / [`eval`] – lifting detections to the road plane and the
//!    pixel-distance AP metrics.
//!
//! [`pipeline`] wires these into the `generate` workflow and [`service`] is the
//! HTTP facade used by the calibration UI.

pub mod annotate;
pub mod background;
pub mod enhance;
pub mod eval;
pub mod geometry;
pub mod imagebuf;
pub mod localize;
pub mod pipeline;
pub mod render;
pub mod rng;
pub mod service;
pub mod traffic;

pub use geometry::{
    CameraIntrinsics, CameraPose, GeometryError, Homography, LandmarkCorrespondence,
    PoseSolution,
};
pub use imagebuf::ImageBuffer;

/// Version string embedded in manifests and the health endpoint.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
