//! Augmented-reality rendering of vehicle meshes onto background plates.

mod mesh;
mod raster;

pub use mesh::{load_mesh, load_mesh_with_meta, mesh_from_obj, read_meta, Axis, Mesh, ModelMeta};
pub use raster::{render_scene, solo_coverage, Lighting, RenderResult, NEAR_PLANE};

use std::sync::Arc;

use nalgebra::{Rotation3, Vector2, Vector3};
use thiserror::Error;

use crate::traffic::VehicleState;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("mesh has no vertices or faces")]
    EmptyMesh,
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("model metadata: {message}")]
    Meta { message: String },
    #[error("background is {got:?}, camera expects {expected:?}")]
    DimensionMismatch { expected: (u32, u32), got: (u32, u32) },
}

/// Rigid placement plus uniform scale: `world = Rz(heading) * (scale * v) + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelTransform {
    pub heading: f64,
    pub translation: Vector2<f64>,
    pub scale: f64,
}

impl ModelTransform {
    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        let r = Rotation3::from_axis_angle(&Vector3::z_axis(), self.heading);
        r * (v * self.scale) + Vector3::new(self.translation.x, self.translation.y, 0.0)
    }

    /// Rotates a direction (no scale or translation).
    pub fn apply_direction(&self, v: &Vector3<f64>) -> Vector3<f64> {
        Rotation3::from_axis_angle(&Vector3::z_axis(), self.heading) * v
    }
}

/// A mesh placed in the world.
#[derive(Debug, Clone)]
pub struct VehicleInstance {
    pub id: u64,
    pub model_id: String,
    pub mesh: Arc<Mesh>,
    pub transform: ModelTransform,
}

impl VehicleInstance {
    /// Places `mesh` at a simulated vehicle state, scaling the mesh so its
    /// length equals the state's length.
    pub fn place(state: &VehicleState, mesh: Arc<Mesh>) -> Self {
        let scale = state.length / mesh.length();
        Self {
            id: state.id,
            model_id: state.model_id.clone(),
            transform: ModelTransform {
                heading: state.heading,
                translation: Vector2::new(state.position[0], state.position[1]),
                scale,
            },
            mesh,
        }
    }

    /// World-space corners of the bounding-box bottom face, in order
    /// front-left, rear-left, rear-right, front-right (vehicle frame).
    pub fn footprint_corners(&self) -> [Vector3<f64>; 4] {
        let lo = self.mesh.bbox_min;
        let hi = self.mesh.bbox_max;
        [
            Vector3::new(hi.x, hi.y, 0.0),
            Vector3::new(lo.x, hi.y, 0.0),
            Vector3::new(lo.x, lo.y, 0.0),
            Vector3::new(hi.x, lo.y, 0.0),
        ]
        .map(|c| self.transform.apply(&c))
    }
}
