//! Ground-truth labels for rendered vehicles.
//!
//! The label of a vehicle is the tight image box around its projected 3D
//! footprint (the bottom face of the model bounding box), and the center of
//! that box. Pixel quantities are snapped to a 0.02 px grid for edges and a
//! 0.01 px grid for centers, so they serialize with two decimals and the
//! center stays recomputable from the box.

mod manifest;

pub use manifest::{
    manifest_from_json, read_manifest, write_manifest, DatasetManifest, GenerationMeta, ImageRecord, ManifestError,
    MANIFEST_SCHEMA,
};

use std::collections::HashSet;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, CameraPose};
use crate::render::{solo_coverage, RenderResult, VehicleInstance, NEAR_PLANE};

/// Default minimum visible fraction for a label to be kept.
pub const DEFAULT_MIN_VISIBLE: f64 = 0.25;

#[derive(Debug, Error, PartialEq)]
pub enum AnnotateError {
    #[error("inconsistent inputs: {0}")]
    InconsistentInputs(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub instance_id: u64,
    /// `[x, y, w, h]` in pixels.
    pub bottom_box: [f64; 4],
    pub bottom_center: [f64; 2],
    pub visible_fraction: f64,
    pub truncated: bool,
    pub model_id: String,
    /// Footprint center on the road plane, meters.
    pub ground_position: [f64; 2],
    pub heading: f64,
    pub length_m: f64,
    pub width_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BottomBox {
    pub bbox: [f64; 4],
    pub center: [f64; 2],
    pub truncated: bool,
}

fn snap(v: f64, step: f64) -> f64 {
    (v / step).round() * step
}

/// Rounds to two decimals.
pub fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// Box `[x, y, w, h]` from corner extremes, snapped so that
/// `round2(x + w / 2)` is the center.
fn make_box(x0: f64, y0: f64, x1: f64, y1: f64) -> ([f64; 4], [f64; 2]) {
    let (x0, y0) = (snap(x0, 0.02), snap(y0, 0.02));
    let (x1, y1) = (snap(x1, 0.02), snap(y1, 0.02));
    let (x, y) = (round2(x0), round2(y0));
    let (w, h) = (round2(x1 - x0), round2(y1 - y0));
    ([x, y, w, h], [round2(x + w / 2.0), round2(y + h / 2.0)])
}

/// Clips a camera-frame polygon to `z >= NEAR_PLANE`.
fn clip_polygon(poly: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    let mut out = Vec::with_capacity(poly.len() + 2);
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        let (a_in, b_in) = (a.z >= NEAR_PLANE, b.z >= NEAR_PLANE);
        if a_in {
            out.push(a);
        }
        if a_in != b_in {
            let t = (NEAR_PLANE - a.z) / (b.z - a.z);
            out.push(a + (b - a) * t);
        }
    }
    out
}

/// Projects the footprint of `instance` and returns its tight image box
/// clipped to `dims`. `None` when the footprint is entirely behind the
/// camera or does not reach the image.
///
/// A footprint partly behind the camera is cut at the near plane before
/// projection and reported as truncated.
pub fn bottom_box(
    instance: &VehicleInstance,
    k: &CameraIntrinsics,
    pose: &CameraPose,
    dims: (u32, u32),
) -> Option<BottomBox> {
    let cam: Vec<Vector3<f64>> = instance.footprint_corners().iter().map(|c| pose.to_camera(c)).collect();
    let clipped = clip_polygon(&cam);
    if clipped.is_empty() {
        return None;
    }
    let mut truncated = clipped.len() != cam.len() || clipped.iter().zip(&cam).any(|(a, b)| a != b);
    let pts: Vec<Vector2<f64>> = clipped
        .iter()
        .map(|c| Vector2::new(k.fx * c.x / c.z + k.cx, k.fy * c.y / c.z + k.cy))
        .collect();
    let min_x = pts.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
    let max_x = pts.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
    let min_y = pts.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
    let max_y = pts.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
    let (w, h) = (dims.0 as f64, dims.1 as f64);
    let (x0, y0) = (min_x.max(0.0), min_y.max(0.0));
    let (x1, y1) = (max_x.min(w), max_y.min(h));
    if x0 != min_x || y0 != min_y || x1 != max_x || y1 != max_y {
        truncated = true;
    }
    let (bbox, center) = make_box(x0, y0, x1, y1);
    if !(bbox[2] > 0.0 && bbox[3] > 0.0) {
        return None;
    }
    Some(BottomBox { bbox, center, truncated })
}

/// Labels every sufficiently visible instance of a rendered frame.
///
/// Visibility is the instance's mask pixel count over the pixel count it
/// has when rendered alone. Output is sorted by instance id.
pub fn annotate_frame(
    render: &RenderResult,
    instances: &[VehicleInstance],
    k: &CameraIntrinsics,
    pose: &CameraPose,
    min_visible: f64,
) -> Result<Vec<Annotation>, AnnotateError> {
    let dims = (render.width(), render.height());
    if dims != (k.width, k.height) {
        return Err(AnnotateError::InconsistentInputs(format!(
            "render is {}x{}, camera is {}x{}",
            dims.0, dims.1, k.width, k.height
        )));
    }
    let mut ids = HashSet::new();
    for inst in instances {
        if !ids.insert(inst.id) {
            return Err(AnnotateError::InconsistentInputs(format!("duplicate instance id {}", inst.id)));
        }
    }
    let mut counts = std::collections::HashMap::new();
    for id in render.mask.iter().flatten() {
        *counts.entry(*id).or_insert(0usize) += 1;
    }
    if let Some(stray) = counts.keys().find(|id| !ids.contains(id)) {
        return Err(AnnotateError::InconsistentInputs(format!("mask contains unknown instance {stray}")));
    }

    let mut sorted: Vec<&VehicleInstance> = instances.iter().collect();
    sorted.sort_by_key(|i| i.id);
    let mut out = Vec::new();
    for inst in sorted {
        let Some(bb) = bottom_box(inst, k, pose, dims) else { continue };
        let solo = solo_coverage(inst, k, pose);
        if solo == 0 {
            continue;
        }
        let visible = counts.get(&inst.id).copied().unwrap_or(0) as f64 / solo as f64;
        if visible < min_visible {
            continue;
        }
        let s = inst.transform.scale;
        out.push(Annotation {
            instance_id: inst.id,
            bottom_box: bb.bbox,
            bottom_center: bb.center,
            visible_fraction: visible.min(1.0),
            truncated: bb.truncated,
            model_id: inst.model_id.clone(),
            ground_position: [inst.transform.translation.x, inst.transform.translation.y],
            heading: inst.transform.heading,
            length_m: inst.mesh.length() * s,
            width_m: inst.mesh.width() * s,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagebuf::ImageBuffer;
    use crate::render::{render_scene, Lighting, Mesh, ModelTransform};
    use std::sync::Arc;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(400.0, 400.0, 160.0, 120.0, 320, 240).unwrap()
    }

    fn down(h: f64) -> CameraPose {
        CameraPose::look_at(&Vector3::new(0.0, 0.0, h), &Vector3::zeros(), &Vector3::y()).unwrap()
    }

    fn inst(id: u64, x: f64, y: f64, l: f64, w: f64, h: f64, heading: f64) -> VehicleInstance {
        VehicleInstance {
            id,
            model_id: "box".into(),
            mesh: Arc::new(Mesh::cuboid(l, w, h, [90, 90, 200])),
            transform: ModelTransform { heading, translation: Vector2::new(x, y), scale: 1.0 },
        }
    }

    #[test]
    fn centered_square_footprint() {
        let bb = bottom_box(&inst(1, 0.0, 0.0, 2.0, 2.0, 1.0, 0.3), &k(), &down(20.0), (320, 240)).unwrap();
        let rot = bottom_box(&inst(1, 0.0, 0.0, 2.0, 2.0, 1.0, 0.0), &k(), &down(20.0), (320, 240)).unwrap();
        assert!((rot.center[0] - 160.0).abs() < 1e-9 && (rot.center[1] - 120.0).abs() < 1e-9);
        // 2 m at 20 m depth with f = 400 is 40 px
        assert!((rot.bbox[2] - 40.0).abs() < 0.02 && (rot.bbox[3] - 40.0).abs() < 0.02);
        assert!(!rot.truncated);
        assert!((bb.center[0] - 160.0).abs() < 0.02);
    }

    #[test]
    fn heading_pi_symmetry() {
        let a = bottom_box(&inst(1, 3.0, 2.0, 4.5, 1.8, 1.5, 0.4), &k(), &down(25.0), (320, 240)).unwrap();
        let b = bottom_box(
            &inst(1, 3.0, 2.0, 4.5, 1.8, 1.5, 0.4 + std::f64::consts::PI),
            &k(),
            &down(25.0),
            (320, 240),
        )
        .unwrap();
        assert_eq!(a.bbox, b.bbox);
    }

    #[test]
    fn outside_frustum_is_none() {
        assert!(bottom_box(&inst(1, 500.0, 0.0, 4.0, 2.0, 1.0, 0.0), &k(), &down(20.0), (320, 240)).is_none());
        // entirely behind the camera
        let pose = CameraPose::look_at(&Vector3::new(0.0, 0.0, 5.0), &Vector3::new(10.0, 0.0, 0.0), &Vector3::z()).unwrap();
        assert!(bottom_box(&inst(1, -20.0, 0.0, 4.0, 2.0, 1.0, 0.0), &k(), &pose, (320, 240)).is_none());
    }

    #[test]
    fn edge_vehicle_is_clipped_and_truncated() {
        let bb = bottom_box(&inst(1, 7.5, 0.0, 4.0, 2.0, 1.0, 0.0), &k(), &down(20.0), (320, 240)).unwrap();
        assert!(bb.truncated);
        assert!(bb.bbox[0] + bb.bbox[2] <= 320.0 + 1e-9);
        assert!(bb.center[0] < 320.0);
    }

    #[test]
    fn partly_behind_camera_is_truncated() {
        let pose = CameraPose::look_at(&Vector3::new(0.0, 0.0, 2.0), &Vector3::new(3.0, 0.0, 0.0), &Vector3::z()).unwrap();
        let bb = bottom_box(&inst(1, 0.5, 0.0, 6.0, 2.0, 1.0, 0.0), &k(), &pose, (320, 240)).unwrap();
        assert!(bb.truncated);
    }

    #[test]
    fn center_recomputes_from_box() {
        for i in 0..50 {
            let x = -6.0 + 0.2 * i as f64;
            let b = bottom_box(&inst(1, x, 1.3, 4.4, 1.7, 1.4, 0.1 * i as f64), &k(), &down(22.0), (320, 240)).unwrap();
            assert_eq!(round2(b.bbox[0] + b.bbox[2] / 2.0), b.center[0]);
            assert_eq!(round2(b.bbox[1] + b.bbox[3] / 2.0), b.center[1]);
        }
    }

    fn render(instances: &[VehicleInstance], pose: &CameraPose) -> RenderResult {
        render_scene(&ImageBuffer::new(320, 240), instances, &k(), pose, &Lighting::default()).unwrap()
    }

    #[test]
    fn unoccluded_is_fully_visible() {
        let pose = down(20.0);
        let v = vec![inst(3, 0.0, 0.0, 4.0, 2.0, 1.5, 0.0)];
        let ann = annotate_frame(&render(&v, &pose), &v, &k(), &pose, DEFAULT_MIN_VISIBLE).unwrap();
        assert_eq!(ann.len(), 1);
        assert_eq!(ann[0].visible_fraction, 1.0);
        assert_eq!(ann[0].length_m, 4.0);
    }

    #[test]
    fn hidden_vehicle_dropped_and_order_free() {
        let pose = down(20.0);
        // a tall wide box swallows the small one underneath
        let v = vec![inst(1, 0.0, 0.0, 1.0, 1.0, 0.5, 0.0), inst(2, 0.0, 0.0, 4.0, 4.0, 3.0, 0.0)];
        let r = render(&v, &pose);
        let ann = annotate_frame(&r, &v, &k(), &pose, DEFAULT_MIN_VISIBLE).unwrap();
        assert_eq!(ann.iter().map(|a| a.instance_id).collect::<Vec<_>>(), vec![2]);
        let rev: Vec<_> = v.iter().rev().cloned().collect();
        assert_eq!(annotate_frame(&r, &rev, &k(), &pose, DEFAULT_MIN_VISIBLE).unwrap(), ann);
    }

    #[test]
    fn half_occlusion_fraction() {
        // straight-down camera: a tall slab covers the left half of a flat square
        let pose = down(30.0);
        let low = inst(1, 0.0, 0.0, 4.0, 4.0, 0.01, 0.0);
        let slab = inst(2, -1.0, 0.0, 2.0, 4.4, 2.0, 0.0);
        let v = vec![low, slab];
        let ann = annotate_frame(&render(&v, &pose), &v, &k(), &pose, 0.0).unwrap();
        let a = ann.iter().find(|a| a.instance_id == 1).unwrap();
        assert!((a.visible_fraction - 0.5).abs() < 0.05, "{}", a.visible_fraction);
    }

    #[test]
    fn mismatched_inputs() {
        let pose = down(20.0);
        let v = vec![inst(3, 0.0, 0.0, 4.0, 2.0, 1.5, 0.0)];
        let r = render(&v, &pose);
        assert!(annotate_frame(&r, &[], &k(), &pose, 0.25).is_err());
        let dup = vec![v[0].clone(), v[0].clone()];
        assert!(annotate_frame(&r, &dup, &k(), &pose, 0.25).is_err());
    }
}
