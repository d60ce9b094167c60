//! Flat-shaded z-buffer rasterizer.
//!
//! Pixels are sampled at their centers with a top-left fill rule. Depth is
//! camera-frame z, interpolated perspective-correctly via 1/z. Triangles are
//! clipped against the near plane in camera space before projection.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::{RenderError, VehicleInstance};
use crate::geometry::{CameraIntrinsics, CameraPose};
use crate::imagebuf::ImageBuffer;

/// Camera-space near clipping distance in meters.
pub const NEAR_PLANE: f64 = 0.1;

/// Single directional light plus ambient term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lighting {
    /// Unit vector pointing toward the light, world frame.
    pub sun_dir: Vector3<f64>,
    /// Ambient fraction in `[0, 1]`.
    pub ambient: f64,
}

impl Default for Lighting {
    fn default() -> Self {
        Self { sun_dir: Vector3::new(0.3, -0.45, 0.84).normalize(), ambient: 0.35 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderResult {
    pub image: ImageBuffer,
    /// Instance id per pixel, row-major.
    pub mask: Vec<Option<u64>>,
    /// Camera-frame depth in meters, `INFINITY` where no vehicle was drawn.
    pub depth: Vec<f64>,
}

impl RenderResult {
    pub fn width(&self) -> u32 {
        self.image.width()
    }

    pub fn height(&self) -> u32 {
        self.image.height()
    }

    pub fn mask_at(&self, x: u32, y: u32) -> Option<u64> {
        self.mask[y as usize * self.width() as usize + x as usize]
    }

    pub fn pixel_count(&self, id: u64) -> usize {
        self.mask.iter().filter(|m| **m == Some(id)).count()
    }

    /// Inclusive pixel bounds `(min_x, min_y, max_x, max_y)` of an instance.
    pub fn mask_bbox(&self, id: u64) -> Option<(u32, u32, u32, u32)> {
        let w = self.width() as usize;
        let mut out: Option<(u32, u32, u32, u32)> = None;
        for (i, m) in self.mask.iter().enumerate() {
            if *m == Some(id) {
                let (x, y) = ((i % w) as u32, (i / w) as u32);
                out = Some(match out {
                    None => (x, y, x, y),
                    Some((a, b, c, d)) => (a.min(x), b.min(y), c.max(x), d.max(y)),
                });
            }
        }
        out
    }

    /// Ids present in the mask, ascending.
    pub fn instance_ids(&self) -> Vec<u64> {
        let mut ids: Vec<u64> = self.mask.iter().flatten().copied().collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

#[derive(Debug, Clone, Copy)]
struct ScreenVertex {
    p: Vector2<f64>,
    inv_z: f64,
}

#[inline]
fn orient(a: &Vector2<f64>, b: &Vector2<f64>, p: &Vector2<f64>) -> f64 {
    (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x)
}

/// Edge function evaluated with canonically ordered endpoints so a shared
/// edge yields exactly negated values for its two triangles.
#[inline]
fn edge(a: &Vector2<f64>, b: &Vector2<f64>, p: &Vector2<f64>) -> f64 {
    if (a.y, a.x) <= (b.y, b.x) {
        orient(a, b, p)
    } else {
        -orient(b, a, p)
    }
}

/// With positive orientation in y-down screen space: top edges run in +x,
/// left edges run in -y.
#[inline]
fn is_top_left(a: &Vector2<f64>, b: &Vector2<f64>) -> bool {
    let d = b - a;
    (d.y == 0.0 && d.x > 0.0) || d.y < 0.0
}

#[inline]
fn covers(w: f64, top_left: bool) -> bool {
    w > 0.0 || (w == 0.0 && top_left)
}

fn raster_triangle(
    v: [ScreenVertex; 3],
    width: u32,
    height: u32,
    frag: &mut impl FnMut(u32, u32, f64),
) {
    let mut v = v;
    let mut area = orient(&v[0].p, &v[1].p, &v[2].p);
    if area == 0.0 || !area.is_finite() {
        return;
    }
    if area < 0.0 {
        v.swap(1, 2);
        area = -area;
    }
    let min_x = v.iter().map(|s| s.p.x).fold(f64::INFINITY, f64::min);
    let max_x = v.iter().map(|s| s.p.x).fold(f64::NEG_INFINITY, f64::max);
    let min_y = v.iter().map(|s| s.p.y).fold(f64::INFINITY, f64::min);
    let max_y = v.iter().map(|s| s.p.y).fold(f64::NEG_INFINITY, f64::max);
    if max_x < 0.0 || max_y < 0.0 || min_x >= width as f64 || min_y >= height as f64 {
        return;
    }
    let x0 = (min_x - 0.5).floor().max(0.0) as u32;
    let y0 = (min_y - 0.5).floor().max(0.0) as u32;
    let x1 = ((max_x - 0.5).ceil().max(0.0) as u32).min(width - 1);
    let y1 = ((max_y - 0.5).ceil().max(0.0) as u32).min(height - 1);
    let tl = [is_top_left(&v[1].p, &v[2].p), is_top_left(&v[2].p, &v[0].p), is_top_left(&v[0].p, &v[1].p)];
    for py in y0..=y1 {
        for px in x0..=x1 {
            let p = Vector2::new(px as f64 + 0.5, py as f64 + 0.5);
            let w0 = edge(&v[1].p, &v[2].p, &p);
            let w1 = edge(&v[2].p, &v[0].p, &p);
            let w2 = edge(&v[0].p, &v[1].p, &p);
            if covers(w0, tl[0]) && covers(w1, tl[1]) && covers(w2, tl[2]) {
                let inv_z = (w0 * v[0].inv_z + w1 * v[1].inv_z + w2 * v[2].inv_z) / area;
                frag(px, py, 1.0 / inv_z);
            }
        }
    }
}

/// Clips a camera-space polygon to `z >= NEAR_PLANE`.
fn clip_near(poly: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    let mut out = Vec::with_capacity(poly.len() + 1);
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        let a_in = a.z >= NEAR_PLANE;
        let b_in = b.z >= NEAR_PLANE;
        if a_in {
            out.push(a);
        }
        if a_in != b_in {
            let t = (NEAR_PLANE - a.z) / (b.z - a.z);
            let mut q = a + (b - a) * t;
            q.z = NEAR_PLANE;
            out.push(q);
        }
    }
    out
}

/// Runs `frag(x, y, depth, shade)` for every covered pixel of every triangle
/// of `inst`, in triangle order. `shade` is the Lambertian factor.
fn rasterize_instance(
    inst: &VehicleInstance,
    k: &CameraIntrinsics,
    pose: &CameraPose,
    lighting: &Lighting,
    mut frag: impl FnMut(u32, u32, f64, f64),
) {
    let world: Vec<Vector3<f64>> = inst.mesh.vertices.iter().map(|v| inst.transform.apply(v)).collect();
    let cam: Vec<Vector3<f64>> = world.iter().map(|w| pose.to_camera(w)).collect();
    let eye = pose.center();
    let project = |c: &Vector3<f64>| ScreenVertex {
        p: Vector2::new(k.fx * c.x / c.z + k.cx, k.fy * c.y / c.z + k.cy),
        inv_z: 1.0 / c.z,
    };
    for tri in &inst.mesh.triangles {
        let [a, b, c] = tri.map(|i| i as usize);
        if cam[a].z < NEAR_PLANE && cam[b].z < NEAR_PLANE && cam[c].z < NEAR_PLANE {
            continue;
        }
        let mut n = (world[b] - world[a]).cross(&(world[c] - world[a]));
        let len = n.norm();
        if len == 0.0 {
            continue;
        }
        n /= len;
        // two-sided: light the side facing the camera
        if n.dot(&(eye - world[a])) < 0.0 {
            n = -n;
        }
        let shade = lighting.ambient + (1.0 - lighting.ambient) * n.dot(&lighting.sun_dir).max(0.0);

        let poly = clip_near(&[cam[a], cam[b], cam[c]]);
        if poly.len() < 3 {
            continue;
        }
        let screen: Vec<ScreenVertex> = poly.iter().map(project).collect();
        for i in 1..screen.len() - 1 {
            raster_triangle([screen[0], screen[i], screen[i + 1]], k.width, k.height, &mut |x, y, z| {
                frag(x, y, z, shade)
            });
        }
    }
}

/// Renders `instances` over `background`.
///
/// Instances are drawn in ascending id order; a fragment replaces the stored
/// one when it is strictly nearer, or equally near with a lower instance id,
/// so the output does not depend on the order of `instances`. Pixels no
/// vehicle covers keep the background bytes.
pub fn render_scene(
    background: &ImageBuffer,
    instances: &[VehicleInstance],
    k: &CameraIntrinsics,
    pose: &CameraPose,
    lighting: &Lighting,
) -> Result<RenderResult, RenderError> {
    let expected = (k.width, k.height);
    if background.dims() != expected {
        return Err(RenderError::DimensionMismatch { expected, got: background.dims() });
    }
    let w = k.width as usize;
    let n = w * k.height as usize;
    let mut image = background.clone();
    let mut mask: Vec<Option<u64>> = vec![None; n];
    let mut depth = vec![f64::INFINITY; n];

    let mut order: Vec<&VehicleInstance> = instances.iter().collect();
    order.sort_by_key(|i| i.id);
    for inst in order {
        let base = inst.mesh.base_color;
        rasterize_instance(inst, k, pose, lighting, |x, y, z, shade| {
            let idx = y as usize * w + x as usize;
            let nearer = z < depth[idx] || (z == depth[idx] && mask[idx].is_some_and(|m| inst.id < m));
            if nearer {
                depth[idx] = z;
                mask[idx] = Some(inst.id);
                let rgb = base.map(|c| (c as f64 * shade).round().clamp(0.0, 255.0) as u8);
                image.put(x, y, rgb);
            }
        });
    }
    Ok(RenderResult { image, mask, depth })
}

/// Number of pixels `inst` covers when rendered alone.
pub fn solo_coverage(inst: &VehicleInstance, k: &CameraIntrinsics, pose: &CameraPose) -> usize {
    let w = k.width as usize;
    let mut hit = vec![false; w * k.height as usize];
    let mut count = 0;
    rasterize_instance(inst, k, pose, &Lighting::default(), |x, y, _, _| {
        let idx = y as usize * w + x as usize;
        if !hit[idx] {
            hit[idx] = true;
            count += 1;
        }
    });
    count
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::{Mesh, ModelTransform};
    use std::sync::Arc;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 500.0, 80.0, 60.0, 160, 120).unwrap()
    }

    fn cube_at(id: u64, x: f64, y: f64, size: f64) -> VehicleInstance {
        VehicleInstance {
            id,
            model_id: "cube".into(),
            mesh: Arc::new(Mesh::cuboid(size, size, size, [200, 50, 50])),
            transform: ModelTransform { heading: 0.0, translation: Vector2::new(x, y), scale: 1.0 },
        }
    }

    fn down_pose(height: f64) -> CameraPose {
        CameraPose::look_at(&Vector3::new(0.0, -0.01, height), &Vector3::zeros(), &Vector3::y()).unwrap()
    }

    #[test]
    fn empty_scene_keeps_background() {
        let bg = ImageBuffer::filled(160, 120, [10, 20, 30]);
        let r = render_scene(&bg, &[], &k(), &down_pose(20.0), &Lighting::default()).unwrap();
        assert_eq!(r.image, bg);
        assert!(r.mask.iter().all(|m| m.is_none()));
        assert!(r.depth.iter().all(|d| d.is_infinite()));
    }

    #[test]
    fn dimension_mismatch() {
        let bg = ImageBuffer::new(10, 10);
        assert!(matches!(
            render_scene(&bg, &[], &k(), &down_pose(20.0), &Lighting::default()),
            Err(RenderError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn shared_edges_cover_each_pixel_once() {
        // a square split along its diagonal: every interior pixel is hit once
        let mut hits = vec![0u32; 40 * 40];
        let sv = |x: f64, y: f64| ScreenVertex { p: Vector2::new(x, y), inv_z: 1.0 };
        let (a, b, c, d) = (sv(3.3, 4.1), sv(31.7, 2.9), sv(33.2, 35.6), sv(5.0, 30.0));
        for tri in [[a, b, c], [a, c, d]] {
            raster_triangle(tri, 40, 40, &mut |x, y, _| hits[(y * 40 + x) as usize] += 1);
        }
        assert!(hits.iter().all(|&h| h <= 1));
        assert!(hits.iter().filter(|&&h| h == 1).count() > 700);
    }

    #[test]
    fn near_clipping_keeps_front_part() {
        let poly = clip_near(&[Vector3::new(0.0, 0.0, -1.0), Vector3::new(1.0, 0.0, 1.0), Vector3::new(0.0, 1.0, 1.0)]);
        assert_eq!(poly.len(), 4);
        assert!(poly.iter().all(|p| p.z >= NEAR_PLANE));
    }

    #[test]
    fn camera_inside_geometry_does_not_panic() {
        let bg = ImageBuffer::new(160, 120);
        let pose = CameraPose::look_at(&Vector3::new(0.0, 0.0, 0.5), &Vector3::new(10.0, 0.0, 0.5), &Vector3::z()).unwrap();
        let r = render_scene(&bg, &[cube_at(1, 0.0, 0.0, 2.0)], &k(), &pose, &Lighting::default()).unwrap();
        assert!(r.pixel_count(1) > 0);
    }

    #[test]
    fn nearer_instance_wins_regardless_of_order() {
        let bg = ImageBuffer::new(160, 120);
        let pose = down_pose(20.0);
        let tall = VehicleInstance {
            mesh: Arc::new(Mesh::cuboid(1.0, 1.0, 5.0, [0, 255, 0])),
            ..cube_at(9, 0.0, 0.0, 1.0)
        };
        let wide = cube_at(2, 0.0, 0.0, 2.0);
        let a = render_scene(&bg, &[tall.clone(), wide.clone()], &k(), &pose, &Lighting::default()).unwrap();
        let b = render_scene(&bg, &[wide, tall], &k(), &pose, &Lighting::default()).unwrap();
        assert_eq!(a, b);
        // tall box top (z=5) is nearer than the 2 m cube top around the center
        assert_eq!(a.mask_at(80, 60), Some(9));
        assert!(a.pixel_count(2) > 0);
        assert!((a.depth[60 * 160 + 80] - 15.0).abs() < 1e-4);
    }

    #[test]
    fn solo_coverage_matches_unoccluded_render() {
        let bg = ImageBuffer::new(160, 120);
        let pose = down_pose(20.0);
        let c = cube_at(4, 1.0, 0.5, 2.0);
        let r = render_scene(&bg, std::slice::from_ref(&c), &k(), &pose, &Lighting::default()).unwrap();
        assert_eq!(solo_coverage(&c, &k(), &pose), r.pixel_count(4));
    }
}
