use nalgebra::Vector2;

use super::FrameScene;

/// Oriented vehicle footprint on the road plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Footprint {
    pub center: [f64; 2],
    pub heading: f64,
    pub length: f64,
    pub width: f64,
}

impl Footprint {
    /// Corners in counter-clockwise order starting front-left.
    pub fn corners(&self) -> [Vector2<f64>; 4] {
        let (s, c) = self.heading.sin_cos();
        let fwd = Vector2::new(c, s) * (0.5 * self.length);
        let left = Vector2::new(-s, c) * (0.5 * self.width);
        let o = Vector2::new(self.center[0], self.center[1]);
        [o + fwd + left, o - fwd + left, o - fwd - left, o + fwd - left]
    }

    fn axes(&self) -> [Vector2<f64>; 2] {
        let (s, c) = self.heading.sin_cos();
        [Vector2::new(c, s), Vector2::new(-s, c)]
    }
}

fn project(corners: &[Vector2<f64>; 4], axis: &Vector2<f64>) -> (f64, f64) {
    corners.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
        let d = p.dot(axis);
        (lo.min(d), hi.max(d))
    })
}

/// Separating-axis test. Rectangles that only touch do not intersect.
pub fn footprints_intersect(a: &Footprint, b: &Footprint) -> bool {
    let ca = a.corners();
    let cb = b.corners();
    for axis in a.axes().iter().chain(b.axes().iter()) {
        let (a0, a1) = project(&ca, axis);
        let (b0, b1) = project(&cb, axis);
        if a1 <= b0 || b1 <= a0 {
            return false;
        }
    }
    true
}

/// Keeps vehicles in ascending id order, dropping any whose footprint
/// intersects an already kept vehicle.
pub fn collision_filter(scene: &FrameScene) -> FrameScene {
    let mut order: Vec<usize> = (0..scene.vehicles.len()).collect();
    order.sort_by_key(|&i| scene.vehicles[i].id);
    let mut kept: Vec<(usize, Footprint)> = Vec::new();
    for i in order {
        let fp = scene.vehicles[i].footprint();
        if kept.iter().all(|(_, k)| !footprints_intersect(k, &fp)) {
            kept.push((i, fp));
        }
    }
    let mut keep_idx: Vec<usize> = kept.into_iter().map(|(i, _)| i).collect();
    keep_idx.sort_unstable();
    FrameScene {
        time: scene.time,
        vehicles: keep_idx.into_iter().map(|i| scene.vehicles[i].clone()).collect(),
    }
}
