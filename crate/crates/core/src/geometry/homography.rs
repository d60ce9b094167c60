use nalgebra::{DMatrix, Matrix3, Vector2, Vector3};

use super::{CameraIntrinsics, CameraPose, GeometryError};

const COLLINEAR_TOL: f64 = 1e-9;
const MIN_DET: f64 = 1e-12;
const MIN_W: f64 = 1e-12;

/// Image-to-ground-plane homography, stored with unit Frobenius norm and a
/// non-negative bottom-right entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography(Matrix3<f64>);

impl Homography {
    /// Normalizes `m` and checks invertibility.
    pub fn new(m: Matrix3<f64>) -> Result<Self, GeometryError> {
        let norm = m.norm();
        if !norm.is_finite() || norm == 0.0 {
            return Err(GeometryError::DegenerateConfiguration("zero or non-finite homography".into()));
        }
        let mut h = m / norm;
        if h[(2, 2)] < 0.0 {
            h = -h;
        }
        if h.determinant().abs() <= MIN_DET {
            return Err(GeometryError::DegenerateConfiguration("homography is singular".into()));
        }
        Ok(Self(h))
    }

    pub fn identity() -> Self {
        Self::new(Matrix3::identity()).unwrap()
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        // invertibility is a construction invariant
        Self::new(self.0.try_inverse().unwrap()).unwrap()
    }

    /// Applies the homography and dehomogenizes.
    pub fn apply(&self, p: &Vector2<f64>) -> Result<Vector2<f64>, GeometryError> {
        let q = self.0 * Vector3::new(p.x, p.y, 1.0);
        if q.z.abs() <= MIN_W {
            return Err(GeometryError::PointAtInfinity);
        }
        Ok(Vector2::new(q.x / q.z, q.y / q.z))
    }
}

/// Maps a pixel to road-plane meters.
pub fn image_to_ground(h: &Homography, pixel: &Vector2<f64>) -> Result<Vector2<f64>, GeometryError> {
    h.apply(pixel)
}

/// Homography for the `z = 0` plane: the inverse of `K [r1 r2 T]`.
pub fn pose_to_ground_homography(
    k: &CameraIntrinsics,
    pose: &CameraPose,
) -> Result<Homography, GeometryError> {
    let r = pose.rotation();
    let t = pose.translation();
    let plane_to_cam = Matrix3::from_columns(&[r.column(0).into_owned(), r.column(1).into_owned(), *t]);
    // det([r1 r2 T]) = -C_z: zero when the camera center lies in the plane
    let det = plane_to_cam.determinant();
    if det.abs() <= 1e-12 * t.norm().max(1.0) {
        return Err(GeometryError::DegenerateConfiguration(
            "camera center lies in the ground plane".into(),
        ));
    }
    let forward = k.matrix() * plane_to_cam;
    let inv = forward.try_inverse().ok_or_else(|| {
        GeometryError::DegenerateConfiguration("K [r1 r2 T] is singular".into())
    })?;
    Homography::new(inv)
}

/// Normalized-DLT homography from `(pixel, ground)` pairs.
///
/// With exactly four pairs no three points on either side may be collinear.
/// With more pairs each side must span the plane and the linear system must
/// have a one-dimensional null space.
pub fn estimate_homography(
    pairs: &[(Vector2<f64>, Vector2<f64>)],
) -> Result<Homography, GeometryError> {
    if pairs.len() < 4 {
        return Err(GeometryError::DegenerateConfiguration(format!(
            "need at least 4 pairs, got {}",
            pairs.len()
        )));
    }
    let src: Vec<Vector2<f64>> = pairs.iter().map(|p| p.0).collect();
    let dst: Vec<Vector2<f64>> = pairs.iter().map(|p| p.1).collect();
    if src.iter().chain(dst.iter()).any(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return Err(GeometryError::InvalidInput("non-finite coordinates".into()));
    }
    for (side, pts) in [("pixel", &src), ("ground", &dst)] {
        if pts.len() == 4 {
            if has_collinear_triple(pts) {
                return Err(GeometryError::DegenerateConfiguration(format!(
                    "three {side} points are collinear"
                )));
            }
        } else if all_collinear(pts) {
            return Err(GeometryError::DegenerateConfiguration(format!(
                "all {side} points are collinear"
            )));
        }
    }
    let m = fit_homography_dlt(&src, &dst).ok_or_else(|| {
        GeometryError::DegenerateConfiguration("correspondences do not determine a unique homography".into())
    })?;
    Homography::new(m)
}

pub(crate) fn is_collinear(a: &Vector2<f64>, b: &Vector2<f64>, c: &Vector2<f64>) -> bool {
    let ab = b - a;
    let ac = c - a;
    let scale = ab.norm() * ac.norm();
    if scale == 0.0 {
        return true;
    }
    (ab.x * ac.y - ab.y * ac.x).abs() / scale < COLLINEAR_TOL
}

fn has_collinear_triple(pts: &[Vector2<f64>]) -> bool {
    let n = pts.len();
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                if is_collinear(&pts[i], &pts[j], &pts[k]) {
                    return true;
                }
            }
        }
    }
    false
}

fn all_collinear(pts: &[Vector2<f64>]) -> bool {
    let (c, _) = centroid_scale(pts);
    let mut cov = nalgebra::Matrix2::<f64>::zeros();
    for p in pts {
        let d = p - c;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    hi <= 0.0 || lo.max(0.0).sqrt() < COLLINEAR_TOL * hi.sqrt()
}

fn centroid_scale(pts: &[Vector2<f64>]) -> (Vector2<f64>, f64) {
    let n = pts.len() as f64;
    let c = pts.iter().fold(Vector2::zeros(), |acc, p| acc + p) / n;
    let mean_dist = pts.iter().map(|p| (p - c).norm()).sum::<f64>() / n;
    (c, mean_dist)
}

/// Similarity that moves the centroid to the origin and the mean distance to
/// sqrt(2).
fn normalizing_transform(pts: &[Vector2<f64>]) -> Option<Matrix3<f64>> {
    let (c, mean_dist) = centroid_scale(pts);
    if mean_dist <= 0.0 || !mean_dist.is_finite() {
        return None;
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Some(Matrix3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0))
}

/// Unnormalized DLT fit mapping `src` onto `dst`. Returns `None` when the
/// null space of the design matrix is not one-dimensional.
pub(crate) fn fit_homography_dlt(src: &[Vector2<f64>], dst: &[Vector2<f64>]) -> Option<Matrix3<f64>> {
    let ts = normalizing_transform(src)?;
    let td = normalizing_transform(dst)?;
    let n = src.len();
    let rows = (2 * n).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (s, d)) in src.iter().zip(dst).enumerate() {
        let p = ts * Vector3::new(s.x, s.y, 1.0);
        let q = td * Vector3::new(d.x, d.y, 1.0);
        let (x, y) = (p.x, p.y);
        let (u, v) = (q.x, q.y);
        let r0 = 2 * i;
        let r1 = r0 + 1;
        a[(r0, 0)] = -x;
        a[(r0, 1)] = -y;
        a[(r0, 2)] = -1.0;
        a[(r0, 6)] = u * x;
        a[(r0, 7)] = u * y;
        a[(r0, 8)] = u;
        a[(r1, 3)] = -x;
        a[(r1, 4)] = -y;
        a[(r1, 5)] = -1.0;
        a[(r1, 6)] = v * x;
        a[(r1, 7)] = v * y;
        a[(r1, 8)] = v;
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let smallest = order[0];
    let second = order[1];
    let largest = *order.last().unwrap();
    if svd.singular_values[second] <= 1e-10 * svd.singular_values[largest] {
        return None;
    }
    let h = v_t.row(smallest);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let td_inv = td.try_inverse()?;
    Some(td_inv * hn * ts)
}
