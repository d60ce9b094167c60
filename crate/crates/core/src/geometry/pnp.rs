//! Landmark-based pose estimation.
//!
//! Initialization picks between two linear solvers based on the spread of the
//! world points: a plane-induced homography decomposition when the landmarks
//! are (near-)coplanar, which is the usual case for road markings, and a
//! normalized DLT on the full projection matrix otherwise. Both are refined by
//! Levenberg-Marquardt on an axis-angle + translation parameterization.

use nalgebra::{
    DMatrix, Matrix3, Matrix3x4, Matrix4, Rotation3, SMatrix, SVector, Vector2, Vector3,
};
use serde::{Deserialize, Serialize};

use super::homography::fit_homography_dlt;
use super::{project_point, CameraIntrinsics, CameraPose, GeometryError, MIN_DEPTH};

/// One world-to-image landmark pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkCorrespondence {
    pub name: String,
    pub world: Vector3<f64>,
    pub pixel: Vector2<f64>,
}

impl LandmarkCorrespondence {
    pub fn new(name: impl Into<String>, world: Vector3<f64>, pixel: Vector2<f64>) -> Self {
        Self { name: name.into(), world, pixel }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    pub max_iterations: usize,
    /// Refinement stops once the parameter step norm drops below this.
    pub step_tolerance: f64,
    pub initial_damping: f64,
    /// RMS (px) above which hitting the iteration cap is reported as failure.
    pub max_rms: f64,
    /// Smallest-to-largest singular value ratio of the centered world points
    /// below which the planar initializer is used.
    pub planarity_ratio: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            step_tolerance: 1e-10,
            initial_damping: 1e-3,
            max_rms: 10.0,
            planarity_ratio: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseSolution {
    pub pose: CameraPose,
    pub per_landmark_error: Vec<f64>,
    pub rms_error: f64,
    pub iterations: usize,
    pub planar: bool,
}

/// Per-landmark reprojection distances. Entries for landmarks behind the
/// camera are `None`; the RMS covers the finite entries only.
#[derive(Debug, Clone, PartialEq)]
pub struct ReprojectionReport {
    pub errors: Vec<Option<f64>>,
    pub projected: Vec<Option<Vector2<f64>>>,
    pub rms: f64,
}

impl ReprojectionReport {
    pub fn behind_camera(&self) -> Vec<usize> {
        self.errors.iter().enumerate().filter(|(_, e)| e.is_none()).map(|(i, _)| i).collect()
    }
}

pub fn reprojection_report(
    k: &CameraIntrinsics,
    pose: &CameraPose,
    corrs: &[LandmarkCorrespondence],
) -> ReprojectionReport {
    let projected: Vec<Option<Vector2<f64>>> =
        corrs.iter().map(|c| project_point(k, pose, &c.world).ok()).collect();
    let errors: Vec<Option<f64>> = projected
        .iter()
        .zip(corrs)
        .map(|(p, c)| p.map(|p| (p - c.pixel).norm()))
        .collect();
    let finite: Vec<f64> = errors.iter().flatten().copied().collect();
    let rms = if finite.is_empty() {
        f64::INFINITY
    } else {
        (finite.iter().map(|e| e * e).sum::<f64>() / finite.len() as f64).sqrt()
    };
    ReprojectionReport { errors, projected, rms }
}

pub fn solve_pnp(
    k: &CameraIntrinsics,
    corrs: &[LandmarkCorrespondence],
    opts: &SolveOptions,
) -> Result<PoseSolution, GeometryError> {
    k.validate()?;
    if corrs.len() < 4 {
        return Err(GeometryError::DegenerateConfiguration(format!(
            "need at least 4 correspondences, got {}",
            corrs.len()
        )));
    }
    if corrs
        .iter()
        .any(|c| !c.world.iter().chain(c.pixel.iter()).all(|v| v.is_finite()))
    {
        return Err(GeometryError::InvalidInput("non-finite landmark coordinates".into()));
    }

    let world: Vec<Vector3<f64>> = corrs.iter().map(|c| c.world).collect();
    let image: Vec<Vector2<f64>> = corrs.iter().map(|c| k.normalize(&c.pixel)).collect();

    let spread = PointSpread::of(&world);
    if spread.singular[1] <= 1e-9 * spread.singular[0] {
        return Err(GeometryError::DegenerateConfiguration("world points are collinear".into()));
    }
    let planar = spread.singular[2] < opts.planarity_ratio * spread.singular[0];
    let initial = if planar {
        init_planar(&world, &image, &spread)?
    } else {
        if corrs.len() < 6 {
            return Err(GeometryError::DegenerateConfiguration(format!(
                "non-coplanar landmarks need at least 6 correspondences, got {}",
                corrs.len()
            )));
        }
        init_dlt(&world, &image)?
    };

    let (pose, iterations, converged) = refine(k, &world, corrs, initial, opts);
    let report = reprojection_report(k, &pose, corrs);
    if !converged && !(report.rms <= opts.max_rms) {
        return Err(GeometryError::NoConvergence { iterations, rms: report.rms });
    }
    let per_landmark_error = report.errors.iter().map(|e| e.unwrap_or(f64::INFINITY)).collect();
    Ok(PoseSolution { pose, per_landmark_error, rms_error: report.rms, iterations, planar })
}

struct PointSpread {
    centroid: Vector3<f64>,
    /// Descending singular values of the centered point matrix.
    singular: [f64; 3],
    /// Matching right singular vectors.
    axes: [Vector3<f64>; 3],
}

impl PointSpread {
    fn of(points: &[Vector3<f64>]) -> Self {
        let n = points.len() as f64;
        let centroid = points.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
        let mut scatter = Matrix3::zeros();
        for p in points {
            let d = p - centroid;
            scatter += d * d.transpose();
        }
        let eig = scatter.symmetric_eigen();
        let mut idx = [0usize, 1, 2];
        idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let singular = idx.map(|i| eig.eigenvalues[i].max(0.0).sqrt());
        let axes = idx.map(|i| eig.eigenvectors.column(i).into_owned());
        Self { centroid, singular, axes }
    }
}

/// Closest rotation in the Frobenius sense.
fn nearest_rotation(m: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    let svd = m.svd(true, true);
    let u = svd.u?;
    let v_t = svd.v_t?;
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut fix = Matrix3::identity();
        fix[(2, 2)] = -1.0;
        r = u * fix * v_t;
    }
    Some(r)
}

fn init_planar(
    world: &[Vector3<f64>],
    image: &[Vector2<f64>],
    spread: &PointSpread,
) -> Result<CameraPose, GeometryError> {
    // right-handed basis of the landmark plane; points become (a, b, 0)
    let e1 = spread.axes[0].normalize();
    let e2 = spread.axes[1].normalize();
    let e3 = e1.cross(&e2);
    let basis = Matrix3::from_columns(&[e1, e2, e3]);
    let plane: Vec<Vector2<f64>> = world
        .iter()
        .map(|p| {
            let q = basis.transpose() * (p - spread.centroid);
            Vector2::new(q.x, q.y)
        })
        .collect();

    let h = fit_homography_dlt(&plane, image).ok_or_else(|| {
        GeometryError::DegenerateConfiguration("landmark homography is underdetermined".into())
    })?;
    let h1 = h.column(0).into_owned();
    let h2 = h.column(1).into_owned();
    let h3 = h.column(2).into_owned();
    let mut scale = 2.0 / (h1.norm() + h2.norm());
    // the plane origin (landmark centroid) must sit in front of the camera
    if h3.z * scale < 0.0 {
        scale = -scale;
    }
    let r1 = h1 * scale;
    let r2 = h2 * scale;
    let approx = Matrix3::from_columns(&[r1, r2, r1.cross(&r2)]);
    let r_plane = nearest_rotation(&approx)
        .ok_or_else(|| GeometryError::DegenerateConfiguration("homography decomposition failed".into()))?;
    let t_plane = h3 * scale;

    let rotation = r_plane * basis.transpose();
    let translation = t_plane - rotation * spread.centroid;
    CameraPose::new(rotation, translation)
}

fn init_dlt(world: &[Vector3<f64>], image: &[Vector2<f64>]) -> Result<CameraPose, GeometryError> {
    let n = world.len();
    let wc = world.iter().fold(Vector3::zeros(), |a, p| a + p) / n as f64;
    let wd = world.iter().map(|p| (p - wc).norm()).sum::<f64>() / n as f64;
    let ic = image.iter().fold(Vector2::zeros(), |a, p| a + p) / n as f64;
    let id = image.iter().map(|p| (p - ic).norm()).sum::<f64>() / n as f64;
    if wd <= 0.0 || id <= 0.0 {
        return Err(GeometryError::DegenerateConfiguration("coincident points".into()));
    }
    let ws = 3f64.sqrt() / wd;
    let is = 2f64.sqrt() / id;
    let mut t_world = Matrix4::identity() * ws;
    t_world[(3, 3)] = 1.0;
    for i in 0..3 {
        t_world[(i, 3)] = -ws * wc[i];
    }
    let t_image = Matrix3::new(is, 0.0, -is * ic.x, 0.0, is, -is * ic.y, 0.0, 0.0, 1.0);

    let mut a = DMatrix::<f64>::zeros((2 * n).max(12), 12);
    for (i, (w, m)) in world.iter().zip(image).enumerate() {
        let x = [ws * (w.x - wc.x), ws * (w.y - wc.y), ws * (w.z - wc.z), 1.0];
        let u = is * (m.x - ic.x);
        let v = is * (m.y - ic.y);
        for j in 0..4 {
            a[(2 * i, j)] = x[j];
            a[(2 * i, 8 + j)] = -u * x[j];
            a[(2 * i + 1, 4 + j)] = x[j];
            a[(2 * i + 1, 8 + j)] = -v * x[j];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| GeometryError::DegenerateConfiguration("DLT decomposition failed".into()))?;
    let smallest = (0..svd.singular_values.len())
        .min_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]))
        .unwrap();
    let p = v_t.row(smallest);
    let p_norm = Matrix3x4::from_iterator((0..12).map(|i| p[(i % 3) * 4 + i / 3]));
    let t_image_inv = t_image.try_inverse().unwrap();
    let mut proj = t_image_inv * p_norm * t_world;

    let mut m = proj.fixed_view::<3, 3>(0, 0).into_owned();
    if m.determinant() < 0.0 {
        proj = -proj;
        m = -m;
    }
    let svd = m.svd(true, true);
    let scale = svd.singular_values.sum() / 3.0;
    if scale <= 0.0 || !scale.is_finite() {
        return Err(GeometryError::DegenerateConfiguration("degenerate DLT projection".into()));
    }
    let rotation = nearest_rotation(&m)
        .ok_or_else(|| GeometryError::DegenerateConfiguration("DLT decomposition failed".into()))?;
    let translation = proj.column(3).into_owned() / scale;
    CameraPose::new(rotation, translation)
}

type Jacobian = SMatrix<f64, 2, 6>;

fn residuals_and_jacobian(
    k: &CameraIntrinsics,
    pose: &CameraPose,
    world: &[Vector3<f64>],
    corrs: &[LandmarkCorrespondence],
    want_jacobian: bool,
) -> Option<(f64, SMatrix<f64, 6, 6>, SVector<f64, 6>)> {
    let mut cost = 0.0;
    let mut jtj = SMatrix::<f64, 6, 6>::zeros();
    let mut jtr = SVector::<f64, 6>::zeros();
    for (w, c) in world.iter().zip(corrs) {
        let rotated = pose.rotation() * w;
        let cam = rotated + pose.translation();
        if cam.z <= MIN_DEPTH {
            return None;
        }
        let inv_z = 1.0 / cam.z;
        let u = k.fx * cam.x * inv_z + k.cx;
        let v = k.fy * cam.y * inv_z + k.cy;
        let r = Vector2::new(u - c.pixel.x, v - c.pixel.y);
        cost += r.norm_squared();
        if !want_jacobian {
            continue;
        }
        // d(pixel)/d(cam)
        let dp = SMatrix::<f64, 2, 3>::new(
            k.fx * inv_z,
            0.0,
            -k.fx * cam.x * inv_z * inv_z,
            0.0,
            k.fy * inv_z,
            -k.fy * cam.y * inv_z * inv_z,
        );
        // left perturbation R <- exp(w) R: d(cam)/dw = -[R X]_x
        let skew = rotated.cross_matrix();
        let mut j = Jacobian::zeros();
        j.fixed_view_mut::<2, 3>(0, 0).copy_from(&(dp * -skew));
        j.fixed_view_mut::<2, 3>(0, 3).copy_from(&dp);
        jtj += j.transpose() * j;
        jtr += j.transpose() * r;
    }
    Some((cost, jtj, jtr))
}

fn apply_step(pose: &CameraPose, step: &SVector<f64, 6>) -> CameraPose {
    let omega = Vector3::new(step[0], step[1], step[2]);
    let delta = Rotation3::new(omega);
    let current = Rotation3::from_matrix_unchecked(*pose.rotation());
    let mut rotation = delta * current;
    // re-orthonormalize to stop drift accumulating over many products
    rotation.renormalize();
    let translation = pose.translation() + Vector3::new(step[3], step[4], step[5]);
    CameraPose::from_rotation(rotation, translation)
}

/// Returns `(pose, iterations, converged)`.
fn refine(
    k: &CameraIntrinsics,
    world: &[Vector3<f64>],
    corrs: &[LandmarkCorrespondence],
    initial: CameraPose,
    opts: &SolveOptions,
) -> (CameraPose, usize, bool) {
    let mut pose = initial;
    let Some((mut cost, mut jtj, mut jtr)) = residuals_and_jacobian(k, &pose, world, corrs, true) else {
        return (pose, 0, false);
    };
    let mut damping = opts.initial_damping;
    for iter in 0..opts.max_iterations {
        let mut lhs = jtj;
        for d in 0..6 {
            lhs[(d, d)] += damping * jtj[(d, d)].max(1e-12);
        }
        let Some(step) = lhs.cholesky().map(|c| c.solve(&-jtr)) else {
            damping *= 10.0;
            continue;
        };
        if step.norm() < opts.step_tolerance {
            return (pose, iter + 1, true);
        }
        let candidate = apply_step(&pose, &step);
        match residuals_and_jacobian(k, &candidate, world, corrs, true) {
            Some((c, j, r)) if c < cost => {
                pose = candidate;
                cost = c;
                jtj = j;
                jtr = r;
                damping *= 0.1;
            }
            _ => damping *= 10.0,
        }
    }
    (pose, opts.max_iterations, false)
}
