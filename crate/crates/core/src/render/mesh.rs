//! Wavefront OBJ subset loader.
//!
//! Supported records: `v`, `vn`, and `f` (with `v`, `v/vt`, `v//vn`, and
//! `v/vt/vn` references, negative indices allowed). Polygon faces are fan
//! triangulated. Everything else (`vt`, `o`, `g`, `s`, `usemtl`, `mtllib`,
//! comments) is ignored.

use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::RenderError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    #[serde(rename = "+x")]
    PosX,
    #[serde(rename = "-x")]
    NegX,
    #[serde(rename = "+y")]
    PosY,
    #[serde(rename = "-y")]
    NegY,
    #[serde(rename = "+z")]
    PosZ,
    #[serde(rename = "-z")]
    NegZ,
}

impl Axis {
    pub fn vector(self) -> Vector3<f64> {
        match self {
            Axis::PosX => Vector3::x(),
            Axis::NegX => -Vector3::x(),
            Axis::PosY => Vector3::y(),
            Axis::NegY => -Vector3::y(),
            Axis::PosZ => Vector3::z(),
            Axis::NegZ => -Vector3::z(),
        }
    }
}

/// Sidecar metadata describing how a model file's axes map onto the vehicle
/// frame (+x forward, +y left, +z up).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub forward: Axis,
    pub up: Axis,
    /// Real-world length of the vehicle in meters.
    pub length_m: f64,
    pub base_color: [u8; 3],
}

impl Default for ModelMeta {
    fn default() -> Self {
        Self { forward: Axis::PosX, up: Axis::PosZ, length_m: 4.5, base_color: [160, 160, 160] }
    }
}

impl ModelMeta {
    /// Sidecar path for a mesh file: same stem, `.json` extension.
    pub fn sidecar_path(mesh_path: &Path) -> PathBuf {
        mesh_path.with_extension("json")
    }

    fn remap(&self) -> Result<Matrix3<f64>, String> {
        let f = self.forward.vector();
        let u = self.up.vector();
        if f.dot(&u) != 0.0 {
            return Err(format!("forward {:?} and up {:?} are not perpendicular", self.forward, self.up));
        }
        let l = u.cross(&f);
        Ok(Matrix3::from_rows(&[f.transpose(), l.transpose(), u.transpose()]))
    }
}

/// Triangle mesh in the vehicle frame, origin at the bottom center of its
/// bounding box.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vector3<f64>>,
    pub triangles: Vec<[u32; 3]>,
    pub normals: Option<Vec<Vector3<f64>>>,
    pub base_color: [u8; 3],
    pub bbox_min: Vector3<f64>,
    pub bbox_max: Vector3<f64>,
}

impl Mesh {
    /// Builds a mesh from vehicle-frame vertices, recentering so the bounding
    /// box bottom center sits at the origin.
    pub fn new(
        mut vertices: Vec<Vector3<f64>>,
        triangles: Vec<[u32; 3]>,
        base_color: [u8; 3],
    ) -> Result<Self, RenderError> {
        if vertices.is_empty() || triangles.is_empty() {
            return Err(RenderError::EmptyMesh);
        }
        let n = vertices.len() as u32;
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i >= n)) {
            return Err(RenderError::Parse { line: 0, message: format!("triangle {t:?} index out of range") });
        }
        let (lo, hi) = bounds(&vertices);
        let shift = Vector3::new(0.5 * (lo.x + hi.x), 0.5 * (lo.y + hi.y), lo.z);
        for v in &mut vertices {
            *v -= shift;
        }
        let (bbox_min, bbox_max) = bounds(&vertices);
        Ok(Self { vertices, triangles, normals: None, base_color, bbox_min, bbox_max })
    }

    /// Extent along the forward axis.
    pub fn length(&self) -> f64 {
        self.bbox_max.x - self.bbox_min.x
    }

    pub fn width(&self) -> f64 {
        self.bbox_max.y - self.bbox_min.y
    }

    pub fn height(&self) -> f64 {
        self.bbox_max.z - self.bbox_min.z
    }

    /// Axis-aligned box mesh with its bottom face at z = 0.
    pub fn cuboid(length: f64, width: f64, height: f64, base_color: [u8; 3]) -> Self {
        let (hx, hy) = (0.5 * length, 0.5 * width);
        let vertices = vec![
            Vector3::new(-hx, -hy, 0.0),
            Vector3::new(hx, -hy, 0.0),
            Vector3::new(hx, hy, 0.0),
            Vector3::new(-hx, hy, 0.0),
            Vector3::new(-hx, -hy, height),
            Vector3::new(hx, -hy, height),
            Vector3::new(hx, hy, height),
            Vector3::new(-hx, hy, height),
        ];
        let triangles = vec![
            [0, 2, 1],
            [0, 3, 2],
            [4, 5, 6],
            [4, 6, 7],
            [0, 1, 5],
            [0, 5, 4],
            [1, 2, 6],
            [1, 6, 5],
            [2, 3, 7],
            [2, 7, 6],
            [3, 0, 4],
            [3, 4, 7],
        ];
        Self::new(vertices, triangles, base_color).expect("cuboid is well formed")
    }
}

fn bounds(vs: &[Vector3<f64>]) -> (Vector3<f64>, Vector3<f64>) {
    vs.iter().fold(
        (Vector3::repeat(f64::INFINITY), Vector3::repeat(f64::NEG_INFINITY)),
        |(lo, hi), v| (lo.inf(v), hi.sup(v)),
    )
}

#[derive(Debug, Default)]
struct RawObj {
    vertices: Vec<Vector3<f64>>,
    normals: Vec<Vector3<f64>>,
    triangles: Vec<[u32; 3]>,
    /// Normal index per triangle corner, when every face reference had one.
    corner_normals: Vec<[u32; 3]>,
    all_have_normals: bool,
}

fn resolve_index(raw: &str, count: usize, line: usize) -> Result<u32, RenderError> {
    let idx: i64 = raw
        .parse()
        .map_err(|_| RenderError::Parse { line, message: format!("bad index {raw:?}") })?;
    let resolved = if idx > 0 { idx - 1 } else { count as i64 + idx };
    if idx == 0 || resolved < 0 || resolved >= count as i64 {
        return Err(RenderError::Parse { line, message: format!("index {idx} out of range (have {count})") });
    }
    Ok(resolved as u32)
}

fn parse_floats<const N: usize>(parts: &[&str], line: usize) -> Result<Vector3<f64>, RenderError> {
    if parts.len() < N {
        return Err(RenderError::Parse { line, message: format!("expected {N} coordinates") });
    }
    let mut out = [0.0; 3];
    for (o, p) in out.iter_mut().zip(parts.iter().take(3)) {
        *o = p
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| RenderError::Parse { line, message: format!("bad number {p:?}") })?;
    }
    Ok(Vector3::from(out))
}

fn parse_obj(text: &str) -> Result<RawObj, RenderError> {
    let mut raw = RawObj { all_have_normals: true, ..Default::default() };
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.split('#').next().unwrap_or("");
        let mut parts = line.split_whitespace();
        let Some(tag) = parts.next() else { continue };
        let rest: Vec<&str> = parts.collect();
        match tag {
            "v" => raw.vertices.push(parse_floats::<3>(&rest, line_no)?),
            "vn" => raw.normals.push(parse_floats::<3>(&rest, line_no)?),
            "f" => {
                if rest.len() < 3 {
                    return Err(RenderError::Parse { line: line_no, message: "face needs 3+ vertices".into() });
                }
                let mut vs = Vec::with_capacity(rest.len());
                let mut ns = Vec::with_capacity(rest.len());
                for r in &rest {
                    let mut fields = r.split('/');
                    let v = fields.next().unwrap_or("");
                    vs.push(resolve_index(v, raw.vertices.len(), line_no)?);
                    let _texture = fields.next();
                    match fields.next().filter(|s| !s.is_empty()) {
                        Some(n) => ns.push(resolve_index(n, raw.normals.len(), line_no)?),
                        None => raw.all_have_normals = false,
                    }
                }
                for k in 1..vs.len() - 1 {
                    raw.triangles.push([vs[0], vs[k], vs[k + 1]]);
                    if ns.len() == vs.len() {
                        raw.corner_normals.push([ns[0], ns[k], ns[k + 1]]);
                    }
                }
            }
            _ => {}
        }
    }
    Ok(raw)
}

/// Parses OBJ text and maps it into the vehicle frame using `meta`.
pub fn mesh_from_obj(text: &str, meta: &ModelMeta) -> Result<Mesh, RenderError> {
    let raw = parse_obj(text)?;
    if raw.vertices.is_empty() || raw.triangles.is_empty() {
        return Err(RenderError::EmptyMesh);
    }
    let remap = meta.remap().map_err(|message| RenderError::Meta { message })?;
    let vertices = raw.vertices.iter().map(|v| remap * v).collect();
    let mut mesh = Mesh::new(vertices, raw.triangles, meta.base_color)?;
    if raw.all_have_normals && !raw.normals.is_empty() {
        // per-vertex normals, last reference wins
        let mut normals = vec![Vector3::zeros(); mesh.vertices.len()];
        for (tri, ns) in mesh.triangles.iter().zip(&raw.corner_normals) {
            for (&v, &n) in tri.iter().zip(ns) {
                normals[v as usize] = (remap * raw.normals[n as usize]).normalize();
            }
        }
        mesh.normals = Some(normals);
    }
    Ok(mesh)
}

/// Loads a mesh file, reading its metadata sidecar when present.
pub fn load_mesh(path: &Path) -> Result<Mesh, RenderError> {
    let meta_path = ModelMeta::sidecar_path(path);
    let meta = if meta_path.exists() { read_meta(&meta_path)? } else { ModelMeta::default() };
    load_mesh_with_meta(path, &meta)
}

pub fn load_mesh_with_meta(path: &Path, meta: &ModelMeta) -> Result<Mesh, RenderError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| RenderError::Io { path: path.display().to_string(), message: e.to_string() })?;
    mesh_from_obj(&text, meta)
}

pub fn read_meta(path: &Path) -> Result<ModelMeta, RenderError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| RenderError::Io { path: path.display().to_string(), message: e.to_string() })?;
    let meta: ModelMeta = serde_json::from_str(&text)
        .map_err(|e| RenderError::Meta { message: format!("{}: {e}", path.display()) })?;
    if !(meta.length_m.is_finite() && meta.length_m > 0.0) {
        return Err(RenderError::Meta { message: format!("{}: length_m must be positive", path.display()) });
    }
    meta.remap().map_err(|message| RenderError::Meta { message })?;
    Ok(meta)
}
