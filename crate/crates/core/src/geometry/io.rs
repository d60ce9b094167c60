//! JSON file formats for landmarks, poses, and intrinsics.

use std::path::Path;

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::{CameraIntrinsics, CameraPose, GeoReference, GeometryError, LandmarkCorrespondence, PoseSolution};

pub const LANDMARK_SCHEMA: &str = "roadforge-landmarks/1";
pub const POSE_SCHEMA: &str = "roadforge-pose/1";

#[derive(Debug, thiserror::Error)]
pub enum FileError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

/// World position of a landmark: either local ENU meters or geodetic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WorldCoord {
    Enu([f64; 3]),
    Geodetic {
        lat: f64,
        lon: f64,
        #[serde(default)]
        alt: f64,
    },
}

impl WorldCoord {
    pub fn resolve(&self, reference: Option<&GeoReference>) -> Result<Vector3<f64>, GeometryError> {
        match self {
            WorldCoord::Enu(p) => Ok(Vector3::from(*p)),
            WorldCoord::Geodetic { lat, lon, alt } => reference
                .map(|r| r.to_enu(*lat, *lon, *alt))
                .ok_or_else(|| {
                    GeometryError::InvalidInput("lat/lon landmark requires a reference point".into())
                }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkEntry {
    pub name: String,
    pub world: WorldCoord,
    pub pixel: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<GeoReference>,
    pub landmarks: Vec<LandmarkEntry>,
}

impl LandmarkFile {
    pub fn from_json(text: &str) -> Result<Self, String> {
        let file: LandmarkFile = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if let Some(schema) = &file.schema {
            if schema != LANDMARK_SCHEMA {
                return Err(format!("unsupported landmark schema {schema:?}, expected {LANDMARK_SCHEMA:?}"));
            }
        }
        Ok(file)
    }

    /// Resolves every landmark to ENU meters and checks pixels lie inside the
    /// image of `k`.
    pub fn correspondences(
        &self,
        k: &CameraIntrinsics,
    ) -> Result<Vec<LandmarkCorrespondence>, GeometryError> {
        self.landmarks
            .iter()
            .map(|l| {
                let world = l.world.resolve(self.reference.as_ref())?;
                let pixel = Vector2::from(l.pixel);
                if !k.contains(&pixel) {
                    return Err(GeometryError::InvalidInput(format!(
                        "landmark {:?} pixel ({}, {}) outside {}x{} image",
                        l.name, pixel.x, pixel.y, k.width, k.height
                    )));
                }
                if !world.iter().all(|v| v.is_finite()) {
                    return Err(GeometryError::InvalidInput(format!("landmark {:?} is not finite", l.name)));
                }
                Ok(LandmarkCorrespondence::new(l.name.clone(), world, pixel))
            })
            .collect()
    }
}

/// Serialized pose: row-major rotation, translation, and solve diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseFile {
    #[serde(default = "pose_schema")]
    pub schema: String,
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    #[serde(default)]
    pub rms_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_landmark_error: Vec<PerLandmarkError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerLandmarkError {
    pub name: String,
    /// `None` when the landmark projects behind the camera.
    pub error_px: Option<f64>,
}

fn pose_schema() -> String {
    POSE_SCHEMA.to_string()
}

impl PoseFile {
    pub fn from_pose(pose: &CameraPose) -> Self {
        let r = pose.rotation();
        let t = pose.translation();
        Self {
            schema: pose_schema(),
            rotation: [0, 1, 2].map(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)]]),
            translation: [t.x, t.y, t.z],
            rms_error: None,
            per_landmark_error: Vec::new(),
        }
    }

    pub fn from_solution(sol: &PoseSolution, corrs: &[LandmarkCorrespondence]) -> Self {
        let mut file = Self::from_pose(&sol.pose);
        file.rms_error = Some(sol.rms_error);
        file.per_landmark_error = corrs
            .iter()
            .zip(&sol.per_landmark_error)
            .map(|(c, e)| PerLandmarkError { name: c.name.clone(), error_px: e.is_finite().then_some(*e) })
            .collect();
        file
    }

    pub fn pose(&self) -> Result<CameraPose, GeometryError> {
        let r = &self.rotation;
        let rotation = Matrix3::from_fn(|i, j| r[i][j]);
        CameraPose::new(rotation, Vector3::from(self.translation))
    }
}

fn read_text(path: &Path) -> Result<String, FileError> {
    std::fs::read_to_string(path).map_err(|source| FileError::Io { path: path.display().to_string(), source })
}

fn parse<T: serde::de::DeserializeOwned>(path: &Path, text: &str) -> Result<T, FileError> {
    serde_json::from_str(text).map_err(|source| FileError::Json { path: path.display().to_string(), source })
}

pub fn read_landmarks(path: &Path) -> Result<LandmarkFile, FileError> {
    let text = read_text(path)?;
    LandmarkFile::from_json(&text).map_err(|message| FileError::Invalid { path: path.display().to_string(), message })
}

pub fn read_intrinsics(path: &Path) -> Result<CameraIntrinsics, FileError> {
    let k: CameraIntrinsics = parse(path, &read_text(path)?)?;
    k.validate().map_err(|e| FileError::Invalid { path: path.display().to_string(), message: e.to_string() })?;
    Ok(k)
}

pub fn read_pose(path: &Path) -> Result<CameraPose, FileError> {
    let file: PoseFile = parse(path, &read_text(path)?)?;
    if file.schema != POSE_SCHEMA {
        return Err(FileError::Invalid {
            path: path.display().to_string(),
            message: format!("unsupported pose schema {:?}", file.schema),
        });
    }
    file.pose().map_err(|e| FileError::Invalid { path: path.display().to_string(), message: e.to_string() })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), FileError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|source| FileError::Json { path: path.display().to_string(), source })?;
    text.push('\n');
    std::fs::write(path, text).map_err(|source| FileError::Io { path: path.display().to_string(), source })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_mixed_world_coordinates() {
        let text = r#"{
            "reference": {"lat": 42.3, "lon": -83.7},
            "landmarks": [
                {"name": "a", "world": [1.0, 2.0, 0.0], "pixel": [10, 20]},
                {"name": "b", "world": {"lat": 42.3001, "lon": -83.7}, "pixel": [30, 40]}
            ]
        }"#;
        let file = LandmarkFile::from_json(text).unwrap();
        let k = CameraIntrinsics::new(1000.0, 1000.0, 360.0, 240.0, 720, 480).unwrap();
        let corrs = file.correspondences(&k).unwrap();
        assert_eq!(corrs[0].world, Vector3::new(1.0, 2.0, 0.0));
        assert!((corrs[1].world.y - 11.1).abs() < 0.1);
        assert_eq!(corrs[1].world.z, 0.0);
    }

    #[test]
    fn rejects_unknown_schema_and_missing_reference() {
        assert!(LandmarkFile::from_json(r#"{"schema": "other/9", "landmarks": []}"#).is_err());
        let file = LandmarkFile::from_json(
            r#"{"landmarks": [{"name": "b", "world": {"lat": 1, "lon": 2}, "pixel": [3, 4]}]}"#,
        )
        .unwrap();
        let k = CameraIntrinsics::new(1000.0, 1000.0, 360.0, 240.0, 720, 480).unwrap();
        assert!(file.correspondences(&k).is_err());
    }

    #[test]
    fn pixel_outside_image_is_rejected() {
        let file = LandmarkFile::from_json(
            r#"{"landmarks": [{"name": "b", "world": [0, 0, 0], "pixel": [720, 4]}]}"#,
        )
        .unwrap();
        let k = CameraIntrinsics::new(1000.0, 1000.0, 360.0, 240.0, 720, 480).unwrap();
        assert!(file.correspondences(&k).is_err());
    }

    #[test]
    fn pose_file_round_trip() {
        let pose = CameraPose::look_at(&Vector3::new(3.0, -9.0, 6.0), &Vector3::zeros(), &Vector3::z()).unwrap();
        let text = serde_json::to_string(&PoseFile::from_pose(&pose)).unwrap();
        let back: PoseFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back.pose().unwrap(), pose);
    }
}
