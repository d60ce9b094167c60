use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_path_to_error::Segment;
use thiserror::Error;

use super::Annotation;
use crate::background::Condition;

pub const MANIFEST_SCHEMA: &str = "roadforge-manifest/1";

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("schema error at {pointer}: {message}")]
    Schema { pointer: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    /// Relative to the manifest directory.
    pub path: String,
    pub width: u32,
    pub height: u32,
    pub camera_id: String,
    pub condition: Condition,
    pub source_background: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationMeta {
    pub seed: u64,
    pub tool_version: String,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema: String,
    pub generation: GenerationMeta,
    pub images: Vec<ImageRecord>,
    /// Image id to its annotations.
    pub annotations: BTreeMap<String, Vec<Annotation>>,
}

impl DatasetManifest {
    pub fn new(generation: GenerationMeta) -> Self {
        Self {
            schema: MANIFEST_SCHEMA.to_string(),
            generation,
            images: Vec::new(),
            annotations: BTreeMap::new(),
        }
    }

    pub fn image(&self, id: &str) -> Option<&ImageRecord> {
        self.images.iter().find(|i| i.id == id)
    }

    pub fn annotation_count(&self) -> usize {
        self.annotations.values().map(Vec::len).sum()
    }

    /// Checks references, uniqueness and value ranges.
    pub fn validate(&self) -> Result<(), ManifestError> {
        let err = |pointer: String, message: String| Err(ManifestError::Schema { pointer, message });
        if self.schema != MANIFEST_SCHEMA {
            return err("/schema".into(), format!("unsupported schema {:?}", self.schema));
        }
        let mut ids = HashSet::new();
        for (i, img) in self.images.iter().enumerate() {
            if !ids.insert(img.id.as_str()) {
                return err(format!("/images/{i}/id"), format!("duplicate image id {:?}", img.id));
            }
        }
        for (image_id, anns) in &self.annotations {
            let base = format!("/annotations/{}", escape(image_id));
            let Some(img) = self.image(image_id) else {
                return err(base, format!("unknown image id {image_id:?}"));
            };
            let mut seen = HashSet::new();
            for (j, a) in anns.iter().enumerate() {
                if !seen.insert(a.instance_id) {
                    return err(format!("{base}/{j}/instance_id"), format!("duplicate instance id {}", a.instance_id));
                }
                if !(0.0..=1.0).contains(&a.visible_fraction) {
                    return err(format!("{base}/{j}/visible_fraction"), "outside [0, 1]".into());
                }
                let [x, y, w, h] = a.bottom_box;
                let inside = x >= 0.0 && y >= 0.0 && w > 0.0 && h > 0.0
                    && x + w <= img.width as f64 + 1e-9
                    && y + h <= img.height as f64 + 1e-9;
                if !inside {
                    return err(format!("{base}/{j}/bottom_box"), "box outside image".into());
                }
            }
        }
        Ok(())
    }
}

/// JSON pointer token escaping.
fn escape(token: &str) -> String {
    token.replace('~', "~0").replace('/', "~1")
}

fn pointer_of(path: &serde_path_to_error::Path) -> String {
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(&escape(key)),
            Segment::Enum { variant } => out.push_str(&escape(variant)),
            Segment::Unknown => out.push('?'),
        }
    }
    if out.is_empty() {
        out.push('/');
    }
    out
}

pub fn manifest_from_json(text: &str) -> Result<DatasetManifest, ManifestError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let m: DatasetManifest = serde_path_to_error::deserialize(de).map_err(|e| ManifestError::Schema {
        pointer: pointer_of(e.path()),
        message: e.inner().to_string(),
    })?;
    m.validate()?;
    Ok(m)
}

pub fn write_manifest(manifest: &DatasetManifest, path: &Path) -> Result<(), ManifestError> {
    manifest.validate()?;
    let mut text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|source| ManifestError::Io { path: path.display().to_string(), source })
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest, ManifestError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| ManifestError::Io { path: path.display().to_string(), source })?;
    manifest_from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::background::{Lighting, Weather};

    fn meta() -> GenerationMeta {
        GenerationMeta { seed: 7, tool_version: "0.1.0".into(), config_hash: "ab".repeat(32) }
    }

    fn image(id: &str) -> ImageRecord {
        ImageRecord {
            id: id.into(),
            path: format!("images/{id}.png"),
            width: 720,
            height: 480,
            camera_id: "cam0".into(),
            condition: Condition { weather: Weather::Sunny, lighting: Lighting::Day },
            source_background: "bg/0.png".into(),
        }
    }

    fn ann(id: u64) -> Annotation {
        Annotation {
            instance_id: id,
            bottom_box: [100.12, 200.34, 40.02, 20.5],
            bottom_center: [120.13, 210.59],
            visible_fraction: 0.8125,
            truncated: false,
            model_id: "sedan".into(),
            ground_position: [1.0 / 3.0, -12.25],
            heading: 0.1,
            length_m: 4.5,
            width_m: 1.8,
        }
    }

    #[test]
    fn empty_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        let m = DatasetManifest::new(meta());
        write_manifest(&m, &p).unwrap();
        assert_eq!(read_manifest(&p).unwrap(), m);
    }

    #[test]
    fn two_image_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        let mut m = DatasetManifest::new(meta());
        m.images = vec![image("a"), image("b")];
        m.annotations.insert("a".into(), vec![ann(1), ann(2)]);
        m.annotations.insert("b".into(), vec![]);
        write_manifest(&m, &p).unwrap();
        assert_eq!(read_manifest(&p).unwrap(), m);
    }

    #[test]
    fn missing_image_reference() {
        let mut m = DatasetManifest::new(meta());
        m.images = vec![image("a")];
        m.annotations.insert("zz".into(), vec![ann(1)]);
        let text = serde_json::to_string(&m).unwrap();
        match manifest_from_json(&text) {
            Err(ManifestError::Schema { pointer, .. }) => assert_eq!(pointer, "/annotations/zz"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn type_error_has_pointer() {
        let mut v = serde_json::to_value(DatasetManifest { images: vec![image("a")], ..DatasetManifest::new(meta()) }).unwrap();
        v["images"][0]["width"] = serde_json::json!("wide");
        match manifest_from_json(&v.to_string()) {
            Err(ManifestError::Schema { pointer, .. }) => assert_eq!(pointer, "/images/0/width"),
            other => panic!("{other:?}"),
        }
        v["images"][0]["width"] = serde_json::json!(720);
        v["schema"] = serde_json::json!("roadforge-manifest/9");
        assert!(matches!(manifest_from_json(&v.to_string()), Err(ManifestError::Schema { .. })));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(read_manifest(Path::new("/nonexistent/m.json")), Err(ManifestError::Io { .. })));
    }
}
