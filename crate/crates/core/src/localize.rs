//! Lifting detected bottom centers to road-plane coordinates.

use std::io::{BufRead, Write};

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{image_to_ground, Homography};

/// Vertical shift, as a fraction of box height, from a full-body box center
/// to the bottom center.
pub const DEFAULT_SHIFT_FACTOR: f64 = 0.35;

#[derive(Debug, Error)]
pub enum DetectionFileError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: String,
    pub bottom_center: [f64; 2],
    pub score: f64,
    /// `[x, y, w, h]`, when the detector reports one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r#box: Option<[f64; 4]>,
}

impl Detection {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.score) {
            return Err(format!("score {} outside [0, 1]", self.score));
        }
        if !self.bottom_center.iter().all(|v| v.is_finite()) {
            return Err("bottom_center is not finite".into());
        }
        Ok(())
    }
}

/// Reads JSON-lines detections. Blank lines are skipped.
pub fn read_detections<R: BufRead>(input: R) -> Result<Vec<Detection>, DetectionFileError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let det: Detection = serde_json::from_str(&line)
            .map_err(|e| DetectionFileError::Parse { line: i + 1, message: e.to_string() })?;
        det.validate().map_err(|message| DetectionFileError::Parse { line: i + 1, message })?;
        out.push(det);
    }
    Ok(out)
}

pub fn write_detections<W: Write>(mut out: W, dets: &[Detection]) -> std::io::Result<()> {
    for d in dets {
        serde_json::to_writer(&mut out, d)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// `(x, y + factor * h)`.
pub fn shift_center_by(center: [f64; 2], box_height: f64, factor: f64) -> [f64; 2] {
    [center[0], center[1] + factor * box_height]
}

/// Full-box center to bottom center with the default factor.
pub fn shift_center(center: [f64; 2], box_height: f64) -> [f64; 2] {
    shift_center_by(center, box_height, DEFAULT_SHIFT_FACTOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Localized<'a> {
    pub detection: &'a Detection,
    /// `None` when the point maps to infinity (on or above the horizon).
    pub ground: Option<Vector2<f64>>,
}

impl Localized<'_> {
    pub fn at_infinity(&self) -> bool {
        self.ground.is_none()
    }
}

/// Maps every detection's bottom center through `h`.
pub fn localize<'a>(dets: &'a [Detection], h: &Homography) -> Vec<Localized<'a>> {
    dets.iter()
        .map(|d| {
            let px = Vector2::new(d.bottom_center[0], d.bottom_center[1]);
            Localized { detection: d, ground: image_to_ground(h, &px).ok() }
        })
        .collect()
}
