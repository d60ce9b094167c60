//! Background plates: temporal median estimation and a condition-tagged
//! library.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, FixedOffset};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imagebuf::{ImageBuffer, ImageError};
use crate::rng;

#[derive(Debug, Error)]
pub enum BackgroundError {
    #[error("no frames given")]
    EmptyInput,
    #[error("frame {index} is {got:?}, expected {expected:?}")]
    DimensionMismatch { index: usize, expected: (u32, u32), got: (u32, u32) },
    #[error("bucket {bucket} has {available} backgrounds, {requested} requested")]
    InsufficientBackgrounds { bucket: String, available: usize, requested: usize },
    #[error("{path}: {message}")]
    Library { path: String, message: String },
    #[error(transparent)]
    Image(#[from] ImageError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weather {
    Sunny,
    Cloudy,
    Rain,
    Snow,
    Fog,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lighting {
    Day,
    Twilight,
    Night,
}

macro_rules! tag_text {
    ($ty:ty, $($variant:ident => $text:literal),+) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $(Self::$variant => $text),+ })
            }
        }

        impl FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($text => Ok(Self::$variant),)+
                    _ => Err(format!("unknown tag {s:?}")),
                }
            }
        }
    };
}

tag_text!(Weather, Sunny => "sunny", Cloudy => "cloudy", Rain => "rain", Snow => "snow", Fog => "fog");
tag_text!(Lighting, Day => "day", Twilight => "twilight", Night => "night");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Condition {
    pub weather: Weather,
    pub lighting: Lighting,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.weather, self.lighting)
    }
}

/// Per-pixel, per-channel median across `frames`.
///
/// Even frame counts take the lower median (sorted index `(n - 1) / 2`), so
/// every output value was actually observed.
pub fn median_background(frames: &[ImageBuffer]) -> Result<ImageBuffer, BackgroundError> {
    let first = frames.first().ok_or(BackgroundError::EmptyInput)?;
    let dims = first.dims();
    for (index, f) in frames.iter().enumerate() {
        if f.dims() != dims {
            return Err(BackgroundError::DimensionMismatch { index, expected: dims, got: f.dims() });
        }
    }
    let (w, h) = dims;
    let row_bytes = w as usize * 3;
    let mid = (frames.len() - 1) / 2;
    let mut out = vec![0u8; row_bytes * h as usize];
    // row-parallel; every output byte depends only on its own column of samples
    out.par_chunks_mut(row_bytes.max(1)).enumerate().for_each(|(y, row)| {
        let mut samples = vec![0u8; frames.len()];
        let base = y * row_bytes;
        for (i, out_byte) in row.iter_mut().enumerate() {
            for (s, f) in samples.iter_mut().zip(frames) {
                *s = f.as_raw()[base + i];
            }
            *out_byte = *samples.select_nth_unstable(mid).1;
        }
    });
    Ok(ImageBuffer::from_raw(w, h, out)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundEntry {
    pub path: PathBuf,
    pub image: ImageBuffer,
    pub captured_at: DateTime<FixedOffset>,
    pub condition: Condition,
}

/// One record of the library index file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibraryRecord {
    pub path: String,
    pub captured_at: DateTime<FixedOffset>,
    pub weather: Weather,
    pub lighting: Lighting,
}

/// Reads the index records without decoding images.
pub fn read_library_index(index_path: &Path) -> Result<Vec<LibraryRecord>, BackgroundError> {
    let lib_err = |message: String| BackgroundError::Library { path: index_path.display().to_string(), message };
    let text = std::fs::read_to_string(index_path).map_err(|e| lib_err(e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| lib_err(e.to_string()))
}

/// Loads the library index and decodes every referenced PNG. Paths are
/// relative to the index file's directory.
pub fn load_library(index_path: &Path) -> Result<Vec<BackgroundEntry>, BackgroundError> {
    let base = index_path.parent().unwrap_or_else(|| Path::new("."));
    read_library_index(index_path)?
        .into_iter()
        .map(|r| {
            let path = base.join(&r.path);
            Ok(BackgroundEntry {
                image: ImageBuffer::load_png(&path)?,
                path: PathBuf::from(r.path),
                captured_at: r.captured_at,
                condition: Condition { weather: r.weather, lighting: r.lighting },
            })
        })
        .collect()
}

pub fn write_library_index(index_path: &Path, records: &[LibraryRecord]) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(records).map_err(std::io::Error::other)?;
    std::fs::write(index_path, text + "\n")
}

/// Requested number of backgrounds per condition bucket.
pub type SamplingPlan = BTreeMap<Condition, usize>;

/// Seeded sample without replacement from each requested bucket. Buckets are
/// visited in condition order and entries inside a bucket keep library order
/// before shuffling, so the result depends only on `(library, plan, seed)`.
pub fn sample_backgrounds<'a>(
    library: &'a [BackgroundEntry],
    plan: &SamplingPlan,
    seed: u64,
) -> Result<Vec<&'a BackgroundEntry>, BackgroundError> {
    let mut out = Vec::new();
    for (condition, &requested) in plan {
        let mut bucket: Vec<&BackgroundEntry> =
            library.iter().filter(|e| e.condition == *condition).collect();
        if bucket.len() < requested {
            return Err(BackgroundError::InsufficientBackgrounds {
                bucket: condition.to_string(),
                available: bucket.len(),
                requested,
            });
        }
        let label = condition.to_string();
        let mut r = rng::stream(seed, &["background-sample".into(), label.as_str().into()]);
        bucket.shuffle(&mut r);
        out.extend(bucket.into_iter().take(requested));
    }
    Ok(out)
}
