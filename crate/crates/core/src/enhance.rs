//! Reality enhancement: per-vehicle crops, a photometric harmonization
//! baseline, and a directory protocol for handing crops to an external
//! image translator and taking them back.
//!
//! Exchange directory layout:
//!
//! ```text
//! index.json                      schema "roadforge-crops/1"
//! crops/{frame_id}/{id}.png       RGB patch, may be rewritten by the tool
//! masks/{frame_id}/{id}.png       8-bit mask, 255 = vehicle, must not change
//! ```
//!
//! A translator may change patch pixels only. Sizes, ids and masks are
//! checked on import.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::imagebuf::{ImageBuffer, ImageError};
use crate::render::RenderResult;

pub const CROP_SCHEMA: &str = "roadforge-crops/1";
pub const DEFAULT_PADDING: u32 = 8;
pub const DEFAULT_RING_WIDTH: u32 = 16;
/// Bounds on the standard-deviation ratio used by [`harmonize_crop`].
pub const SIGMA_RATIO_RANGE: (f64, f64) = (0.5, 2.0);

#[derive(Debug, Error)]
pub enum EnhanceError {
    #[error("crop {0} has an empty mask")]
    EmptyMask(u64),
    #[error("crop {0} has no background pixels around it")]
    EmptyRing(u64),
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("frame is {got:?}, crops expect {expected:?}")]
    DimensionMismatch { expected: (u32, u32), got: (u32, u32) },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Image(#[from] ImageError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Crop {
    pub instance_id: u64,
    pub patch: ImageBuffer,
    /// Row-major, same dims as `patch`.
    pub mask: Vec<bool>,
    /// Top-left corner in frame pixels.
    pub origin: (u32, u32),
}

impl Crop {
    pub fn dims(&self) -> (u32, u32) {
        self.patch.dims()
    }

    pub fn mask_at(&self, x: u32, y: u32) -> bool {
        self.mask[(y * self.patch.width() + x) as usize]
    }

    fn mask_digest(&self) -> String {
        let bytes: Vec<u8> = self.mask.iter().map(|&m| m as u8).collect();
        hex::encode(Sha256::digest(&bytes))
    }
}

/// Crops of one frame, in render order (ascending instance id).
#[derive(Debug, Clone, PartialEq)]
pub struct CropSet {
    pub frame_dims: (u32, u32),
    pub crops: Vec<Crop>,
}

/// One crop per visible instance: its mask bounding box grown by `padding`
/// on every side and clipped to the frame.
pub fn extract_crops(render: &RenderResult, padding: u32) -> CropSet {
    let (w, h) = (render.width(), render.height());
    let mut crops = Vec::new();
    for id in render.instance_ids() {
        let Some((x0, y0, x1, y1)) = render.mask_bbox(id) else { continue };
        let ox = x0.saturating_sub(padding);
        let oy = y0.saturating_sub(padding);
        let ex = (x1 + padding).min(w - 1);
        let ey = (y1 + padding).min(h - 1);
        let (cw, ch) = (ex - ox + 1, ey - oy + 1);
        let patch = render.image.crop(ox, oy, cw, ch);
        let mut mask = Vec::with_capacity((cw * ch) as usize);
        for y in oy..=ey {
            for x in ox..=ex {
                mask.push(render.mask_at(x, y) == Some(id));
            }
        }
        crops.push(Crop { instance_id: id, patch, mask, origin: (ox, oy) });
    }
    CropSet { frame_dims: (w, h), crops }
}

// ITU-R BT.601 full-range (JPEG) YCbCr.
fn to_ycbcr(p: [u8; 3]) -> [f64; 3] {
    let [r, g, b] = p.map(f64::from);
    [
        0.299 * r + 0.587 * g + 0.114 * b,
        128.0 - 0.168_736 * r - 0.331_264 * g + 0.5 * b,
        128.0 + 0.5 * r - 0.418_688 * g - 0.081_312 * b,
    ]
}

fn to_rgb(c: [f64; 3]) -> [u8; 3] {
    let [y, cb, cr] = c;
    let (cb, cr) = (cb - 128.0, cr - 128.0);
    [y + 1.402 * cr, y - 0.344_136 * cb - 0.714_136 * cr, y + 1.772 * cb]
        .map(|v| v.round().clamp(0.0, 255.0) as u8)
}

#[derive(Default)]
struct Stats {
    n: f64,
    sum: [f64; 3],
    sq: [f64; 3],
}

impl Stats {
    fn push(&mut self, c: [f64; 3]) {
        self.n += 1.0;
        for i in 0..3 {
            self.sum[i] += c[i];
            self.sq[i] += c[i] * c[i];
        }
    }

    fn mean_std(&self) -> ([f64; 3], [f64; 3]) {
        let mean = self.sum.map(|s| s / self.n);
        let mut std = [0.0; 3];
        for i in 0..3 {
            std[i] = (self.sq[i] / self.n - mean[i] * mean[i]).max(0.0).sqrt();
        }
        (mean, std)
    }
}

/// Separable square dilation of a binary image by `r` pixels.
fn dilate(mask: &[bool], w: usize, h: usize, r: usize) -> Vec<bool> {
    let mut tmp = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r).min(w - 1);
            tmp[y * w + x] = (lo..=hi).any(|i| mask[y * w + i]);
        }
    }
    let mut out = vec![false; w * h];
    for y in 0..h {
        let lo = y.saturating_sub(r);
        let hi = (y + r).min(h - 1);
        for x in 0..w {
            out[y * w + x] = (lo..=hi).any(|j| tmp[j * w + x]);
        }
    }
    out
}

/// Mean/std color transfer of the masked pixels toward the surrounding
/// background, channel-wise in YCbCr.
///
/// The ring is every pixel of `frame` within `ring_width` pixels (Chebyshev
/// distance) of the mask, excluding the mask itself.
pub fn harmonize_crop(crop: &Crop, frame: &ImageBuffer, ring_width: u32) -> Result<Crop, EnhanceError> {
    let id = crop.instance_id;
    if !crop.mask.iter().any(|&m| m) {
        return Err(EnhanceError::EmptyMask(id));
    }
    let (cw, ch) = crop.dims();
    let (fw, fh) = frame.dims();
    if crop.origin.0 + cw > fw || crop.origin.1 + ch > fh {
        return Err(EnhanceError::DimensionMismatch { expected: (crop.origin.0 + cw, crop.origin.1 + ch), got: (fw, fh) });
    }
    // window of the frame around the crop that can hold ring pixels
    let wx0 = crop.origin.0.saturating_sub(ring_width);
    let wy0 = crop.origin.1.saturating_sub(ring_width);
    let wx1 = (crop.origin.0 + cw + ring_width).min(fw);
    let wy1 = (crop.origin.1 + ch + ring_width).min(fh);
    let (ww, wh) = ((wx1 - wx0) as usize, (wy1 - wy0) as usize);
    let mut wmask = vec![false; ww * wh];
    for y in 0..ch {
        for x in 0..cw {
            if crop.mask_at(x, y) {
                let gx = (crop.origin.0 + x - wx0) as usize;
                let gy = (crop.origin.1 + y - wy0) as usize;
                wmask[gy * ww + gx] = true;
            }
        }
    }
    let grown = dilate(&wmask, ww, wh, ring_width as usize);
    let mut ring = Stats::default();
    for y in 0..wh {
        for x in 0..ww {
            let i = y * ww + x;
            if grown[i] && !wmask[i] {
                ring.push(to_ycbcr(frame.get(wx0 + x as u32, wy0 + y as u32)));
            }
        }
    }
    if ring.n == 0.0 {
        return Err(EnhanceError::EmptyRing(id));
    }
    let mut veh = Stats::default();
    for y in 0..ch {
        for x in 0..cw {
            if crop.mask_at(x, y) {
                veh.push(to_ycbcr(crop.patch.get(x, y)));
            }
        }
    }
    let (mu_b, sd_b) = ring.mean_std();
    let (mu_v, sd_v) = veh.mean_std();
    let mut gain = [1.0; 3];
    for c in 0..3 {
        if sd_v[c] > 1e-9 {
            gain[c] = (sd_b[c] / sd_v[c]).clamp(SIGMA_RATIO_RANGE.0, SIGMA_RATIO_RANGE.1);
        }
    }
    let mut out = crop.clone();
    for y in 0..ch {
        for x in 0..cw {
            if crop.mask_at(x, y) {
                let v = to_ycbcr(crop.patch.get(x, y));
                let mapped = [0, 1, 2].map(|c| (v[c] - mu_v[c]) * gain[c] + mu_b[c]);
                out.patch.put(x, y, to_rgb(mapped));
            }
        }
    }
    Ok(out)
}

/// Pastes the masked pixels of every crop into `frame`, in crop order.
pub fn composite(frame: &ImageBuffer, crops: &CropSet) -> Result<ImageBuffer, EnhanceError> {
    if frame.dims() != crops.frame_dims {
        return Err(EnhanceError::DimensionMismatch { expected: crops.frame_dims, got: frame.dims() });
    }
    let mut out = frame.clone();
    for crop in &crops.crops {
        let (cw, ch) = crop.dims();
        if crop.origin.0 + cw > frame.width() || crop.origin.1 + ch > frame.height() {
            return Err(EnhanceError::DimensionMismatch {
                expected: (crop.origin.0 + cw, crop.origin.1 + ch),
                got: frame.dims(),
            });
        }
        for y in 0..ch {
            for x in 0..cw {
                if crop.mask_at(x, y) {
                    out.put(crop.origin.0 + x, crop.origin.1 + y, crop.patch.get(x, y));
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct IndexEntry {
    instance_id: u64,
    origin: [u32; 2],
    width: u32,
    height: u32,
    mask_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct IndexFrame {
    frame_id: String,
    width: u32,
    height: u32,
    crops: Vec<IndexEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ExchangeIndex {
    schema: String,
    frames: Vec<IndexFrame>,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> EnhanceError {
    EnhanceError::Io { path: path.display().to_string(), message: e.to_string() }
}

fn crop_path(dir: &Path, kind: &str, frame_id: &str, id: u64) -> PathBuf {
    dir.join(kind).join(frame_id).join(format!("{id}.png"))
}

fn valid_frame_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.')) && id != "." && id != ".."
}

/// Writes a batch of frames' crops to `dir` for an external translator.
pub fn export_for_translation(batch: &[(String, CropSet)], dir: &Path) -> Result<(), EnhanceError> {
    let mut frames = Vec::with_capacity(batch.len());
    for (frame_id, set) in batch {
        if !valid_frame_id(frame_id) {
            return Err(EnhanceError::ProtocolViolation(format!("invalid frame id {frame_id:?}")));
        }
        for kind in ["crops", "masks"] {
            let d = dir.join(kind).join(frame_id);
            std::fs::create_dir_all(&d).map_err(|e| io_err(&d, e))?;
        }
        let mut entries = Vec::with_capacity(set.crops.len());
        for crop in &set.crops {
            crop.patch.save_png(&crop_path(dir, "crops", frame_id, crop.instance_id))?;
            let (w, h) = crop.dims();
            let gray = GrayImage::from_fn(w, h, |x, y| Luma([if crop.mask_at(x, y) { 255 } else { 0 }]));
            let mp = crop_path(dir, "masks", frame_id, crop.instance_id);
            gray.save(&mp).map_err(|e| io_err(&mp, e))?;
            entries.push(IndexEntry {
                instance_id: crop.instance_id,
                origin: [crop.origin.0, crop.origin.1],
                width: w,
                height: h,
                mask_sha256: crop.mask_digest(),
            });
        }
        frames.push(IndexFrame { frame_id: frame_id.clone(), width: set.frame_dims.0, height: set.frame_dims.1, crops: entries });
    }
    let index = ExchangeIndex { schema: CROP_SCHEMA.into(), frames };
    let p = dir.join("index.json");
    std::fs::write(&p, serde_json::to_string_pretty(&index).expect("index serializes")).map_err(|e| io_err(&p, e))
}

/// Reads crops back from an exchange directory, checking that the
/// translator changed nothing but patch pixels.
pub fn import_translated(dir: &Path) -> Result<Vec<(String, CropSet)>, EnhanceError> {
    let violation = |m: String| EnhanceError::ProtocolViolation(m);
    let p = dir.join("index.json");
    let text = std::fs::read_to_string(&p).map_err(|e| io_err(&p, e))?;
    let index: ExchangeIndex = serde_json::from_str(&text).map_err(|e| violation(format!("index.json: {e}")))?;
    if index.schema != CROP_SCHEMA {
        return Err(violation(format!("unsupported schema {:?}", index.schema)));
    }
    let mut seen = BTreeMap::new();
    let mut out = Vec::with_capacity(index.frames.len());
    for frame in index.frames {
        if !valid_frame_id(&frame.frame_id) || seen.insert(frame.frame_id.clone(), ()).is_some() {
            return Err(violation(format!("bad or duplicate frame id {:?}", frame.frame_id)));
        }
        let mut crops = Vec::with_capacity(frame.crops.len());
        for e in frame.crops {
            let id = e.instance_id;
            let fid = &frame.frame_id;
            let cp = crop_path(dir, "crops", fid, id);
            if !cp.exists() {
                return Err(violation(format!("crop {id} of frame {fid} is missing")));
            }
            let patch = ImageBuffer::load_png(&cp)?;
            if patch.dims() != (e.width, e.height) {
                return Err(violation(format!(
                    "crop {id} of frame {fid} is {:?}, expected {:?}",
                    patch.dims(),
                    (e.width, e.height)
                )));
            }
            let mp = crop_path(dir, "masks", fid, id);
            if !mp.exists() {
                return Err(violation(format!("mask {id} of frame {fid} is missing")));
            }
            let gray = image::open(&mp).map_err(|e| io_err(&mp, e))?.into_luma8();
            if gray.dimensions() != (e.width, e.height) {
                return Err(violation(format!("mask {id} of frame {fid} was resized")));
            }
            let mask: Vec<bool> = gray.pixels().map(|p| p.0[0] >= 128).collect();
            let crop = Crop { instance_id: id, patch, mask, origin: (e.origin[0], e.origin[1]) };
            if crop.mask_digest() != e.mask_sha256 {
                return Err(violation(format!("mask {id} of frame {fid} was altered")));
            }
            if crop.origin.0 + e.width > frame.width || crop.origin.1 + e.height > frame.height {
                return Err(violation(format!("crop {id} of frame {fid} lies outside the frame")));
            }
            crops.push(crop);
        }
        crops.sort_by_key(|c| c.instance_id);
        out.push((frame.frame_id, CropSet { frame_dims: (frame.width, frame.height), crops }));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Render-like fixture: background color everywhere, rectangles of ids.
    fn fixture(w: u32, h: u32, rects: &[(u64, u32, u32, u32, u32, [u8; 3])]) -> RenderResult {
        let mut image = ImageBuffer::filled(w, h, [60, 60, 60]);
        let mut mask = vec![None; (w * h) as usize];
        for &(id, x0, y0, x1, y1, rgb) in rects {
            for y in y0..=y1 {
                for x in x0..=x1 {
                    image.put(x, y, rgb);
                    mask[(y * w + x) as usize] = Some(id);
                }
            }
        }
        let depth = vec![f64::INFINITY; (w * h) as usize];
        RenderResult { image, mask, depth }
    }

    #[test]
    fn crop_is_padded_mask_bbox() {
        let r = fixture(100, 80, &[(3, 20, 30, 39, 44, [200, 0, 0])]);
        let set = extract_crops(&r, 8);
        assert_eq!(set.crops.len(), 1);
        let c = &set.crops[0];
        assert_eq!(c.origin, (12, 22));
        assert_eq!(c.dims(), (20 + 16, 15 + 16));
        assert_eq!(c.mask.iter().filter(|&&m| m).count(), 20 * 15);
    }

    #[test]
    fn empty_render_and_corner_clip() {
        assert!(extract_crops(&fixture(50, 50, &[]), 8).crops.is_empty());
        let r = fixture(50, 50, &[(1, 0, 0, 4, 4, [1, 2, 3])]);
        let c = &extract_crops(&r, 8).crops[0];
        assert_eq!(c.origin, (0, 0));
        assert_eq!(c.dims(), (13, 13));
    }

    #[test]
    fn composite_round_trip_and_recolor() {
        let bg = ImageBuffer::filled(100, 80, [60, 60, 60]);
        let r = fixture(100, 80, &[(1, 10, 10, 30, 20, [200, 0, 0]), (2, 25, 15, 50, 40, [0, 0, 200])]);
        let set = extract_crops(&r, 8);
        assert_eq!(composite(&bg, &set).unwrap(), r.image);
        assert_eq!(composite(&bg, &CropSet { frame_dims: (100, 80), crops: vec![] }).unwrap(), bg);

        let mut red = set.clone();
        let c = &mut red.crops[1];
        let (w, h) = c.dims();
        for y in 0..h {
            for x in 0..w {
                c.patch.put(x, y, [255, 0, 0]);
            }
        }
        let out = composite(&r.image, &red).unwrap();
        for y in 0..80 {
            for x in 0..100 {
                let is2 = r.mask_at(x, y) == Some(2);
                assert_eq!(out.get(x, y) == [255, 0, 0], is2, "({x},{y})");
            }
        }
        assert!(matches!(composite(&ImageBuffer::new(5, 5), &set), Err(EnhanceError::DimensionMismatch { .. })));
    }

    #[test]
    fn harmonize_moves_mean_to_ring() {
        let r = fixture(120, 120, &[(1, 40, 40, 79, 79, [120, 120, 120])]);
        let bg = ImageBuffer::filled(120, 120, [60, 60, 60]);
        let crop = &extract_crops(&r, 8).crops[0];
        let out = harmonize_crop(crop, &bg, 16).unwrap();
        for y in 0..out.dims().1 {
            for x in 0..out.dims().0 {
                let px = out.patch.get(x, y);
                if crop.mask_at(x, y) {
                    assert!(px.iter().all(|&c| (c as i32 - 60).abs() <= 2), "{px:?}");
                } else {
                    assert_eq!(px, crop.patch.get(x, y));
                }
            }
        }
    }

    #[test]
    fn harmonize_identity_and_idempotence() {
        // textured vehicle over the same texture: stats already match
        let mut r = fixture(96, 96, &[(1, 32, 32, 63, 63, [0, 0, 0])]);
        let mut bg = ImageBuffer::new(96, 96);
        for y in 0..96 {
            for x in 0..96 {
                let v = [((x * 7 + y * 3) % 64 + 80) as u8, ((x * 5) % 50 + 90) as u8, ((y * 11) % 40 + 70) as u8];
                bg.put(x, y, v);
                r.image.put(x, y, v);
            }
        }
        let crop = &extract_crops(&r, 8).crops[0];
        let once = harmonize_crop(crop, &bg, 16).unwrap();
        let twice = harmonize_crop(&once, &bg, 16).unwrap();
        for (a, b) in once.patch.as_raw().iter().zip(twice.patch.as_raw()) {
            assert!((*a as i32 - *b as i32).abs() <= 1);
        }
    }

    #[test]
    fn harmonize_errors() {
        let r = fixture(40, 40, &[(1, 0, 0, 39, 39, [9, 9, 9])]);
        let crop = extract_crops(&r, 8).crops[0].clone();
        assert!(matches!(harmonize_crop(&crop, &r.image, 16), Err(EnhanceError::EmptyRing(1))));
        let mut empty = crop;
        empty.mask.iter_mut().for_each(|m| *m = false);
        assert!(matches!(harmonize_crop(&empty, &r.image, 16), Err(EnhanceError::EmptyMask(1))));
    }

    fn batch() -> Vec<(String, CropSet)> {
        let r = fixture(64, 48, &[(4, 5, 5, 20, 15, [10, 200, 30]), (9, 30, 20, 50, 40, [5, 6, 7])]);
        vec![("f0".into(), extract_crops(&r, 8))]
    }

    #[test]
    fn exchange_identity_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let b = batch();
        export_for_translation(&b, dir.path()).unwrap();
        assert_eq!(import_translated(dir.path()).unwrap(), b);
    }

    #[test]
    fn exchange_detects_violations() {
        let dir = tempfile::tempdir().unwrap();
        export_for_translation(&batch(), dir.path()).unwrap();
        let p = crop_path(dir.path(), "crops", "f0", 9);
        ImageBuffer::new(3, 3).save_png(&p).unwrap();
        assert!(matches!(import_translated(dir.path()), Err(EnhanceError::ProtocolViolation(_))));

        std::fs::remove_file(&p).unwrap();
        match import_translated(dir.path()) {
            Err(EnhanceError::ProtocolViolation(m)) => assert!(m.contains("crop 9"), "{m}"),
            other => panic!("{other:?}"),
        }

        let dir = tempfile::tempdir().unwrap();
        export_for_translation(&batch(), dir.path()).unwrap();
        let mp = crop_path(dir.path(), "masks", "f0", 4);
        let mut m = image::open(&mp).unwrap().into_luma8();
        m.put_pixel(0, 0, Luma([255]));
        m.save(&mp).unwrap();
        assert!(matches!(import_translated(dir.path()), Err(EnhanceError::ProtocolViolation(_))));
    }
}
