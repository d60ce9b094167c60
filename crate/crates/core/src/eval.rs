//! Pixel-distance detection metrics.
//!
//! A detection is a true positive at threshold θ when it lies strictly
//! closer than θ pixels to a not-yet-matched ground-truth bottom center of
//! the same image. Detections are visited by descending score and each
//! takes the nearest free ground truth. AP uses all-point interpolation;
//! AR is recall averaged over the thresholds, counting every detection.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotate::DatasetManifest;
use crate::localize::Detection;

pub const THRESHOLDS: [u32; 6] = [2, 5, 10, 15, 20, 50];

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("detection references unknown image id {0:?}")]
    UnknownImageId(String),
    #[error("threshold must be positive, got {0}")]
    InvalidThreshold(f64),
}

/// Ground-truth bottom centers per image id.
pub type GroundTruth = HashMap<String, Vec<[f64; 2]>>;

#[derive(Debug, Clone, PartialEq)]
pub struct MatchOutcome {
    /// Detection indices in visiting order.
    pub order: Vec<usize>,
    /// True-positive flag per visited detection, aligned with `order`.
    pub labels: Vec<bool>,
    pub matched_gt: usize,
}

/// Visiting order: score descending, then image id, then position, then
/// input index. Only the last key depends on input order, and it only
/// separates identical detections.
pub fn detection_order(dets: &[Detection]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..dets.len()).collect();
    idx.sort_by(|&a, &b| {
        let (da, db) = (&dets[a], &dets[b]);
        db.score
            .total_cmp(&da.score)
            .then_with(|| da.image_id.cmp(&db.image_id))
            .then_with(|| da.bottom_center[0].total_cmp(&db.bottom_center[0]))
            .then_with(|| da.bottom_center[1].total_cmp(&db.bottom_center[1]))
            .then_with(|| a.cmp(&b))
    });
    idx
}

fn dist(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    let (dx, dy) = (a[0] - b[0], a[1] - b[1]);
    (dx * dx + dy * dy).sqrt()
}

pub fn match_at_threshold(gt: &GroundTruth, dets: &[Detection], theta: f64) -> Result<MatchOutcome, EvalError> {
    if !(theta > 0.0) {
        return Err(EvalError::InvalidThreshold(theta));
    }
    let order = detection_order(dets);
    let mut used: HashMap<&str, Vec<bool>> = gt.iter().map(|(k, v)| (k.as_str(), vec![false; v.len()])).collect();
    let mut labels = Vec::with_capacity(order.len());
    let mut matched_gt = 0;
    for &i in &order {
        let d = &dets[i];
        let points = gt.get(&d.image_id).map(Vec::as_slice).unwrap_or(&[]);
        let mut best: Option<(usize, f64)> = None;
        if let Some(taken) = used.get(d.image_id.as_str()) {
            for (j, g) in points.iter().enumerate() {
                if taken[j] {
                    continue;
                }
                let dd = dist(&d.bottom_center, g);
                if dd < theta && best.is_none_or(|(_, b)| dd < b) {
                    best = Some((j, dd));
                }
            }
        }
        match best {
            Some((j, _)) => {
                used.get_mut(d.image_id.as_str()).unwrap()[j] = true;
                matched_gt += 1;
                labels.push(true);
            }
            None => labels.push(false),
        }
    }
    Ok(MatchOutcome { order, labels, matched_gt })
}

/// All-point interpolated AP over labels in visiting order.
pub fn average_precision(labels: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return if labels.is_empty() { 1.0 } else { 0.0 };
    }
    let mut precision = Vec::with_capacity(labels.len());
    let mut tp = 0usize;
    for (k, &l) in labels.iter().enumerate() {
        tp += l as usize;
        precision.push(tp as f64 / (k + 1) as f64);
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let mut sum = 0.0;
    for (k, &l) in labels.iter().enumerate() {
        if l {
            sum += precision[k];
        }
    }
    sum / n_gt as f64
}

fn recall(matched: usize, n_gt: usize) -> f64 {
    if n_gt == 0 {
        1.0
    } else {
        matched as f64 / n_gt as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCounts {
    pub n_gt: usize,
    pub n_det: usize,
    pub tp_per_threshold: BTreeMap<u32, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ap_per_threshold: BTreeMap<u32, f64>,
    pub recall_per_threshold: BTreeMap<u32, f64>,
    pub map: f64,
    pub ap20: f64,
    pub ap50: f64,
    pub ar: f64,
    pub counts: EvalCounts,
}

pub fn ground_truth_of(manifest: &DatasetManifest) -> GroundTruth {
    let mut gt: GroundTruth = manifest.images.iter().map(|i| (i.id.clone(), Vec::new())).collect();
    for (id, anns) in &manifest.annotations {
        gt.entry(id.clone()).or_default().extend(anns.iter().map(|a| a.bottom_center));
    }
    gt
}

pub fn evaluate_gt(gt: &GroundTruth, dets: &[Detection]) -> Result<EvalReport, EvalError> {
    if let Some(d) = dets.iter().find(|d| !gt.contains_key(&d.image_id)) {
        return Err(EvalError::UnknownImageId(d.image_id.clone()));
    }
    let n_gt: usize = gt.values().map(Vec::len).sum();
    let per: Vec<(u32, f64, f64, usize)> = THRESHOLDS
        .par_iter()
        .map(|&t| {
            let m = match_at_threshold(gt, dets, t as f64).expect("thresholds are positive");
            (t, average_precision(&m.labels, n_gt), recall(m.matched_gt, n_gt), m.matched_gt)
        })
        .collect();
    let ap_per_threshold: BTreeMap<u32, f64> = per.iter().map(|p| (p.0, p.1)).collect();
    let recall_per_threshold: BTreeMap<u32, f64> = per.iter().map(|p| (p.0, p.2)).collect();
    let n = per.len() as f64;
    Ok(EvalReport {
        map: per.iter().map(|p| p.1).sum::<f64>() / n,
        ar: per.iter().map(|p| p.2).sum::<f64>() / n,
        ap20: ap_per_threshold[&20],
        ap50: ap_per_threshold[&50],
        ap_per_threshold,
        recall_per_threshold,
        counts: EvalCounts { n_gt, n_det: dets.len(), tp_per_threshold: per.iter().map(|p| (p.0, p.3)).collect() },
    })
}

pub fn evaluate(manifest: &DatasetManifest, dets: &[Detection]) -> Result<EvalReport, EvalError> {
    evaluate_gt(&ground_truth_of(manifest), dets)
}

/// Writes a header and one row: label, image count, then mAP, AP@20, AP@50
/// and AR as percentages with one decimal.
pub fn write_csv_row<W: Write>(out: W, label: &str, images: usize, report: &EvalReport, header: bool) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if header {
        w.write_record(["label", "images", "mAP", "AP@20", "AP@50", "AR"])?;
    }
    let pct = |v: f64| format!("{:.1}", v * 100.0);
    w.write_record([
        label.to_string(),
        images.to_string(),
        pct(report.map),
        pct(report.ap20),
        pct(report.ap50),
        pct(report.ar),
    ])?;
    w.flush()?;
    Ok(())
}
