//! Detection matching and metrics: precision/recall/F1 of a pseudo-label set
//! and COCO-style AP averaged over IoU thresholds.
//!
//! Matching is greedy in descending score order: each detection takes the
//! unmatched ground-truth box of its class with the highest IoU (lowest index
//! on ties) provided that IoU reaches the threshold. AP uses 101-point
//! interpolation.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

use crate::dataset::ImageId;
use crate::geometry::BBox;
use crate::nms::Detection;

/// A ground-truth object.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruth {
    pub class_id: u32,
    pub bbox: BBox,
}

impl GroundTruth {
    pub const fn new(class_id: u32, bbox: BBox) -> Self {
        Self { class_id, bbox }
    }
}

/// IoU thresholds 0.50, 0.55, …, 0.95.
pub fn coco_iou_thresholds() -> Vec<f64> {
    (0..10).map(|i| 0.5 + 0.05 * i as f64).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// Per detection, in input order: `Some(gt index)` when it is a true
    /// positive.
    pub det_match: Vec<Option<usize>>,
    /// Per ground-truth box: whether some detection claimed it.
    pub gt_matched: Vec<bool>,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl MatchResult {
    pub fn counts(&self) -> Counts {
        Counts {
            tp: self.tp,
            fp: self.fp,
            fn_: self.fn_,
        }
    }
}

/// Order in which detections claim ground truth: score descending, then
/// class and box for determinism, then input index.
fn claim_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .total_cmp(&dets[a].score)
            .then(dets[a].class_id.cmp(&dets[b].class_id))
            .then(dets[a].bbox.lex_cmp(&dets[b].bbox))
            .then(a.cmp(&b))
    });
    order
}

/// Matches the detections of one image against its ground truth.
pub fn match_detections(dets: &[Detection], gts: &[GroundTruth], iou_threshold: f64) -> MatchResult {
    let mut det_match = vec![None; dets.len()];
    let mut gt_matched = vec![false; gts.len()];
    for i in claim_order(dets) {
        let d = &dets[i];
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if gt_matched[g] || gt.class_id != d.class_id {
                continue;
            }
            let iou = d.bbox.iou(&gt.bbox);
            if iou >= iou_threshold && best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        if let Some((g, _)) = best {
            gt_matched[g] = true;
            det_match[i] = Some(g);
        }
    }
    let tp = det_match.iter().filter(|m| m.is_some()).count();
    MatchResult {
        fp: dets.len() - tp,
        fn_: gts.len() - tp,
        tp,
        det_match,
        gt_matched,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl std::ops::Add for Counts {
    type Output = Counts;

    fn add(self, o: Counts) -> Counts {
        Counts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrF1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision and recall default to 1 on an empty denominator; F1 is 0 when
/// both are 0.
pub fn pr_f1(c: Counts) -> PrF1 {
    let ratio = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    PrF1 { precision, recall, f1 }
}

/// Matches every image of a dataset. Images missing from `dets` contribute
/// only false negatives; images missing from `gts` only false positives.
pub fn match_dataset(
    dets: &BTreeMap<ImageId, Vec<Detection>>,
    gts: &BTreeMap<ImageId, Vec<GroundTruth>>,
    iou_threshold: f64,
) -> Counts {
    let ids: BTreeSet<ImageId> = dets.keys().chain(gts.keys()).copied().collect();
    let ids: Vec<ImageId> = ids.into_iter().collect();
    ids.par_iter()
        .map(|id| {
            let d = dets.get(id).map(Vec::as_slice).unwrap_or(&[]);
            let g = gts.get(id).map(Vec::as_slice).unwrap_or(&[]);
            match_detections(d, g, iou_threshold).counts()
        })
        .reduce(Counts::default, |a, b| a + b)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApReport {
    pub iou_thresholds: Vec<f64>,
    /// AP averaged over IoU thresholds, per class with ground truth.
    pub per_class: BTreeMap<u32, f64>,
    /// Mean of `per_class`; 0 when no class has ground truth.
    pub map: f64,
    /// Classes that only appear among detections.
    pub classes_without_gt: Vec<u32>,
}

/// Interpolated precision at the 101 recall points 0, 0.01, …, 1.
///
/// `ranked` holds the TP flags of one class's detections sorted by
/// descending score.
fn interpolated_ap(ranked: &[bool], n_gt: usize) -> f64 {
    let mut precision = Vec::with_capacity(ranked.len());
    let mut recall = Vec::with_capacity(ranked.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for &is_tp in ranked {
        if is_tp {
            tp += 1;
        } else {
            fp += 1;
        }
        precision.push(tp as f64 / (tp + fp) as f64);
        recall.push(tp as f64 / n_gt as f64);
    }
    // precision envelope: best precision at any deeper cut-off
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut sum = 0.0;
    for k in 0..=100 {
        let r = k as f64 / 100.0;
        let idx = recall.partition_point(|&x| x < r);
        if idx < precision.len() {
            sum += precision[idx];
        }
    }
    sum / 101.0
}

/// Per-class AP averaged over `iou_thresholds`, and their mean.
pub fn average_precision(
    dets: &BTreeMap<ImageId, Vec<Detection>>,
    gts: &BTreeMap<ImageId, Vec<GroundTruth>>,
    iou_thresholds: &[f64],
) -> ApReport {
    let mut gt_classes: BTreeMap<u32, usize> = BTreeMap::new();
    for g in gts.values().flatten() {
        *gt_classes.entry(g.class_id).or_default() += 1;
    }
    let det_classes: BTreeSet<u32> = dets.values().flatten().map(|d| d.class_id).collect();
    let classes_without_gt = det_classes
        .into_iter()
        .filter(|c| !gt_classes.contains_key(c))
        .collect();

    let ids: Vec<ImageId> = dets
        .keys()
        .chain(gts.keys())
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let per_class: BTreeMap<u32, f64> = gt_classes
        .par_iter()
        .map(|(&class_id, &n_gt)| {
            let mut ap_sum = 0.0;
            for &t in iou_thresholds {
                // (score, image, rank in image, is_tp)
                let mut ranked: Vec<(f64, ImageId, usize, bool)> = Vec::new();
                for id in &ids {
                    let d: Vec<Detection> = dets
                        .get(id)
                        .into_iter()
                        .flatten()
                        .filter(|d| d.class_id == class_id)
                        .copied()
                        .collect();
                    if d.is_empty() {
                        continue;
                    }
                    let g: Vec<GroundTruth> = gts
                        .get(id)
                        .into_iter()
                        .flatten()
                        .filter(|g| g.class_id == class_id)
                        .copied()
                        .collect();
                    let m = match_detections(&d, &g, t);
                    for (rank, i) in claim_order(&d).into_iter().enumerate() {
                        ranked.push((d[i].score, *id, rank, m.det_match[i].is_some()));
                    }
                }
                ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
                let flags: Vec<bool> = ranked.iter().map(|r| r.3).collect();
                ap_sum += interpolated_ap(&flags, n_gt);
            }
            (class_id, ap_sum / iou_thresholds.len().max(1) as f64)
        })
        .collect();

    let map = if per_class.is_empty() {
        0.0
    } else {
        per_class.values().sum::<f64>() / per_class.len() as f64
    };
    ApReport {
        iou_thresholds: iou_thresholds.to_vec(),
        per_class,
        map,
        classes_without_gt,
    }
}
