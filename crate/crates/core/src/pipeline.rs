//! In-memory composition of the pseudo-labeling stages: aggregate views,
//! threshold, filter, weight.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::dataset::ImageId;
use crate::nms::{aggregate_views_with, Detection, ImageViews, Suppression, DEFAULT_NMS_IOU};
use crate::pseudolabel::{
    emit_pseudo_dataset, filter_candidates, ImageDetections, PseudoImage, PseudoLabelError, Weighting,
};
use crate::thresholding::{compute_thresholds, HistogramConfig, ThresholdMode, ThresholdSet};
use crate::Error;

/// Knobs shared by every stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineParams {
    pub nms_iou: f64,
    pub suppression: Suppression,
    pub histogram: HistogramConfig,
    pub mode: ThresholdMode,
    pub weighting: Weighting,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self {
            nms_iou: DEFAULT_NMS_IOU,
            suppression: Suppression::ClassWise,
            histogram: HistogramConfig::default(),
            mode: ThresholdMode::default(),
            weighting: Weighting::default(),
        }
    }
}

/// Aggregates every image's views into candidates. Images left without any
/// candidate are dropped.
pub fn aggregate_candidates(
    images: &BTreeMap<ImageId, ImageViews>,
    nms_iou: f64,
    suppression: Suppression,
) -> ImageDetections {
    let items: Vec<(&ImageId, &ImageViews)> = images.iter().collect();
    let merged: Vec<(ImageId, Vec<Detection>)> = items
        .par_iter()
        .map(|(&id, iv)| (id, aggregate_views_with(&iv.views, iv.dims, nms_iou, suppression)))
        .collect();
    merged.into_iter().filter(|(_, d)| !d.is_empty()).collect()
}

/// Every candidate of every image, in image order.
pub fn flatten(candidates: &ImageDetections) -> Vec<Detection> {
    candidates.values().flatten().copied().collect()
}

/// Output of the thresholding and filtering stages.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelRun {
    pub thresholds: ThresholdSet,
    pub filtered: ImageDetections,
    pub pseudo: Vec<PseudoImage>,
}

/// Ground-thresholds the candidates and emits weighted pseudo-labels.
pub fn pseudo_label(candidates: &ImageDetections, params: &PipelineParams) -> Result<PseudoLabelRun, Error> {
    let thresholds = compute_thresholds(&flatten(candidates), params.histogram, params.mode)?;
    Ok(pseudo_label_with(candidates, thresholds, params.weighting)?)
}

/// Filters and weights the candidates under given thresholds.
pub fn pseudo_label_with(
    candidates: &ImageDetections,
    thresholds: ThresholdSet,
    weighting: Weighting,
) -> Result<PseudoLabelRun, PseudoLabelError> {
    let filtered = filter_candidates(candidates, &thresholds)?;
    let pseudo = emit_pseudo_dataset(&filtered, &thresholds, weighting);
    Ok(PseudoLabelRun {
        thresholds,
        filtered,
        pseudo,
    })
}
