//! Promotion of candidates to weighted pseudo-labels and construction of the
//! merged training set.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::{Annotation, AnnotationId, Dataset, ImageId, Source};
use crate::nms::Detection;
use crate::thresholding::{ClassTau, ThresholdSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PseudoLabelError {
    #[error("class {class_id} (image {image_id}) has no threshold")]
    MissingClassThreshold { class_id: u32, image_id: ImageId },
    #[error("need tau_l < tau_h, got tau_l = {tau_l}, tau_h = {tau_h}")]
    InvalidThresholdPair { tau_l: f64, tau_h: f64 },
    #[error("image id {0} is in both the labeled and the pseudo-labeled set")]
    DuplicateImageId(ImageId),
    #[error("annotation id {0} is used by both datasets")]
    DuplicateAnnotationId(AnnotationId),
    #[error("pseudo-labeled image {0} is not in the image table")]
    UnknownImage(ImageId),
}

/// Candidates (or pseudo-labels) of each image.
pub type ImageDetections = BTreeMap<ImageId, Vec<Detection>>;

/// Weight of a pseudo-label with score `s` under threshold `tau`:
/// `(s − τ)/(1 − τ)` for `τ ≤ s ≤ 1`, and 1 otherwise. Below-threshold
/// scores only occur for ground truth (implicit score 1 is fine too).
/// `τ = 1` is taken as weight 1.
pub fn alpha_weight(s: f64, tau: f64) -> f64 {
    if tau >= 1.0 || s < tau || s > 1.0 {
        return 1.0;
    }
    (s - tau) / (1.0 - tau)
}

/// Two-threshold form: linear ramp on `[τ_l, τ_h)`, 1 elsewhere.
pub fn alpha_weight_general(s: f64, tau_l: f64, tau_h: f64) -> Result<f64, PseudoLabelError> {
    if !(tau_l < tau_h) {
        return Err(PseudoLabelError::InvalidThresholdPair { tau_l, tau_h });
    }
    if tau_l <= s && s < tau_h {
        Ok((s - tau_l) / (tau_h - tau_l))
    } else {
        Ok(1.0)
    }
}

/// Keeps detections with `score >= τ(class)` and drops images left without
/// any. Classes whose histogram was empty keep nothing.
pub fn filter_candidates(candidates: &ImageDetections, ts: &ThresholdSet) -> Result<ImageDetections, PseudoLabelError> {
    let filtered: Vec<(ImageId, Vec<Detection>)> = candidates
        .par_iter()
        .map(|(&image_id, dets)| {
            let mut kept = Vec::with_capacity(dets.len());
            for d in dets {
                match ts.tau_for(d.class_id) {
                    ClassTau::Tau(t) if d.score >= t => kept.push(*d),
                    ClassTau::Tau(_) | ClassTau::Empty => {}
                    ClassTau::Missing => {
                        return Err(PseudoLabelError::MissingClassThreshold {
                            class_id: d.class_id,
                            image_id,
                        })
                    }
                }
            }
            Ok((image_id, kept))
        })
        .collect::<Result<_, _>>()?;
    Ok(filtered.into_iter().filter(|(_, dets)| !dets.is_empty()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoLabel {
    pub detection: Detection,
    pub alpha: f64,
    /// Threshold the detection was admitted under.
    pub source_tau: f64,
}

/// How pseudo-labels are weighted in the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Weighting {
    /// Weight by confidence above the threshold.
    #[default]
    Confidence,
    /// Every pseudo-label counts fully (the unweighted ablation).
    Unit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoImage {
    pub image_id: ImageId,
    pub labels: Vec<PseudoLabel>,
}

/// Attaches a weight and its threshold to every filtered detection.
pub fn emit_pseudo_dataset(filtered: &ImageDetections, ts: &ThresholdSet, weighting: Weighting) -> Vec<PseudoImage> {
    filtered
        .iter()
        .filter(|(_, dets)| !dets.is_empty())
        .map(|(&image_id, dets)| PseudoImage {
            image_id,
            labels: dets
                .iter()
                .filter_map(|d| {
                    let tau = match ts.tau_for(d.class_id) {
                        ClassTau::Tau(t) => t,
                        _ => return None,
                    };
                    let alpha = match weighting {
                        Weighting::Confidence => alpha_weight(d.score, tau),
                        Weighting::Unit => 1.0,
                    };
                    Some(PseudoLabel {
                        detection: *d,
                        alpha,
                        source_tau: tau,
                    })
                })
                .collect(),
        })
        .collect()
}

/// Number of images carrying at least one pseudo-label.
pub fn count_pseudo_images(pseudo: &[PseudoImage]) -> usize {
    pseudo.iter().filter(|p| !p.labels.is_empty()).count()
}

/// Writes pseudo-labels as a dataset over the corresponding images of
/// `image_table`. Annotation ids start at `first_id`.
pub fn pseudo_to_dataset(
    pseudo: &[PseudoImage],
    image_table: &Dataset,
    first_id: AnnotationId,
) -> Result<Dataset, PseudoLabelError> {
    let index = image_table.image_index();
    let mut out = Dataset {
        categories: image_table.categories.clone(),
        ..Dataset::default()
    };
    let mut next = first_id;
    let mut sorted: Vec<&PseudoImage> = pseudo.iter().filter(|p| !p.labels.is_empty()).collect();
    sorted.sort_by_key(|p| p.image_id);
    for p in sorted {
        let info = index
            .get(&p.image_id)
            .ok_or(PseudoLabelError::UnknownImage(p.image_id))?;
        out.images.push((*info).clone());
        let mut labels = p.labels.clone();
        labels.sort_by(|a, b| a.detection.canonical_cmp(&b.detection));
        for l in labels {
            out.annotations.push(Annotation {
                id: next,
                image_id: p.image_id,
                category_id: l.detection.class_id,
                bbox: l.detection.bbox,
                score: Some(l.detection.score),
                alpha: Some(l.alpha),
                source: Some(Source::Pseudo),
            });
            next += 1;
        }
    }
    Ok(out)
}

/// Tags every annotation as ground truth with weight 1.
pub fn mark_ground_truth(labeled: &Dataset) -> Dataset {
    let mut out = labeled.clone();
    for a in &mut out.annotations {
        a.alpha = Some(1.0);
        a.source = Some(Source::GroundTruth);
    }
    out
}

/// Disjoint union of the labeled set and the pseudo-labeled set.
///
/// Labeled annotations are tagged as ground truth with weight 1, pseudo
/// annotations keep their weight and are tagged as pseudo. The tag is for
/// auditing; training treats both alike.
pub fn merge_datasets(labeled: &Dataset, pseudo: &Dataset) -> Result<Dataset, PseudoLabelError> {
    let labeled_ids = labeled.image_ids();
    if let Some(&dup) = pseudo.images.iter().map(|i| &i.id).find(|id| labeled_ids.contains(id)) {
        return Err(PseudoLabelError::DuplicateImageId(dup));
    }
    let ann_ids: BTreeSet<AnnotationId> = labeled.annotations.iter().map(|a| a.id).collect();
    if let Some(a) = pseudo.annotations.iter().find(|a| ann_ids.contains(&a.id)) {
        return Err(PseudoLabelError::DuplicateAnnotationId(a.id));
    }

    let mut merged = mark_ground_truth(labeled);
    merged.images.extend(pseudo.images.iter().cloned());
    merged.annotations.extend(pseudo.annotations.iter().map(|a| Annotation {
        source: Some(Source::Pseudo),
        alpha: Some(a.alpha.unwrap_or(1.0)),
        ..a.clone()
    }));
    for c in &pseudo.categories {
        if !merged.categories.iter().any(|m| m.id == c.id) {
            merged.categories.push(c.clone());
        }
    }
    merged.canonicalize();
    Ok(merged)
}

/// Splits a merged set back into its labeled and pseudo-labeled parts by
/// the provenance tag. Both parts keep the full category table.
pub fn split_by_source(merged: &Dataset) -> (Dataset, Dataset) {
    let pseudo_images: BTreeSet<ImageId> = merged
        .annotations
        .iter()
        .filter(|a| a.source == Some(Source::Pseudo))
        .map(|a| a.image_id)
        .collect();
    let labeled_images: BTreeSet<ImageId> = merged.image_ids().difference(&pseudo_images).copied().collect();
    (merged.subset(&labeled_images), merged.subset(&pseudo_images))
}
