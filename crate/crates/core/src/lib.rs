//! Detector-agnostic pseudo-labeling toolkit for semi-supervised object
//! detection.
//!
//! Teacher predictions on several views of each unlabeled image are mapped
//! back to the original frame and merged with NMS ([`nms`]). The confidence
//! histogram of the merged candidates sets the score threshold at its
//! lowest-density bin ([`thresholding`]). Surviving candidates become
//! pseudo-labels weighted by their confidence above the threshold, and are
//! merged with the labeled set for an external trainer ([`pseudolabel`]).
//! [`simulator`] replays the whole teacher/student loop on synthetic scenes
//! with known ground truth.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dataset;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod nms;
pub mod pipeline;
pub mod pseudolabel;
pub mod simulator;
pub mod thresholding;

pub use dataset::{Annotation, Category, Dataset, ImageId, ImageInfo, Source};
pub use geometry::{apply_view, invert_view, iou, BBox, ImageDims, View};
pub use nms::{aggregate_views, nms, Detection, ImageViews, ViewPredictions};
pub use thresholding::{ground_threshold, HistogramConfig, ThresholdMode, ThresholdSet};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Threshold(#[from] thresholding::ThresholdError),
    #[error(transparent)]
    PseudoLabel(#[from] pseudolabel::PseudoLabelError),
    #[error(transparent)]
    Io(#[from] io::IoError),
    #[error("invalid config: {0}")]
    Config(String),
}
