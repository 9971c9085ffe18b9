//! The pipeline configuration document.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::geometry::{View, DEFAULT_SCALE_FACTOR};
use crate::io::IoError;
use crate::nms::{Suppression, DEFAULT_NMS_IOU};
use crate::pipeline::PipelineParams;
use crate::pseudolabel::Weighting;
use crate::simulator::{DetectorModel, ImprovementModel, SceneConfig};
use crate::thresholding::{HistogramConfig, ThresholdMode};
use crate::Error;

/// Input and output locations. Relative paths are resolved against the
/// directory of the config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Teacher predictions on the unlabeled images.
    pub detections: Option<PathBuf>,
    /// Image table of the unlabeled pool.
    pub unlabeled: Option<PathBuf>,
    pub labeled: Option<PathBuf>,
    /// Optional ground truth of the unlabeled pool, for scoring.
    pub ground_truth: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

impl PathsConfig {
    fn resolve(&mut self, base: &Path) {
        for p in [
            &mut self.detections,
            &mut self.unlabeled,
            &mut self.labeled,
            &mut self.ground_truth,
            &mut self.output_dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

/// Simulation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulatorConfig {
    pub scene: SceneConfig,
    pub detector: DetectorModel,
    pub improvement: ImprovementModel,
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    pub iterations: usize,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        Self {
            scene: SceneConfig::default(),
            detector: DetectorModel::default(),
            improvement: ImprovementModel::default(),
            n_labeled: 100,
            n_unlabeled: 1000,
            iterations: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    pub histogram: HistogramConfig,
    pub mode: ThresholdMode,
    pub nms_iou: f64,
    /// Let detections of different classes suppress each other.
    pub cross_class_nms: bool,
    /// View tags: `identity`, `hflip`, `scale`, `hflip_scale`.
    pub views: Vec<String>,
    pub scale_factor: f64,
    /// Weight pseudo-labels by confidence; `false` gives every label weight 1.
    pub weights: bool,
    /// IoU at which predictions match ground truth for P/R/F1.
    pub eval_iou: f64,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub simulator: SimulatorConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            paths: PathsConfig::default(),
            histogram: HistogramConfig::default(),
            mode: ThresholdMode::default(),
            nms_iou: DEFAULT_NMS_IOU,
            cross_class_nms: false,
            views: View::all(DEFAULT_SCALE_FACTOR)
                .iter()
                .map(|v| v.tag().to_owned())
                .collect(),
            scale_factor: DEFAULT_SCALE_FACTOR,
            weights: true,
            eval_iou: 0.5,
            seed: None,
            workers: None,
            simulator: SimulatorConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), Error> {
        self.histogram.validate()?;
        if !(0.0..=1.0).contains(&self.nms_iou) || !(0.0..=1.0).contains(&self.eval_iou) {
            return Err(Error::Config("IoU thresholds must be in [0, 1]".into()));
        }
        if !(self.scale_factor.is_finite() && self.scale_factor > 0.0) {
            return Err(Error::Config(format!(
                "scale_factor must be positive, got {}",
                self.scale_factor
            )));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        self.view_list()?;
        Ok(())
    }

    pub fn view_list(&self) -> Result<Vec<View>, Error> {
        parse_views(&self.views, self.scale_factor)
    }

    pub fn params(&self) -> PipelineParams {
        PipelineParams {
            nms_iou: self.nms_iou,
            suppression: if self.cross_class_nms {
                Suppression::CrossClass
            } else {
                Suppression::ClassWise
            },
            histogram: self.histogram,
            mode: self.mode,
            weighting: if self.weights {
                Weighting::Confidence
            } else {
                Weighting::Unit
            },
        }
    }
}

/// Parses view tags, rejecting unknown and repeated ones.
pub fn parse_views<S: AsRef<str>>(tags: &[S], scale_factor: f64) -> Result<Vec<View>, Error> {
    if tags.is_empty() {
        return Err(Error::Config("at least one view is required".into()));
    }
    let mut views: Vec<View> = Vec::with_capacity(tags.len());
    for tag in tags {
        let tag = tag.as_ref().trim();
        let v = View::from_tag(tag, scale_factor).ok_or_else(|| Error::Config(format!("unknown view `{tag}`")))?;
        if views.iter().any(|w| w.rank() == v.rank()) {
            return Err(Error::Config(format!("view `{tag}` listed twice")));
        }
        views.push(v);
    }
    views.sort_by_key(View::rank);
    Ok(views)
}

/// Reads a JSON config and resolves its paths against the file's directory.
pub fn load_config(path: &Path) -> Result<PipelineConfig, Error> {
    let text = std::fs::read_to_string(path).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut cfg: PipelineConfig =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if let Some(base) = path.parent() {
        cfg.paths.resolve(base);
    }
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg: PipelineConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        assert_eq!(cfg.view_list().unwrap(), View::all(2.0).to_vec());
        assert_eq!(cfg.params(), PipelineParams::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"bins": 5}"#).is_err());
    }

    #[test]
    fn views_are_checked() {
        assert!(parse_views(&["identity", "rotate"], 2.0).is_err());
        assert!(parse_views(&["scale", "scale"], 2.0).is_err());
        assert_eq!(
            parse_views(&["scale", "identity"], 3.0).unwrap(),
            vec![View::Identity, View::Scale(3.0)]
        );
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(
            &path,
            r#"{"paths": {"labeled": "l.json", "output_dir": "/abs/out"}, "mode": "class-wise"}"#,
        )
        .unwrap();
        let cfg = load_config(&path).unwrap();
        assert_eq!(cfg.paths.labeled, Some(dir.path().join("l.json")));
        assert_eq!(cfg.paths.output_dir, Some(PathBuf::from("/abs/out")));
        assert_eq!(cfg.mode, ThresholdMode::ClassWise);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"histogram": {"lo": 0.9, "hi": 0.5}}"#).unwrap();
        assert!(load_config(&path).is_err());
        std::fs::write(&path, r#"{"workers": 0}"#).unwrap();
        assert!(matches!(load_config(&path), Err(Error::Config(_))));
    }
}
