//! Synthetic scenes and a stochastic stand-in for the teacher detector, so
//! the whole pseudo-labeling loop can be scored against known ground truth.
//!
//! Randomness is drawn from counter-based streams keyed by `(seed, purpose,
//! image, view, object)`. Results therefore do not depend on the number of
//! worker threads or on processing order, and two detector models evaluated
//! with the same seed share their random draws: a model with higher recall
//! detects a superset of the objects found by a weaker one.
//!
//! The detector model is a modeling assumption, not a claim about any real
//! network. True-positive and false-positive scores follow two Beta
//! distributions whose mixture gives the U-shaped score histogram seen in
//! practice. The [`ImprovementModel`] maps pseudo-label quality to the next
//! detector and stands in for student training.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Annotation, Category, Dataset, ImageId, ImageInfo, Source};
use crate::eval::{match_dataset, pr_f1, GroundTruth};
use crate::geometry::{apply_view, BBox, ImageDims, View};
use crate::io::ViewDetection;
use crate::nms::{Detection, ImageViews, ViewPredictions};
use crate::pipeline::{aggregate_candidates, flatten, pseudo_label, pseudo_label_with, PipelineParams};
use crate::pseudolabel::{count_pseudo_images, ImageDetections, PseudoImage};
use crate::thresholding::{ClassTau, ThresholdError, ThresholdSet};
use crate::Error;

const STREAM_SCENE: u64 = 1;
const STREAM_TP: u64 = 2;
const STREAM_FP: u64 = 3;
const STREAM_OBJECT: u64 = 4;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent generator for one `(seed, key...)` tuple.
fn stream(seed: u64, key: &[u64]) -> ChaCha8Rng {
    let mut h = splitmix64(seed);
    for &k in key {
        h = splitmix64(h ^ k);
    }
    ChaCha8Rng::seed_from_u64(h)
}

fn log_uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if lo >= hi {
        return lo;
    }
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

/// Poisson draw by inverse CDF from a single uniform, so a smaller rate
/// never yields more events for the same `u`.
fn poisson_inverse(rate: f64, u: f64) -> usize {
    if rate <= 0.0 {
        return 0;
    }
    let mut p = (-rate).exp();
    let mut cdf = p;
    let mut k = 0;
    while u > cdf && k < 10_000 {
        k += 1;
        p *= rate / k as f64;
        cdf += p;
        if p == 0.0 && cdf < u {
            break;
        }
    }
    k
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// How synthetic scenes are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub width: u32,
    pub height: u32,
    /// Inclusive range of objects per image.
    pub min_objects: u32,
    pub max_objects: u32,
    /// Occurrence weight of each class; class ids are `0..len`.
    pub class_weights: Vec<f64>,
    /// Log-uniform side length of regular objects.
    pub min_side: f64,
    pub max_side: f64,
    /// Fraction of objects drawn from the small size range instead.
    pub small_fraction: f64,
    pub small_min_side: f64,
    pub small_max_side: f64,
    /// Largest width/height ratio (and its inverse).
    pub max_aspect: f64,
    /// Placements overlapping an existing object above this IoU are redrawn.
    pub max_overlap: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            width: 640,
            height: 480,
            min_objects: 1,
            max_objects: 8,
            class_weights: vec![0.3, 0.25, 0.2, 0.15, 0.1],
            min_side: 40.0,
            max_side: 200.0,
            small_fraction: 0.3,
            small_min_side: 10.0,
            small_max_side: 28.0,
            max_aspect: 1.5,
            max_overlap: 0.3,
        }
    }
}

impl SceneConfig {
    pub fn n_classes(&self) -> usize {
        self.class_weights.len()
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.width == 0 || self.height == 0 {
            return Err(config_err("scene dims must be positive"));
        }
        if self.min_objects > self.max_objects {
            return Err(config_err("min_objects > max_objects"));
        }
        if self.class_weights.is_empty() || self.class_weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(config_err("class_weights must be non-empty and non-negative"));
        }
        let total: f64 = self.class_weights.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(config_err(format!("class_weights sum to {total}, not 1")));
        }
        if !(0.0 < self.min_side && self.min_side <= self.max_side)
            || !(0.0 < self.small_min_side && self.small_min_side <= self.small_max_side)
        {
            return Err(config_err("side ranges must be positive and ordered"));
        }
        if !(0.0..=1.0).contains(&self.small_fraction) {
            return Err(config_err("small_fraction must be in [0, 1]"));
        }
        if !(self.max_aspect >= 1.0) || !(0.0..=1.0).contains(&self.max_overlap) {
            return Err(config_err("max_aspect must be >= 1 and max_overlap in [0, 1]"));
        }
        Ok(())
    }
}

/// One synthetic image and its objects.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneImage {
    pub id: ImageId,
    pub width: u32,
    pub height: u32,
    pub objects: Vec<GroundTruth>,
}

impl SceneImage {
    pub fn dims(&self) -> ImageDims {
        ImageDims::new(self.width as f64, self.height as f64)
    }
}

fn generate_scene(cfg: &SceneConfig, classes: &WeightedIndex<f64>, id: ImageId, seed: u64) -> SceneImage {
    let mut rng = stream(seed, &[STREAM_SCENE, id]);
    let (w_img, h_img) = (cfg.width as f64, cfg.height as f64);
    let count = rng.random_range(cfg.min_objects..=cfg.max_objects);
    let mut objects: Vec<GroundTruth> = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let class_id = classes.sample(&mut rng) as u32;
        let small = rng.random::<f64>() < cfg.small_fraction;
        for _attempt in 0..20 {
            let side = if small {
                log_uniform(&mut rng, cfg.small_min_side, cfg.small_max_side)
            } else {
                log_uniform(&mut rng, cfg.min_side, cfg.max_side)
            };
            let aspect = log_uniform(&mut rng, 1.0 / cfg.max_aspect, cfg.max_aspect).sqrt();
            let w = (side * aspect).min(w_img);
            let h = (side / aspect).min(h_img);
            let x = rng.random::<f64>() * (w_img - w);
            let y = rng.random::<f64>() * (h_img - h);
            let bbox = BBox::from_xywh(x, y, w, h);
            if objects.iter().all(|o| o.bbox.iou(&bbox) <= cfg.max_overlap) {
                objects.push(GroundTruth::new(class_id, bbox));
                break;
            }
        }
    }
    SceneImage {
        id,
        width: cfg.width,
        height: cfg.height,
        objects,
    }
}

/// Draws `n` scenes with ids `first_id..first_id + n`.
pub fn generate_scenes(cfg: &SceneConfig, n: usize, seed: u64, first_id: ImageId) -> Result<Vec<SceneImage>, Error> {
    cfg.validate()?;
    let classes = WeightedIndex::new(&cfg.class_weights).map_err(|e| config_err(e.to_string()))?;
    Ok((0..n as u64)
        .into_par_iter()
        .map(|i| generate_scene(cfg, &classes, first_id + i, seed))
        .collect())
}

/// Ground truth of each scene, keyed by image.
pub fn ground_truth_map(scenes: &[SceneImage]) -> BTreeMap<ImageId, Vec<GroundTruth>> {
    scenes.iter().map(|s| (s.id, s.objects.clone())).collect()
}

/// The scenes as a ground-truth dataset with categories `class_0..`.
pub fn scenes_to_dataset(scenes: &[SceneImage], n_classes: usize) -> Dataset {
    let mut ds = Dataset {
        categories: (0..n_classes as u32)
            .map(|id| Category {
                id,
                name: format!("class_{id}"),
            })
            .collect(),
        ..Dataset::default()
    };
    let mut next = 1;
    for s in scenes {
        ds.images.push(ImageInfo {
            id: s.id,
            width: s.width,
            height: s.height,
            file_name: format!("{:08}.png", s.id),
        });
        for o in &s.objects {
            ds.annotations.push(Annotation {
                id: next,
                image_id: s.id,
                category_id: o.class_id,
                bbox: o.bbox,
                score: None,
                alpha: None,
                source: Some(Source::GroundTruth),
            });
            next += 1;
        }
    }
    ds
}

/// Shape parameters of a Beta distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BetaParams {
    pub a: f64,
    pub b: f64,
}

impl BetaParams {
    pub const fn new(a: f64, b: f64) -> Self {
        Self { a, b }
    }

    fn distribution(&self) -> Result<Beta<f64>, Error> {
        Beta::new(self.a, self.b).map_err(|e| config_err(format!("beta({}, {}): {e}", self.a, self.b)))
    }
}

/// Stochastic teacher: what it finds, how well it localizes and how it
/// scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorModel {
    /// Probability of detecting a regular object in the identity view.
    pub recall: f64,
    /// Per-class overrides of `recall`.
    pub class_recall: BTreeMap<u32, f64>,
    /// Objects with a smaller area count as small.
    pub small_area: f64,
    /// Recall multiplier for small objects in unscaled views.
    pub small_recall_factor: f64,
    /// Recall multipliers in upscaled views for small and regular objects.
    pub scaled_small_recall_factor: f64,
    pub scaled_large_recall_factor: f64,
    /// Probability that a view reuses the object's shared miss draw, so
    /// that hard objects tend to be missed in every view.
    pub view_correlation: f64,
    /// Mean false positives per image and view.
    pub fp_rate: f64,
    pub fp_min_side: f64,
    pub fp_max_side: f64,
    /// Localization noise, in pixels of the view frame.
    pub loc_sigma: f64,
    pub tp_score: BetaParams,
    /// True-positive scores `s` are reported as `1 - (1 - s)^tp_sharpness`;
    /// values above 1 push them towards 1.
    pub tp_sharpness: f64,
    pub fp_score: BetaParams,
    /// A class the detector has trouble with: its true positives are scored
    /// by `hard_tp_score`.
    pub hard_class: Option<u32>,
    pub hard_tp_score: BetaParams,
}

impl Default for DetectorModel {
    fn default() -> Self {
        Self {
            recall: 0.6,
            class_recall: BTreeMap::new(),
            small_area: 32.0 * 32.0,
            small_recall_factor: 0.35,
            scaled_small_recall_factor: 1.0,
            scaled_large_recall_factor: 0.9,
            view_correlation: 0.7,
            fp_rate: 10.0,
            fp_min_side: 16.0,
            fp_max_side: 160.0,
            loc_sigma: 1.0,
            tp_score: BetaParams::new(8.0, 1.2),
            tp_sharpness: 1.0,
            fp_score: BetaParams::new(2.0, 5.0),
            hard_class: None,
            hard_tp_score: BetaParams::new(2.0, 4.0),
        }
    }
}

impl DetectorModel {
    pub fn validate(&self) -> Result<(), Error> {
        let probs = [
            self.recall,
            self.small_recall_factor,
            self.scaled_small_recall_factor,
            self.scaled_large_recall_factor,
            self.view_correlation,
        ];
        if probs
            .iter()
            .chain(self.class_recall.values())
            .any(|p| !(0.0..=1.0).contains(p))
        {
            return Err(config_err("recalls and recall factors must be in [0, 1]"));
        }
        if !(self.fp_rate >= 0.0) || !(self.loc_sigma >= 0.0) || !(self.tp_sharpness > 0.0) {
            return Err(config_err(
                "fp_rate and loc_sigma must be non-negative, tp_sharpness positive",
            ));
        }
        if !(0.0 < self.fp_min_side && self.fp_min_side <= self.fp_max_side) {
            return Err(config_err("false-positive side range must be positive and ordered"));
        }
        self.tp_score.distribution()?;
        self.fp_score.distribution()?;
        self.hard_tp_score.distribution()?;
        Ok(())
    }

    pub fn class_recall(&self, class_id: u32) -> f64 {
        self.class_recall.get(&class_id).copied().unwrap_or(self.recall)
    }

    /// Probability that `gt` is detected in `view`.
    pub fn detection_probability(&self, gt: &GroundTruth, view: View) -> f64 {
        let small = gt.bbox.area() < self.small_area;
        let factor = match (view.scale_factor() > 1.0, small) {
            (false, false) => 1.0,
            (false, true) => self.small_recall_factor,
            (true, false) => self.scaled_large_recall_factor,
            (true, true) => self.scaled_small_recall_factor,
        };
        (self.class_recall(gt.class_id) * factor).clamp(0.0, 1.0)
    }
}

struct Samplers {
    tp: Beta<f64>,
    hard_tp: Beta<f64>,
    fp: Beta<f64>,
}

impl Samplers {
    fn new(m: &DetectorModel) -> Result<Self, Error> {
        Ok(Self {
            tp: m.tp_score.distribution()?,
            hard_tp: m.hard_tp_score.distribution()?,
            fp: m.fp_score.distribution()?,
        })
    }
}

fn jitter(b: &BBox, sigma: f64, z: [f64; 4]) -> BBox {
    let x1 = b.x1 + sigma * z[0];
    let y1 = b.y1 + sigma * z[1];
    let x2 = (b.x2 + sigma * z[2]).max(x1 + 1.0);
    let y2 = (b.y2 + sigma * z[3]).max(y1 + 1.0);
    BBox::new(x1, y1, x2, y2)
}

fn simulate_view(
    scene: &SceneImage,
    view: View,
    model: &DetectorModel,
    samplers: &Samplers,
    n_classes: usize,
    seed: u64,
) -> ViewPredictions {
    let dims = scene.dims();
    let rank = view.rank() as u64;
    let mut dets = Vec::new();
    for (j, gt) in scene.objects.iter().enumerate() {
        let shared: f64 = stream(seed, &[STREAM_OBJECT, scene.id, j as u64]).random();
        let mut rng = stream(seed, &[STREAM_TP, scene.id, rank, j as u64]);
        // fixed draw order per object keeps models comparable
        let (w, own): (f64, f64) = (rng.random(), rng.random());
        let u = if w < model.view_correlation { shared } else { own };
        let z: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let score = if model.hard_class == Some(gt.class_id) {
            samplers.hard_tp.sample(&mut rng)
        } else {
            samplers.tp.sample(&mut rng)
        };
        let score = 1.0 - (1.0 - score.clamp(0.0, 1.0)).powf(model.tp_sharpness);
        if u < model.detection_probability(gt, view) {
            let bbox = if model.loc_sigma > 0.0 {
                jitter(&apply_view(&gt.bbox, view, dims), model.loc_sigma, z)
            } else {
                apply_view(&gt.bbox, view, dims)
            };
            dets.push(Detection::new(gt.class_id, bbox, score.clamp(0.0, 1.0)));
        }
    }

    let mut rng = stream(seed, &[STREAM_FP, scene.id, rank, 0]);
    let n_fp = poisson_inverse(model.fp_rate, rng.random());
    for k in 0..n_fp {
        let mut rng = stream(seed, &[STREAM_FP, scene.id, rank, k as u64 + 1]);
        let class_id = rng.random_range(0..n_classes.max(1)) as u32;
        let side = log_uniform(&mut rng, model.fp_min_side, model.fp_max_side);
        let w = side.min(dims.width);
        let h = (side * log_uniform(&mut rng, 0.67, 1.5)).min(dims.height);
        let x = rng.random::<f64>() * (dims.width - w);
        let y = rng.random::<f64>() * (dims.height - h);
        let score = samplers.fp.sample(&mut rng).clamp(0.0, 1.0);
        let bbox = apply_view(&BBox::from_xywh(x, y, w, h), view, dims);
        dets.push(Detection::new(class_id, bbox, score));
    }
    ViewPredictions::new(view, dets)
}

/// Runs the detector model on every scene under every view. Boxes are in
/// each view's frame.
pub fn simulate_detector(
    scenes: &[SceneImage],
    model: &DetectorModel,
    views: &[View],
    n_classes: usize,
    seed: u64,
) -> Result<BTreeMap<ImageId, ImageViews>, Error> {
    model.validate()?;
    if views.is_empty() {
        return Err(config_err("at least one view is required"));
    }
    let samplers = Samplers::new(model)?;
    let out: Vec<(ImageId, ImageViews)> = scenes
        .par_iter()
        .map(|s| {
            let views = views
                .iter()
                .map(|&v| simulate_view(s, v, model, &samplers, n_classes, seed))
                .collect();
            (s.id, ImageViews { dims: s.dims(), views })
        })
        .collect();
    Ok(out.into_iter().collect())
}

/// Flattens simulated predictions into detection-file records.
pub fn to_view_detections(sim: &BTreeMap<ImageId, ImageViews>) -> Vec<ViewDetection> {
    sim.iter()
        .flat_map(|(&image_id, iv)| {
            iv.views.iter().flat_map(move |vp| {
                vp.detections.iter().map(move |&detection| ViewDetection {
                    image_id,
                    view: vp.view,
                    detection,
                })
            })
        })
        .collect()
}

/// Maps pseudo-label quality to the next detector. Student training is
/// modeled as a gain proportional to the F1 of the pseudo-labels it was
/// trained on; refinement on labeled data adds a fixed bonus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImprovementModel {
    /// Fraction of the missing recall recovered per unit of F1.
    pub recall_gain: f64,
    /// Relative false-positive reduction per unit of F1.
    pub fp_decay: f64,
    /// Relative localization-noise reduction per unit of F1.
    pub sigma_decay: f64,
    /// Relative growth of the true-positive score sharpness per unit of F1.
    pub score_gain: f64,
    pub refine_recall_bonus: f64,
    pub refine_fp_decay: f64,
    pub refine_score_bonus: f64,
}

impl Default for ImprovementModel {
    fn default() -> Self {
        Self {
            recall_gain: 0.3,
            fp_decay: 0.3,
            sigma_decay: 0.3,
            score_gain: 0.1,
            refine_recall_bonus: 0.05,
            refine_fp_decay: 0.1,
            refine_score_bonus: 0.05,
        }
    }
}

impl ImprovementModel {
    /// No learning at all: every stage reproduces its teacher.
    pub fn identity() -> Self {
        Self {
            recall_gain: 0.0,
            fp_decay: 0.0,
            sigma_decay: 0.0,
            score_gain: 0.0,
            refine_recall_bonus: 0.0,
            refine_fp_decay: 0.0,
            refine_score_bonus: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        let all = [
            self.recall_gain,
            self.fp_decay,
            self.sigma_decay,
            self.score_gain,
            self.refine_recall_bonus,
            self.refine_fp_decay,
            self.refine_score_bonus,
        ];
        if all.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(config_err("improvement parameters must be in [0, 1]"));
        }
        Ok(())
    }

    fn apply(m: &DetectorModel, recall: f64, fp: f64, sigma: f64, score: f64) -> DetectorModel {
        let lift = |r: f64| r + recall * (1.0 - r);
        let mut next = m.clone();
        next.recall = lift(m.recall);
        for r in next.class_recall.values_mut() {
            *r = lift(*r);
        }
        next.small_recall_factor = lift(m.small_recall_factor);
        next.fp_rate = m.fp_rate * (1.0 - fp);
        next.loc_sigma = m.loc_sigma * (1.0 - sigma);
        next.tp_sharpness = m.tp_sharpness * (1.0 + score);
        next
    }

    /// Student trained on pseudo-labels of quality `f1`.
    pub fn student(&self, teacher: &DetectorModel, f1: f64) -> DetectorModel {
        let f1 = f1.clamp(0.0, 1.0);
        Self::apply(
            teacher,
            self.recall_gain * f1,
            self.fp_decay * f1,
            self.sigma_decay * f1,
            self.score_gain * f1,
        )
    }

    /// Student after a short refinement on labeled data only.
    pub fn refine(&self, student: &DetectorModel) -> DetectorModel {
        Self::apply(
            student,
            self.refine_recall_bonus,
            self.refine_fp_decay,
            0.0,
            self.refine_score_bonus,
        )
    }
}

/// Everything the simulated loop needs besides the models.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopSettings {
    pub params: PipelineParams,
    pub views: Vec<View>,
    pub n_classes: usize,
    pub seed: u64,
    /// IoU at which pseudo-labels count as correct.
    pub match_iou: f64,
}

impl LoopSettings {
    pub fn new(params: PipelineParams, views: Vec<View>, n_classes: usize, seed: u64) -> Self {
        Self {
            params,
            views,
            n_classes,
            seed,
            match_iou: 0.5,
        }
    }
}

/// Quality of a pseudo-label set against the hidden ground truth.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PseudoQuality {
    pub n_labels: usize,
    pub n_images: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn pseudo_quality(pseudo: &[PseudoImage], gt: &BTreeMap<ImageId, Vec<GroundTruth>>, iou: f64) -> PseudoQuality {
    let dets: ImageDetections = pseudo
        .iter()
        .map(|p| (p.image_id, p.labels.iter().map(|l| l.detection).collect()))
        .collect();
    let counts = match_dataset(&dets, gt, iou);
    let prf = pr_f1(counts);
    PseudoQuality {
        n_labels: pseudo.iter().map(|p| p.labels.len()).sum(),
        n_images: count_pseudo_images(pseudo),
        tp: counts.tp,
        fp: counts.fp,
        fn_: counts.fn_,
        precision: prf.precision,
        recall: prf.recall,
        f1: prf.f1,
    }
}

/// Metrics of one model run through the pseudo-labeling stages.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageMetrics {
    /// Pooled ground threshold (reported in both modes).
    pub uniform_tau: Option<f64>,
    /// Per-class thresholds; `None` for classes with an empty histogram.
    pub class_tau: BTreeMap<u32, Option<f64>>,
    pub n_candidates: usize,
    pub n_candidate_images: usize,
    /// Recall of the candidates before thresholding.
    pub candidate_recall: f64,
    pub pseudo: PseudoQuality,
    pub pseudo_labels_per_class: BTreeMap<u32, usize>,
    /// Images in the merged training set.
    pub merged_images: usize,
}

/// Simulates the teacher on the unlabeled pool and aggregates its views.
pub fn simulate_candidates(
    unlabeled: &[SceneImage],
    model: &DetectorModel,
    settings: &LoopSettings,
) -> Result<ImageDetections, Error> {
    let sim = simulate_detector(unlabeled, model, &settings.views, settings.n_classes, settings.seed)?;
    Ok(aggregate_candidates(
        &sim,
        settings.params.nms_iou,
        settings.params.suppression,
    ))
}

fn candidate_recall(cands: &ImageDetections, gt: &BTreeMap<ImageId, Vec<GroundTruth>>, iou: f64) -> f64 {
    pr_f1(match_dataset(cands, gt, iou)).recall
}

/// Candidate recall of `model` on the pool.
pub fn evaluate_candidate_recall(
    unlabeled: &[SceneImage],
    model: &DetectorModel,
    settings: &LoopSettings,
) -> Result<f64, Error> {
    let cands = simulate_candidates(unlabeled, model, settings)?;
    Ok(candidate_recall(
        &cands,
        &ground_truth_map(unlabeled),
        settings.match_iou,
    ))
}

/// Runs one model through aggregation, thresholding and filtering and
/// scores the result. A run that yields no pseudo-label is reported as such.
pub fn evaluate_model(
    n_labeled: usize,
    unlabeled: &[SceneImage],
    model: &DetectorModel,
    settings: &LoopSettings,
) -> Result<StageMetrics, Error> {
    let gt = ground_truth_map(unlabeled);
    let cands = simulate_candidates(unlabeled, model, settings)?;
    let run = match pseudo_label(&cands, &settings.params) {
        Ok(run) => Some(run),
        Err(Error::Threshold(ThresholdError::AllEmptyHistogram { .. } | ThresholdError::EmptyCandidatePool)) => None,
        Err(e) => return Err(e),
    };
    let empty: Vec<PseudoImage> = Vec::new();
    let pseudo = run.as_ref().map_or(&empty, |r| &r.pseudo);
    let mut per_class: BTreeMap<u32, usize> = BTreeMap::new();
    for l in pseudo.iter().flat_map(|p| &p.labels) {
        *per_class.entry(l.detection.class_id).or_default() += 1;
    }
    let (uniform_tau, class_tau) = match &run {
        Some(r) => (r.thresholds.uniform_tau(), class_taus(&r.thresholds, &cands)),
        None => (None, BTreeMap::new()),
    };
    let quality = pseudo_quality(pseudo, &gt, settings.match_iou);
    Ok(StageMetrics {
        uniform_tau,
        class_tau,
        n_candidates: cands.values().map(Vec::len).sum(),
        n_candidate_images: cands.len(),
        candidate_recall: candidate_recall(&cands, &gt, settings.match_iou),
        merged_images: n_labeled + quality.n_images,
        pseudo: quality,
        pseudo_labels_per_class: per_class,
    })
}

fn class_taus(ts: &ThresholdSet, cands: &ImageDetections) -> BTreeMap<u32, Option<f64>> {
    let mut classes: Vec<u32> = flatten(cands).iter().map(|d| d.class_id).collect();
    classes.sort_unstable();
    classes.dedup();
    let mut class_wise = ts.clone();
    class_wise.mode = crate::thresholding::ThresholdMode::ClassWise;
    classes
        .into_iter()
        .map(|c| {
            let tau = match class_wise.tau_for(c) {
                ClassTau::Tau(t) => Some(t),
                _ => None,
            };
            (c, tau)
        })
        .collect()
}

/// Teacher, student and refined-student metrics of one iteration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationReport {
    pub iteration: usize,
    pub teacher: StageMetrics,
    pub student: StageMetrics,
    pub refined: StageMetrics,
}

/// Iterates teacher → pseudo-labels → student → refined student → new
/// teacher, `iterations` times.
pub fn run_iteration_loop(
    n_labeled: usize,
    unlabeled: &[SceneImage],
    initial: &DetectorModel,
    improvement: &ImprovementModel,
    iterations: usize,
    settings: &LoopSettings,
) -> Result<Vec<IterationReport>, Error> {
    if iterations == 0 {
        return Err(config_err("at least one iteration is required"));
    }
    improvement.validate()?;
    let mut teacher = initial.clone();
    let mut teacher_metrics = evaluate_model(n_labeled, unlabeled, &teacher, settings)?;
    let mut reports = Vec::with_capacity(iterations);
    for iteration in 1..=iterations {
        let student = improvement.student(&teacher, teacher_metrics.pseudo.f1);
        let student_metrics = evaluate_model(n_labeled, unlabeled, &student, settings)?;
        let refined = improvement.refine(&student);
        let refined_metrics = evaluate_model(n_labeled, unlabeled, &refined, settings)?;
        log::info!(
            "iteration {iteration}: teacher F1 {:.4}, student F1 {:.4}, refined F1 {:.4}",
            teacher_metrics.pseudo.f1,
            student_metrics.pseudo.f1,
            refined_metrics.pseudo.f1
        );
        reports.push(IterationReport {
            iteration,
            teacher: teacher_metrics,
            student: student_metrics,
            refined: refined_metrics.clone(),
        });
        teacher = refined;
        teacher_metrics = refined_metrics;
    }
    Ok(reports)
}

/// Pseudo-label quality at one threshold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub tau: Option<f64>,
    pub quality: PseudoQuality,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    /// The adaptive ground threshold (in the configured mode).
    pub ground: SweepPoint,
    /// Fixed uniform thresholds, as in a manual parameter search.
    pub fixed: Vec<SweepPoint>,
}

impl SweepReport {
    pub fn best_fixed(&self) -> Option<&SweepPoint> {
        self.fixed.iter().max_by(|a, b| a.quality.f1.total_cmp(&b.quality.f1))
    }
}

/// Compares the ground threshold with fixed thresholds on the same
/// candidates.
pub fn threshold_sweep(
    unlabeled: &[SceneImage],
    model: &DetectorModel,
    settings: &LoopSettings,
    taus: &[f64],
) -> Result<SweepReport, Error> {
    let gt = ground_truth_map(unlabeled);
    let cands = simulate_candidates(unlabeled, model, settings)?;
    let ground = match pseudo_label(&cands, &settings.params) {
        Ok(run) => SweepPoint {
            tau: run.thresholds.uniform_tau(),
            quality: pseudo_quality(&run.pseudo, &gt, settings.match_iou),
        },
        Err(Error::Threshold(_)) => SweepPoint {
            tau: None,
            quality: pseudo_quality(&[], &gt, settings.match_iou),
        },
        Err(e) => return Err(e),
    };
    let fixed = taus
        .iter()
        .map(|&t| {
            let run = pseudo_label_with(&cands, ThresholdSet::fixed(t), settings.params.weighting)?;
            Ok(SweepPoint {
                tau: Some(t),
                quality: pseudo_quality(&run.pseudo, &gt, settings.match_iou),
            })
        })
        .collect::<Result<_, Error>>()?;
    Ok(SweepReport { ground, fixed })
}
