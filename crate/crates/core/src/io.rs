//! Reading and writing of COCO-style datasets, detection files and
//! threshold reports.
//!
//! Output is canonical: keys are sorted, records are in a fixed order and
//! every float coordinate, score and weight is written with exactly six
//! decimals, so equal in-memory values always produce equal bytes. Boxes are
//! clipped to the image only when a dataset is saved.
//!
//! `score`, `alpha` and `source` on annotations are extension fields; COCO
//! readers that do not know them can ignore them.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::value::RawValue;
use thiserror::Error;

use crate::dataset::{Annotation, Category, Dataset, ImageId, ImageInfo, Source};
use crate::geometry::{BBox, ImageDims, View};
use crate::nms::{Detection, ImageViews, ViewPredictions};
use crate::thresholding::{
    BinThreshold, HistogramConfig, ScoreHistogram, ThresholdMode, ThresholdSet, ThresholdSource,
};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: parse error: {detail}")]
    Parse { path: PathBuf, detail: String },
    #[error("{path}: integrity error: {detail}")]
    Integrity { path: PathBuf, detail: String },
    #[error("{path}: record {record}: unknown view {tag:?}")]
    UnknownView { path: PathBuf, record: usize, tag: String },
}

impl IoError {
    fn parse(path: &Path, detail: impl Into<String>) -> Self {
        IoError::Parse {
            path: path.to_path_buf(),
            detail: detail.into(),
        }
    }

    fn integrity(path: &Path, detail: impl Into<String>) -> Self {
        IoError::Integrity {
            path: path.to_path_buf(),
            detail: detail.into(),
        }
    }
}

/// Float written with exactly six decimals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F6(pub f64);

pub fn format_f6(v: f64) -> String {
    let s = format!("{v:.6}");
    if s == "-0.000000" {
        "0.000000".to_string()
    } else {
        s
    }
}

/// Rounds to the value that survives a save/load cycle.
pub fn quantize(v: f64) -> f64 {
    format_f6(v).parse().unwrap_or(v)
}

impl Serialize for F6 {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if !self.0.is_finite() {
            return Err(serde::ser::Error::custom(format!("non-finite float {}", self.0)));
        }
        let raw = RawValue::from_string(format_f6(self.0)).map_err(serde::ser::Error::custom)?;
        raw.serialize(s)
    }
}

impl<'de> Deserialize<'de> for F6 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        f64::deserialize(d).map(F6)
    }
}

fn f6_box(b: &BBox) -> [F6; 4] {
    b.to_xywh().map(F6)
}

fn read(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse<T: DeserializeOwned>(path: &Path, text: &str) -> Result<T, IoError> {
    serde_json::from_str(text)
        .map_err(|e| IoError::parse(path, format!("line {} column {}: {e}", e.line(), e.column())))
}

/// Serializes `value` canonically (pretty, trailing newline).
pub fn to_canonical_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("in-memory documents serialize");
    s.push('\n');
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|source| IoError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, text).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    write_text(path, &to_canonical_json(value))
}

// ----- datasets -----

#[derive(Serialize, Deserialize)]
struct CocoFile {
    annotations: Vec<CocoAnnotation>,
    categories: Vec<CocoCategory>,
    images: Vec<CocoImage>,
}

#[derive(Serialize, Deserialize)]
struct CocoImage {
    file_name: String,
    height: u32,
    id: u64,
    width: u32,
}

#[derive(Serialize, Deserialize)]
struct CocoAnnotation {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha: Option<F6>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    area: Option<F6>,
    bbox: [F6; 4],
    category_id: u32,
    id: u64,
    image_id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    iscrowd: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    score: Option<F6>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct CocoCategory {
    id: u32,
    name: String,
}

/// Loads a COCO-style dataset and checks id uniqueness, referential
/// integrity and box validity.
pub fn load_dataset(path: &Path) -> Result<Dataset, IoError> {
    let file: CocoFile = parse(path, &read(path)?)?;
    dataset_from_wire(path, file)
}

fn dataset_from_wire(path: &Path, file: CocoFile) -> Result<Dataset, IoError> {
    let mut image_ids = BTreeSet::new();
    let mut images = Vec::with_capacity(file.images.len());
    for im in file.images {
        if !image_ids.insert(im.id) {
            return Err(IoError::integrity(path, format!("duplicate image id {}", im.id)));
        }
        if im.width == 0 || im.height == 0 {
            return Err(IoError::parse(path, format!("image {} has zero size", im.id)));
        }
        images.push(ImageInfo {
            id: im.id,
            width: im.width,
            height: im.height,
            file_name: im.file_name,
        });
    }
    let mut category_ids = BTreeSet::new();
    let mut categories = Vec::with_capacity(file.categories.len());
    for c in file.categories {
        if !category_ids.insert(c.id) {
            return Err(IoError::integrity(path, format!("duplicate category id {}", c.id)));
        }
        categories.push(Category { id: c.id, name: c.name });
    }
    let mut ann_ids = BTreeSet::new();
    let mut annotations = Vec::with_capacity(file.annotations.len());
    for (i, a) in file.annotations.into_iter().enumerate() {
        if !ann_ids.insert(a.id) {
            return Err(IoError::integrity(path, format!("duplicate annotation id {}", a.id)));
        }
        if !image_ids.contains(&a.image_id) {
            return Err(IoError::integrity(
                path,
                format!("annotation {} references missing image id {}", a.id, a.image_id),
            ));
        }
        if !category_ids.contains(&a.category_id) {
            return Err(IoError::integrity(
                path,
                format!("annotation {} references missing category id {}", a.id, a.category_id),
            ));
        }
        let [x, y, w, h] = a.bbox.map(|v| v.0);
        let bbox = BBox::from_xywh(x, y, w, h);
        if !bbox.is_valid() {
            return Err(IoError::parse(
                path,
                format!(
                    "annotation record {i} (id {}): degenerate bbox [{x}, {y}, {w}, {h}]",
                    a.id
                ),
            ));
        }
        let score = a.score.map(|s| s.0);
        if let Some(s) = score {
            if !(0.0..=1.0).contains(&s) {
                return Err(IoError::parse(
                    path,
                    format!("annotation record {i} (id {}): score {s} outside [0, 1]", a.id),
                ));
            }
        }
        let source = match a.source.as_deref() {
            None => None,
            Some(tag) => Some(Source::from_tag(tag).ok_or_else(|| {
                IoError::parse(
                    path,
                    format!("annotation record {i} (id {}): unknown source {tag:?}", a.id),
                )
            })?),
        };
        annotations.push(Annotation {
            id: a.id,
            image_id: a.image_id,
            category_id: a.category_id,
            bbox,
            score,
            alpha: a.alpha.map(|v| v.0),
            source,
        });
    }
    Ok(Dataset {
        images,
        annotations,
        categories,
    })
}

/// Canonical text of a dataset. Boxes are clipped to their image; boxes
/// left without area are dropped with a warning.
pub fn dataset_to_json(dataset: &Dataset) -> String {
    let mut ds = dataset.clone();
    ds.canonicalize();
    let dims: BTreeMap<ImageId, ImageDims> = ds.images.iter().map(|i| (i.id, i.dims())).collect();
    let mut annotations = Vec::with_capacity(ds.annotations.len());
    for a in &ds.annotations {
        let bbox = match dims.get(&a.image_id) {
            Some(&d) => match a.bbox.clip(d) {
                Some(c) => {
                    if c != a.bbox {
                        log::warn!(
                            "annotation {} clipped to image {} bounds ({}x{})",
                            a.id,
                            a.image_id,
                            d.width,
                            d.height
                        );
                    }
                    c
                }
                None => {
                    log::warn!("annotation {} lies outside image {} and is dropped", a.id, a.image_id);
                    continue;
                }
            },
            None => a.bbox,
        };
        annotations.push(CocoAnnotation {
            alpha: a.alpha.map(F6),
            area: Some(F6(bbox.area())),
            bbox: f6_box(&bbox),
            category_id: a.category_id,
            id: a.id,
            image_id: a.image_id,
            iscrowd: Some(0),
            score: a.score.map(F6),
            source: a.source.map(|s| s.tag().to_string()),
        });
    }
    let file = CocoFile {
        annotations,
        categories: ds
            .categories
            .iter()
            .map(|c| CocoCategory {
                id: c.id,
                name: c.name.clone(),
            })
            .collect(),
        images: ds
            .images
            .iter()
            .map(|i| CocoImage {
                file_name: i.file_name.clone(),
                height: i.height,
                id: i.id,
                width: i.width,
            })
            .collect(),
    };
    to_canonical_json(&file)
}

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<(), IoError> {
    write_text(path, &dataset_to_json(dataset))
}

/// Parses dataset text (mainly for tests and in-memory round trips).
pub fn dataset_from_json(text: &str) -> Result<Dataset, IoError> {
    let path = Path::new("<memory>");
    dataset_from_wire(path, parse(path, text)?)
}

// ----- detection files -----

#[derive(Serialize, Deserialize)]
struct DetectionRecord {
    bbox: [F6; 4],
    category_id: u32,
    image_id: u64,
    score: F6,
    view: String,
}

/// One record of a detection file, box in the frame of `view`.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewDetection {
    pub image_id: ImageId,
    pub view: View,
    pub detection: Detection,
}

pub fn detections_to_json(records: &[ViewDetection]) -> String {
    let mut sorted = records.to_vec();
    sorted.sort_by(|a, b| {
        a.image_id
            .cmp(&b.image_id)
            .then(a.view.rank().cmp(&b.view.rank()))
            .then(a.detection.canonical_cmp(&b.detection))
    });
    let wire: Vec<DetectionRecord> = sorted
        .iter()
        .map(|r| DetectionRecord {
            bbox: f6_box(&r.detection.bbox),
            category_id: r.detection.class_id,
            image_id: r.image_id,
            score: F6(r.detection.score),
            view: r.view.tag().to_string(),
        })
        .collect();
    to_canonical_json(&wire)
}

pub fn save_detections(records: &[ViewDetection], path: &Path) -> Result<(), IoError> {
    write_text(path, &detections_to_json(records))
}

/// Reads a detection file and groups it per image and view.
///
/// Every referenced image must exist in `images`. Images without any
/// detection are simply absent from the result, which is how unlabeled
/// images without predictions leave the candidate pool. Views not listed in
/// `keep_views` (compared by tag) are skipped.
pub fn load_detections(
    path: &Path,
    images: &Dataset,
    scale_factor: f64,
    keep_views: &[View],
) -> Result<BTreeMap<ImageId, ImageViews>, IoError> {
    let records: Vec<DetectionRecord> = parse(path, &read(path)?)?;
    let index = images.image_index();
    let mut grouped: BTreeMap<ImageId, BTreeMap<u8, ViewPredictions>> = BTreeMap::new();
    for (i, r) in records.into_iter().enumerate() {
        let view = View::from_tag(&r.view, scale_factor).ok_or_else(|| IoError::UnknownView {
            path: path.to_path_buf(),
            record: i,
            tag: r.view.clone(),
        })?;
        let score = r.score.0;
        if !(0.0..=1.0).contains(&score) {
            return Err(IoError::parse(
                path,
                format!("record {i} (image {}): score {score} outside [0, 1]", r.image_id),
            ));
        }
        let [x, y, w, h] = r.bbox.map(|v| v.0);
        let bbox = BBox::from_xywh(x, y, w, h);
        if !bbox.is_valid() {
            return Err(IoError::parse(
                path,
                format!(
                    "record {i} (image {}): degenerate bbox [{x}, {y}, {w}, {h}]",
                    r.image_id
                ),
            ));
        }
        if !index.contains_key(&r.image_id) {
            return Err(IoError::integrity(
                path,
                format!("record {i} references missing image id {}", r.image_id),
            ));
        }
        if !keep_views.iter().any(|v| v.tag() == view.tag()) {
            continue;
        }
        grouped
            .entry(r.image_id)
            .or_default()
            .entry(view.rank())
            .or_insert_with(|| ViewPredictions::new(view, Vec::new()))
            .detections
            .push(Detection::new(r.category_id, bbox, score));
    }
    Ok(grouped
        .into_iter()
        .map(|(id, views)| {
            (
                id,
                ImageViews {
                    dims: index[&id].dims(),
                    views: views.into_values().collect(),
                },
            )
        })
        .collect())
}

// ----- threshold reports -----

#[derive(Serialize, Deserialize)]
struct WireBin {
    bin: Option<usize>,
    counts: Vec<u64>,
    n_above: u64,
    n_below: u64,
    tau: Option<F6>,
}

#[derive(Serialize, Deserialize)]
struct ThresholdReport {
    config: HistogramConfig,
    empty_classes: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fixed_tau: Option<f64>,
    mode: ThresholdMode,
    per_class: BTreeMap<u32, WireBin>,
    uniform: Option<WireBin>,
}

fn bin_to_wire(b: &BinThreshold) -> WireBin {
    WireBin {
        bin: b.bin,
        counts: b.histogram.counts.clone(),
        n_above: b.histogram.n_above,
        n_below: b.histogram.n_below,
        tau: b.tau().map(F6),
    }
}

fn bin_from_wire(path: &Path, config: HistogramConfig, w: WireBin) -> Result<BinThreshold, IoError> {
    if w.counts.len() != config.n_bins {
        return Err(IoError::parse(
            path,
            format!("expected {} counts, found {}", config.n_bins, w.counts.len()),
        ));
    }
    if matches!(w.bin, Some(k) if k >= config.n_bins) {
        return Err(IoError::parse(path, "selected bin out of range"));
    }
    Ok(BinThreshold {
        histogram: ScoreHistogram {
            config,
            counts: w.counts,
            n_below: w.n_below,
            n_above: w.n_above,
        },
        bin: w.bin,
    })
}

/// Threshold report: mode, histogram config, the pooled and per-class
/// counts with their selected bin and threshold.
pub fn thresholds_to_json(ts: &ThresholdSet) -> String {
    let (uniform, per_class, fixed_tau) = match &ts.source {
        ThresholdSource::Ground { uniform, per_class } => (
            uniform.as_ref().map(bin_to_wire),
            per_class.iter().map(|(&c, b)| (c, bin_to_wire(b))).collect(),
            None,
        ),
        ThresholdSource::Fixed(t) => (None, BTreeMap::new(), Some(*t)),
    };
    to_canonical_json(&ThresholdReport {
        config: ts.config,
        empty_classes: ts.empty_classes(),
        fixed_tau,
        mode: ts.mode,
        per_class,
        uniform,
    })
}

pub fn save_thresholds(ts: &ThresholdSet, path: &Path) -> Result<(), IoError> {
    write_text(path, &thresholds_to_json(ts))
}

/// Loads a threshold report. Thresholds are recomputed from the selected
/// bin rather than read back from their rounded text.
pub fn load_thresholds(path: &Path) -> Result<ThresholdSet, IoError> {
    let report: ThresholdReport = parse(path, &read(path)?)?;
    let config = report.config;
    config.validate().map_err(|e| IoError::parse(path, e.to_string()))?;
    let source = match report.fixed_tau {
        Some(t) => ThresholdSource::Fixed(t),
        None => ThresholdSource::Ground {
            uniform: report.uniform.map(|w| bin_from_wire(path, config, w)).transpose()?,
            per_class: report
                .per_class
                .into_iter()
                .map(|(c, w)| bin_from_wire(path, config, w).map(|b| (c, b)))
                .collect::<Result<_, _>>()?,
        },
    };
    Ok(ThresholdSet {
        mode: report.mode,
        config,
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::thresholding::compute_thresholds;
    use proptest::prelude::*;
    use tempfile::tempdir;

    fn sample() -> Dataset {
        Dataset {
            images: vec![
                ImageInfo {
                    id: 2,
                    width: 100,
                    height: 50,
                    file_name: "b.jpg".into(),
                },
                ImageInfo {
                    id: 1,
                    width: 64,
                    height: 64,
                    file_name: "a.jpg".into(),
                },
            ],
            annotations: vec![
                Annotation {
                    id: 7,
                    image_id: 2,
                    category_id: 3,
                    bbox: BBox::new(10.0, 5.0, 30.5, 25.25),
                    score: Some(0.875),
                    alpha: Some(0.25),
                    source: Some(Source::Pseudo),
                },
                Annotation {
                    id: 1,
                    image_id: 1,
                    category_id: 3,
                    bbox: BBox::new(0.0, 0.0, 8.0, 8.0),
                    score: None,
                    alpha: None,
                    source: None,
                },
            ],
            categories: vec![Category {
                id: 3,
                name: "car".into(),
            }],
        }
    }

    #[test]
    fn save_load_round_trip_is_byte_stable() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("ds.json");
        save_dataset(&sample(), &p).unwrap();
        let first = fs::read_to_string(&p).unwrap();
        let loaded = load_dataset(&p).unwrap();
        let mut expected = sample();
        expected.canonicalize();
        assert_eq!(loaded, expected);
        save_dataset(&loaded, &p).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), first);
        assert!(first.contains("\"score\": 0.875000"));
        assert!(first.contains("\"alpha\": 0.250000"));
        assert!(first.contains("\"source\": \"pseudo\""));
    }

    #[test]
    fn missing_image_reference_is_integrity_error() {
        let mut ds = sample();
        ds.annotations[0].image_id = 99;
        let text = dataset_to_json(&ds);
        let err = dataset_from_json(&text).unwrap_err();
        assert!(
            matches!(&err, IoError::Integrity { detail, .. } if detail.contains("99")),
            "{err}"
        );
    }

    #[test]
    fn boxes_are_clipped_on_save() {
        let mut ds = sample();
        ds.annotations[0].bbox = BBox::new(80.0, -10.0, 130.0, 20.0);
        let loaded = dataset_from_json(&dataset_to_json(&ds)).unwrap();
        let a = loaded.annotations.iter().find(|a| a.id == 7).unwrap();
        assert_eq!(a.bbox, BBox::new(80.0, 0.0, 100.0, 20.0));
        // area recomputed from the clipped box: 20 x 20
        assert!(dataset_to_json(&ds).contains("\"area\": 400.000000"));

        ds.annotations[0].bbox = BBox::new(200.0, 0.0, 230.0, 20.0);
        let loaded = dataset_from_json(&dataset_to_json(&ds)).unwrap();
        assert_eq!(loaded.annotations.len(), 1);
    }

    #[test]
    fn parse_errors_carry_position() {
        let err = dataset_from_json("{\"images\": [\n  {\"id\": 1,, }]}").unwrap_err();
        assert!(
            matches!(&err, IoError::Parse { detail, .. } if detail.contains("line 2")),
            "{err}"
        );
    }

    #[test]
    fn unknown_fields_are_ignored() {
        let text = r#"{"images": [{"id": 1, "width": 10, "height": 10, "file_name": "x", "license": 3}],
            "annotations": [{"id": 1, "image_id": 1, "category_id": 1, "bbox": [1, 1, 2, 2],
                             "segmentation": [], "iscrowd": 0}],
            "categories": [{"id": 1, "name": "a", "supercategory": "b"}], "info": {}}"#;
        let ds = dataset_from_json(text).unwrap();
        assert_eq!(ds.annotations[0].bbox, BBox::new(1.0, 1.0, 3.0, 3.0));
    }

    fn det_file(dir: &Path, body: &str) -> PathBuf {
        let p = dir.join("dets.json");
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn detections_group_by_view() {
        let dir = tempdir().unwrap();
        let ds = sample();
        let p = det_file(
            dir.path(),
            r#"[{"image_id": 2, "category_id": 3, "bbox": [1, 1, 4, 4], "score": 0.9, "view": "identity"},
                {"image_id": 2, "category_id": 3, "bbox": [2, 2, 8, 8], "score": 0.8, "view": "scale"},
                {"image_id": 2, "category_id": 3, "bbox": [3, 1, 4, 4], "score": 0.7, "view": "identity"}]"#,
        );
        let got = load_detections(&p, &ds, 2.0, &View::all(2.0)).unwrap();
        // image 1 has no detections and is not a candidate
        assert_eq!(got.keys().copied().collect::<Vec<_>>(), vec![2]);
        let views = &got[&2].views;
        assert_eq!(views.len(), 2);
        assert_eq!(views[0].view, View::Identity);
        assert_eq!(views[0].detections.len(), 2);
        assert_eq!(views[1].view, View::Scale(2.0));

        let only_id = load_detections(&p, &ds, 2.0, &[View::Identity]).unwrap();
        assert_eq!(only_id[&2].views.len(), 1);
    }

    #[test]
    fn detection_validation() {
        let dir = tempdir().unwrap();
        let ds = sample();
        let p = det_file(
            dir.path(),
            r#"[{"image_id": 1, "category_id": 3, "bbox": [1, 1, 4, 4], "score": 0.5, "view": "identity"},
                {"image_id": 1, "category_id": 3, "bbox": [1, 1, 4, 4], "score": 1.3, "view": "identity"}]"#,
        );
        let err = load_detections(&p, &ds, 2.0, &View::all(2.0)).unwrap_err();
        assert!(
            matches!(&err, IoError::Parse { detail, .. } if detail.contains("record 1") && detail.contains("1.3")),
            "{err}"
        );

        let p = det_file(
            dir.path(),
            r#"[{"image_id": 1, "category_id": 3, "bbox": [1, 1, 4, 4], "score": 0.5, "view": "rot90"}]"#,
        );
        let err = load_detections(&p, &ds, 2.0, &View::all(2.0)).unwrap_err();
        assert!(matches!(err, IoError::UnknownView { record: 0, .. }));

        let p = det_file(
            dir.path(),
            r#"[{"image_id": 5, "category_id": 3, "bbox": [1, 1, 4, 4], "score": 0.5, "view": "hflip"}]"#,
        );
        let err = load_detections(&p, &ds, 2.0, &View::all(2.0)).unwrap_err();
        assert!(matches!(err, IoError::Integrity { .. }));
    }

    #[test]
    fn threshold_report_round_trip() {
        let cands: Vec<Detection> = [(0, 0.52), (0, 0.97), (1, 0.61), (1, 0.99), (2, 0.1)]
            .into_iter()
            .map(|(c, s)| Detection::new(c, BBox::new(0.0, 0.0, 1.0, 1.0), s))
            .collect();
        for mode in [ThresholdMode::Uniform, ThresholdMode::ClassWise] {
            let ts = compute_thresholds(&cands, HistogramConfig::default(), mode).unwrap();
            let dir = tempdir().unwrap();
            let p = dir.path().join("t.json");
            save_thresholds(&ts, &p).unwrap();
            assert_eq!(load_thresholds(&p).unwrap(), ts);
        }
        let fixed = ThresholdSet::fixed(0.7);
        let dir = tempdir().unwrap();
        let p = dir.path().join("t.json");
        save_thresholds(&fixed, &p).unwrap();
        assert_eq!(load_thresholds(&p).unwrap(), fixed);
    }

    fn arb_dataset() -> impl Strategy<Value = Dataset> {
        prop::collection::vec(
            (
                1u32..500,
                1u32..500,
                prop::collection::vec(
                    (
                        0.0f64..1.0,
                        0.0f64..1.0,
                        0.01f64..1.0,
                        0.01f64..1.0,
                        prop::option::of(0.0f64..=1.0),
                    ),
                    0..5,
                ),
            ),
            0..6,
        )
        .prop_map(|imgs| {
            let mut ds = Dataset {
                categories: vec![Category {
                    id: 1,
                    name: "c".into(),
                }],
                ..Dataset::default()
            };
            let mut next = 1;
            for (i, (w, h, anns)) in imgs.into_iter().enumerate() {
                let id = i as u64 + 1;
                ds.images.push(ImageInfo {
                    id,
                    width: w,
                    height: h,
                    file_name: format!("{id}.png"),
                });
                for (fx, fy, fw, fh, score) in anns {
                    let x = quantize(fx * (w as f64 - 1.0));
                    let y = quantize(fy * (h as f64 - 1.0));
                    let bw = quantize((fw * (w as f64 - x)).max(0.5));
                    let bh = quantize((fh * (h as f64 - y)).max(0.5));
                    ds.annotations.push(Annotation {
                        id: next,
                        image_id: id,
                        category_id: 1,
                        bbox: BBox::from_xywh(x, y, bw, bh),
                        score: score.map(quantize),
                        alpha: score.map(|s| quantize(s / 2.0)),
                        source: score.map(|_| Source::Pseudo),
                    });
                    next += 1;
                }
            }
            ds
        })
    }

    proptest! {
        #[test]
        fn save_is_a_fixed_point(ds in arb_dataset()) {
            let text = dataset_to_json(&ds);
            let loaded = dataset_from_json(&text).unwrap();
            prop_assert_eq!(dataset_to_json(&loaded), text);
        }
    }
}
