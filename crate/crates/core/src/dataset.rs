//! In-memory COCO-style dataset.

use std::collections::{BTreeMap, BTreeSet};

use crate::geometry::{BBox, ImageDims};
use crate::nms::Detection;

pub type ImageId = u64;
pub type AnnotationId = u64;

#[derive(Debug, Clone, PartialEq)]
pub struct ImageInfo {
    pub id: ImageId,
    pub width: u32,
    pub height: u32,
    pub file_name: String,
}

impl ImageInfo {
    pub fn dims(&self) -> ImageDims {
        ImageDims::new(self.width as f64, self.height as f64)
    }
}

/// Origin of an annotation in a merged training set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Source {
    GroundTruth,
    Pseudo,
}

impl Source {
    pub fn tag(&self) -> &'static str {
        match self {
            Source::GroundTruth => "gt",
            Source::Pseudo => "pseudo",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "gt" => Some(Source::GroundTruth),
            "pseudo" => Some(Source::Pseudo),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub id: AnnotationId,
    pub image_id: ImageId,
    pub category_id: u32,
    pub bbox: BBox,
    pub score: Option<f64>,
    /// Loss weight; ground truth carries 1.
    pub alpha: Option<f64>,
    pub source: Option<Source>,
}

impl Annotation {
    /// Reads the annotation as a detection; annotations without a score
    /// count as certain.
    pub fn as_detection(&self) -> Detection {
        Detection::new(self.category_id, self.bbox, self.score.unwrap_or(1.0))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Category {
    pub id: u32,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub images: Vec<ImageInfo>,
    pub annotations: Vec<Annotation>,
    pub categories: Vec<Category>,
}

impl Dataset {
    /// Sorts images, categories and annotations into the order used on disk.
    pub fn canonicalize(&mut self) {
        self.images.sort_by_key(|i| i.id);
        self.categories.sort_by_key(|c| c.id);
        self.annotations
            .sort_by(|a, b| a.image_id.cmp(&b.image_id).then(a.id.cmp(&b.id)));
    }

    pub fn image_ids(&self) -> BTreeSet<ImageId> {
        self.images.iter().map(|i| i.id).collect()
    }

    pub fn image(&self, id: ImageId) -> Option<&ImageInfo> {
        self.images.iter().find(|i| i.id == id)
    }

    pub fn image_index(&self) -> BTreeMap<ImageId, &ImageInfo> {
        self.images.iter().map(|i| (i.id, i)).collect()
    }

    pub fn max_annotation_id(&self) -> AnnotationId {
        self.annotations.iter().map(|a| a.id).max().unwrap_or(0)
    }

    /// Annotations grouped by image, as detections. Every image of the
    /// dataset has an entry, possibly empty.
    pub fn detections_by_image(&self) -> BTreeMap<ImageId, Vec<Detection>> {
        let mut out: BTreeMap<ImageId, Vec<Detection>> = self.images.iter().map(|i| (i.id, Vec::new())).collect();
        for a in &self.annotations {
            out.entry(a.image_id).or_default().push(a.as_detection());
        }
        out
    }

    /// Restricts the dataset to the given images.
    pub fn subset(&self, ids: &BTreeSet<ImageId>) -> Dataset {
        Dataset {
            images: self.images.iter().filter(|i| ids.contains(&i.id)).cloned().collect(),
            annotations: self
                .annotations
                .iter()
                .filter(|a| ids.contains(&a.image_id))
                .cloned()
                .collect(),
            categories: self.categories.clone(),
        }
    }
}
