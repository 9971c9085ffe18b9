//! Greedy non-maximum suppression and multi-view candidate aggregation.

use std::cmp::Ordering;

use crate::geometry::{invert_view, BBox, ImageDims, View};

/// Default IoU at or above which a lower-scored box is suppressed.
pub const DEFAULT_NMS_IOU: f64 = 0.5;

/// One detector output: class, box and confidence in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub class_id: u32,
    pub bbox: BBox,
    pub score: f64,
}

impl Detection {
    pub const fn new(class_id: u32, bbox: BBox, score: f64) -> Self {
        Self { class_id, bbox, score }
    }

    /// Canonical order: class ascending, score descending, then box
    /// coordinates lexicographically.
    pub fn canonical_cmp(&self, other: &Detection) -> Ordering {
        self.class_id
            .cmp(&other.class_id)
            .then(other.score.total_cmp(&self.score))
            .then(self.bbox.lex_cmp(&other.bbox))
    }
}

/// Detections of one image under one view, in that view's frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewPredictions {
    pub view: View,
    pub detections: Vec<Detection>,
}

impl ViewPredictions {
    pub fn new(view: View, detections: Vec<Detection>) -> Self {
        Self { view, detections }
    }
}

/// Every view's predictions for one image, with the original image size.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageViews {
    pub dims: ImageDims,
    pub views: Vec<ViewPredictions>,
}

/// Which detections may suppress each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Suppression {
    /// Only detections of the same class.
    #[default]
    ClassWise,
    /// Any pair, regardless of class.
    CrossClass,
}

/// Class-wise greedy NMS. See [`nms_with`].
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    nms_with(dets, iou_threshold, Suppression::ClassWise)
}

/// Greedy NMS: visit detections by descending score and keep one iff its
/// IoU with every already-kept competitor is below `iou_threshold`.
///
/// The output is in canonical order (see [`Detection::canonical_cmp`]) so it
/// does not depend on the input order. Kept detections are copied
/// unchanged.
pub fn nms_with(dets: &[Detection], iou_threshold: f64, mode: Suppression) -> Vec<Detection> {
    let mut sorted = dets.to_vec();
    match mode {
        Suppression::ClassWise => {
            sorted.sort_by(Detection::canonical_cmp);
            let mut kept = Vec::with_capacity(sorted.len());
            let mut start = 0;
            while start < sorted.len() {
                let class = sorted[start].class_id;
                let end = start + sorted[start..].iter().take_while(|d| d.class_id == class).count();
                greedy(&sorted[start..end], iou_threshold, &mut kept);
                start = end;
            }
            kept
        }
        Suppression::CrossClass => {
            sorted.sort_by(|a, b| {
                b.score
                    .total_cmp(&a.score)
                    .then(a.bbox.lex_cmp(&b.bbox))
                    .then(a.class_id.cmp(&b.class_id))
            });
            let mut kept = Vec::with_capacity(sorted.len());
            greedy(&sorted, iou_threshold, &mut kept);
            kept.sort_by(Detection::canonical_cmp);
            kept
        }
    }
}

/// `group` must already be in priority order.
fn greedy(group: &[Detection], iou_threshold: f64, out: &mut Vec<Detection>) {
    let first = out.len();
    for det in group {
        let suppressed = out[first..].iter().any(|k| k.bbox.iou(&det.bbox) >= iou_threshold);
        if !suppressed {
            out.push(*det);
        }
    }
}

/// Merges the predictions of several views of one image.
///
/// Each view's detections are mapped back to the original frame and
/// suppressed on their own, then all survivors are pooled and suppressed
/// once more. Overlapping detections from different views resolve to the
/// highest-scoring one; boxes are selected, never averaged.
pub fn aggregate_views(per_view: &[ViewPredictions], dims: ImageDims, iou_threshold: f64) -> Vec<Detection> {
    aggregate_views_with(per_view, dims, iou_threshold, Suppression::ClassWise)
}

pub fn aggregate_views_with(
    per_view: &[ViewPredictions],
    dims: ImageDims,
    iou_threshold: f64,
    mode: Suppression,
) -> Vec<Detection> {
    let mut pooled = Vec::new();
    for vp in per_view {
        let original: Vec<Detection> = vp
            .detections
            .iter()
            .map(|d| Detection::new(d.class_id, invert_view(&d.bbox, vp.view, dims), d.score))
            .collect();
        pooled.extend(nms_with(&original, iou_threshold, mode));
    }
    if per_view.len() == 1 {
        return pooled;
    }
    nms_with(&pooled, iou_threshold, mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::apply_view;
    use proptest::prelude::*;

    fn det(class_id: u32, x: f64, y: f64, w: f64, h: f64, score: f64) -> Detection {
        Detection::new(class_id, BBox::from_xywh(x, y, w, h), score)
    }

    /// Independent IoU written from interval overlaps.
    fn oracle_iou(a: &BBox, b: &BBox) -> f64 {
        let ox = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
        let oy = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
        let i = ox * oy;
        i / ((a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - i)
    }

    /// Enumerates every subset and returns the unique one that satisfies the
    /// greedy fixed point: a detection is kept iff no higher-priority kept
    /// detection of the same class overlaps it at or above the threshold.
    pub(crate) fn brute_force_nms(dets: &[Detection], t: f64) -> Vec<Detection> {
        let mut order = dets.to_vec();
        order.sort_by(|a, b| {
            a.class_id
                .cmp(&b.class_id)
                .then(b.score.partial_cmp(&a.score).unwrap())
                .then(a.bbox.x1.partial_cmp(&b.bbox.x1).unwrap())
                .then(a.bbox.y1.partial_cmp(&b.bbox.y1).unwrap())
                .then(a.bbox.x2.partial_cmp(&b.bbox.x2).unwrap())
                .then(a.bbox.y2.partial_cmp(&b.bbox.y2).unwrap())
        });
        let n = order.len();
        let mut found = Vec::new();
        for mask in 0u32..(1 << n) {
            let kept = |i: usize| mask & (1 << i) != 0;
            let consistent = (0..n).all(|i| {
                let blocked = (0..i).any(|j| {
                    kept(j) && order[j].class_id == order[i].class_id && oracle_iou(&order[j].bbox, &order[i].bbox) >= t
                });
                kept(i) == !blocked
            });
            if consistent {
                found.push(mask);
            }
        }
        assert_eq!(found.len(), 1, "greedy fixed point must be unique");
        (0..n).filter(|i| found[0] & (1 << i) != 0).map(|i| order[i]).collect()
    }

    #[test]
    fn empty_and_single() {
        assert!(nms(&[], 0.5).is_empty());
        let d = det(1, 0.0, 0.0, 10.0, 10.0, 0.3);
        assert_eq!(nms(&[d], 0.5), vec![d]);
    }

    #[test]
    fn identical_boxes_keep_highest() {
        let a = det(1, 0.0, 0.0, 10.0, 10.0, 0.9);
        let b = det(1, 0.0, 0.0, 10.0, 10.0, 0.8);
        assert_eq!(nms(&[b, a], 0.5), vec![a]);
    }

    #[test]
    fn classes_do_not_suppress_each_other() {
        let a = det(1, 0.0, 0.0, 10.0, 10.0, 0.9);
        let b = det(2, 0.0, 0.0, 10.0, 10.0, 0.8);
        assert_eq!(nms(&[a, b], 0.5), vec![a, b]);
        assert_eq!(nms_with(&[a, b], 0.5, Suppression::CrossClass), vec![a]);
    }

    #[test]
    fn threshold_is_inclusive() {
        // IoU exactly 0.5: 10x10 and 10x5 sharing the top half
        let a = det(0, 0.0, 0.0, 10.0, 10.0, 0.9);
        let b = det(0, 0.0, 0.0, 10.0, 5.0, 0.8);
        assert_eq!(iou_of(&a, &b), 0.5);
        assert_eq!(nms(&[a, b], 0.5), vec![a]);
        assert_eq!(nms(&[a, b], 0.51).len(), 2);
    }

    fn iou_of(a: &Detection, b: &Detection) -> f64 {
        a.bbox.iou(&b.bbox)
    }

    #[test]
    fn equal_scores_break_ties_by_coordinates() {
        let a = det(0, 1.0, 0.0, 10.0, 10.0, 0.7);
        let b = det(0, 0.0, 0.0, 10.0, 10.0, 0.7);
        assert_eq!(nms(&[a, b], 0.5), vec![b]);
        assert_eq!(nms(&[b, a], 0.5), vec![b]);
    }

    #[test]
    fn single_identity_view_equals_nms() {
        let dims = ImageDims::new(100.0, 100.0);
        let dets = vec![
            det(0, 10.0, 10.0, 20.0, 20.0, 0.9),
            det(0, 12.0, 11.0, 20.0, 20.0, 0.6),
            det(1, 50.0, 50.0, 10.0, 10.0, 0.4),
        ];
        let vp = ViewPredictions::new(View::Identity, dets.clone());
        assert_eq!(aggregate_views(&[vp], dims, 0.5), nms(&dets, 0.5));
    }

    #[test]
    fn same_object_in_all_views_keeps_max_score() {
        let dims = ImageDims::new(200.0, 100.0);
        let object = BBox::new(20.0, 30.0, 60.0, 70.0);
        let per_view: Vec<ViewPredictions> = View::all(2.0)
            .into_iter()
            .zip([0.6, 0.7, 0.8, 0.9])
            .map(|(v, s)| ViewPredictions::new(v, vec![Detection::new(3, apply_view(&object, v, dims), s)]))
            .collect();
        let merged = aggregate_views(&per_view, dims, 0.5);

        let pooled: Vec<Detection> = per_view
            .iter()
            .map(|vp| {
                let d = vp.detections[0];
                Detection::new(3, invert_view(&d.bbox, vp.view, dims), d.score)
            })
            .collect();
        let oracle = brute_force_nms(&pooled, 0.5);
        assert_eq!(merged.len(), 1);
        assert_eq!(merged[0].score, 0.9);
        assert_eq!(merged, oracle);
    }

    #[test]
    fn object_seen_only_in_scaled_view_survives() {
        let dims = ImageDims::new(200.0, 100.0);
        let big = BBox::new(20.0, 20.0, 80.0, 80.0);
        let small = BBox::new(150.0, 10.0, 156.0, 16.0);
        let views = vec![
            ViewPredictions::new(View::Identity, vec![Detection::new(0, big, 0.9)]),
            ViewPredictions::new(
                View::Scale(2.0),
                vec![
                    Detection::new(0, apply_view(&big, View::Scale(2.0), dims), 0.85),
                    Detection::new(0, apply_view(&small, View::Scale(2.0), dims), 0.75),
                ],
            ),
        ];
        let merged = aggregate_views(&views, dims, 0.5);
        assert_eq!(merged.len(), 2);
        assert!(merged.iter().any(|d| d.score == 0.75 && d.bbox.iou(&small) > 0.999));
    }

    #[test]
    fn empty_views_give_empty_output() {
        let dims = ImageDims::new(10.0, 10.0);
        let views = vec![
            ViewPredictions::new(View::Identity, vec![]),
            ViewPredictions::new(View::HFlip, vec![]),
        ];
        assert!(aggregate_views(&views, dims, 0.5).is_empty());
        assert!(aggregate_views(&[], dims, 0.5).is_empty());
    }

    fn arb_dets(max: usize) -> impl Strategy<Value = Vec<Detection>> {
        prop::collection::vec(
            (
                0u32..3,
                0.0f64..40.0,
                0.0f64..40.0,
                1.0f64..30.0,
                1.0f64..30.0,
                0u32..=20,
            ),
            0..=max,
        )
        .prop_map(|v| {
            v.into_iter()
                // coarse scores so ties actually occur
                .map(|(c, x, y, w, h, s)| det(c, x, y, w, h, s as f64 / 20.0))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn matches_brute_force(dets in arb_dets(10), t in 0.1f64..0.9) {
            prop_assert_eq!(nms(&dets, t), brute_force_nms(&dets, t));
        }

        #[test]
        fn idempotent_subset_and_order_free(mut dets in arb_dets(25), t in 0.1f64..0.9) {
            let once = nms(&dets, t);
            prop_assert_eq!(nms(&once, t), once.clone());
            for k in &once {
                prop_assert!(dets.contains(k));
            }
            dets.reverse();
            prop_assert_eq!(nms(&dets, t), once);
        }
    }
}
