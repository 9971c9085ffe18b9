//! Axis-aligned boxes, IoU and the invertible view transforms used for
//! multi-view inference.
//!
//! Boxes use continuous corner coordinates `(x1, y1, x2, y2)`. There is no
//! `+1` pixel inclusivity and horizontal flips reflect about the original
//! image width `W`, so `x ↦ W − x`. COCO `(x, y, w, h)` only appears at the
//! IO boundary.

use std::fmt;

/// Default upscale factor of the scaled views.
pub const DEFAULT_SCALE_FACTOR: f64 = 2.0;

/// Axis-aligned box in corner form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub const fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    /// Builds a box from COCO `(x, y, w, h)`.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self::new(x, y, x + w, y + h)
    }

    pub fn to_xywh(&self) -> [f64; 4] {
        [self.x1, self.y1, self.width(), self.height()]
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Finite coordinates and strictly positive extent on both axes.
    pub fn is_valid(&self) -> bool {
        [self.x1, self.y1, self.x2, self.y2].iter().all(|v| v.is_finite()) && self.x1 < self.x2 && self.y1 < self.y2
    }

    /// Clamps the box to `[0, width] × [0, height]`. Returns `None` when
    /// nothing of positive area is left.
    pub fn clip(&self, dims: ImageDims) -> Option<BBox> {
        let clipped = BBox::new(
            self.x1.clamp(0.0, dims.width),
            self.y1.clamp(0.0, dims.height),
            self.x2.clamp(0.0, dims.width),
            self.y2.clamp(0.0, dims.height),
        );
        clipped.is_valid().then_some(clipped)
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        iou(self, other)
    }

    /// Lexicographic `(x1, y1, x2, y2)` ordering, used as the last tie-break
    /// everywhere a deterministic order is required.
    pub fn lex_cmp(&self, other: &BBox) -> std::cmp::Ordering {
        self.x1
            .total_cmp(&other.x1)
            .then(self.y1.total_cmp(&other.y1))
            .then(self.x2.total_cmp(&other.x2))
            .then(self.y2.total_cmp(&other.y2))
    }
}

/// Intersection over union of two valid boxes, in `[0, 1]`.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).min(1.0)
}

/// Original image size in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageDims {
    pub width: f64,
    pub height: f64,
}

impl ImageDims {
    pub const fn new(width: f64, height: f64) -> Self {
        Self { width, height }
    }

    pub fn is_valid(&self) -> bool {
        self.width.is_finite() && self.height.is_finite() && self.width > 0.0 && self.height > 0.0
    }
}

/// Inference view: the transform applied to the original image before it
/// is handed to the detector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum View {
    Identity,
    HFlip,
    Scale(f64),
    /// Flip first, then scale.
    HFlipScale(f64),
}

impl View {
    /// The four views in canonical order, using `factor` for the scaled ones.
    pub fn all(factor: f64) -> [View; 4] {
        [
            View::Identity,
            View::HFlip,
            View::Scale(factor),
            View::HFlipScale(factor),
        ]
    }

    /// Wire tag used in detection files.
    pub fn tag(&self) -> &'static str {
        match self {
            View::Identity => "identity",
            View::HFlip => "hflip",
            View::Scale(_) => "scale",
            View::HFlipScale(_) => "hflip_scale",
        }
    }

    /// Parses a wire tag; scaled views take `factor`.
    pub fn from_tag(tag: &str, factor: f64) -> Option<View> {
        match tag {
            "identity" => Some(View::Identity),
            "hflip" => Some(View::HFlip),
            "scale" => Some(View::Scale(factor)),
            "hflip_scale" => Some(View::HFlipScale(factor)),
            _ => None,
        }
    }

    /// Position in the canonical view order.
    pub fn rank(&self) -> u8 {
        match self {
            View::Identity => 0,
            View::HFlip => 1,
            View::Scale(_) => 2,
            View::HFlipScale(_) => 3,
        }
    }

    pub fn is_flipped(&self) -> bool {
        matches!(self, View::HFlip | View::HFlipScale(_))
    }

    pub fn scale_factor(&self) -> f64 {
        match self {
            View::Identity | View::HFlip => 1.0,
            View::Scale(f) | View::HFlipScale(f) => *f,
        }
    }

    /// Dimensions of the transformed image.
    pub fn view_dims(&self, dims: ImageDims) -> ImageDims {
        let f = self.scale_factor();
        ImageDims::new(dims.width * f, dims.height * f)
    }
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            View::Scale(s) | View::HFlipScale(s) => write!(f, "{}(x{s})", self.tag()),
            _ => f.write_str(self.tag()),
        }
    }
}

fn hflip(b: &BBox, width: f64) -> BBox {
    BBox::new(width - b.x2, b.y1, width - b.x1, b.y2)
}

fn scale(b: &BBox, f: f64) -> BBox {
    BBox::new(b.x1 * f, b.y1 * f, b.x2 * f, b.y2 * f)
}

/// Maps a box from the original frame into the frame of `view`.
/// `dims` are always the original image dimensions.
pub fn apply_view(b: &BBox, view: View, dims: ImageDims) -> BBox {
    match view {
        View::Identity => *b,
        View::HFlip => hflip(b, dims.width),
        View::Scale(f) => scale(b, f),
        View::HFlipScale(f) => scale(&hflip(b, dims.width), f),
    }
}

/// Maps a box predicted in the frame of `view` back to the original frame.
pub fn invert_view(b: &BBox, view: View, dims: ImageDims) -> BBox {
    match view {
        View::Identity => *b,
        View::HFlip => hflip(b, dims.width),
        View::Scale(f) => scale(b, 1.0 / f),
        View::HFlipScale(f) => hflip(&scale(b, 1.0 / f), dims.width),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const DIMS: ImageDims = ImageDims::new(100.0, 80.0);

    /// Counts cells of a fine integer grid whose centers fall in each box.
    fn raster_iou(a: &BBox, b: &BBox, cells_per_px: usize) -> f64 {
        let n = cells_per_px as f64;
        let (mut inter, mut uni) = (0u64, 0u64);
        let lo = a.x1.min(b.x1).min(a.y1).min(b.y1);
        let hi = a.x2.max(b.x2).max(a.y2).max(b.y2);
        let steps = ((hi - lo) * n) as usize;
        for i in 0..steps {
            for j in 0..steps {
                let x = lo + (i as f64 + 0.5) / n;
                let y = lo + (j as f64 + 0.5) / n;
                let ina = x > a.x1 && x < a.x2 && y > a.y1 && y < a.y2;
                let inb = x > b.x1 && x < b.x2 && y > b.y1 && y < b.y2;
                inter += (ina && inb) as u64;
                uni += (ina || inb) as u64;
            }
        }
        inter as f64 / uni as f64
    }

    #[test]
    fn iou_identical_and_disjoint() {
        let b = BBox::new(3.0, 4.0, 10.0, 12.0);
        assert_eq!(iou(&b, &b), 1.0);
        let far = BBox::new(20.0, 20.0, 30.0, 30.0);
        assert_eq!(iou(&b, &far), 0.0);
        // touching edges share no area
        let touching = BBox::new(10.0, 4.0, 12.0, 12.0);
        assert_eq!(iou(&b, &touching), 0.0);
    }

    #[test]
    fn iou_matches_raster_oracle() {
        let a = BBox::new(0.0, 0.0, 2.0, 2.0);
        let b = BBox::new(1.0, 1.0, 3.0, 3.0);
        let oracle = raster_iou(&a, &b, 64);
        assert!((oracle - 1.0 / 7.0).abs() < 1e-12);
        assert!((iou(&a, &b) - oracle).abs() < 1e-12);
    }

    #[test]
    fn view_examples() {
        let b = BBox::new(10.0, 10.0, 30.0, 30.0);
        assert_eq!(apply_view(&b, View::Identity, DIMS), b);
        assert_eq!(apply_view(&b, View::HFlip, DIMS), BBox::new(70.0, 10.0, 90.0, 30.0));
        assert_eq!(
            apply_view(&b, View::Scale(2.0), DIMS),
            BBox::new(20.0, 20.0, 60.0, 60.0)
        );
        assert_eq!(
            apply_view(&b, View::HFlipScale(2.0), DIMS),
            BBox::new(140.0, 20.0, 180.0, 60.0)
        );
        assert_eq!(invert_view(&BBox::new(70.0, 10.0, 90.0, 30.0), View::HFlip, DIMS), b);
        assert_eq!(
            invert_view(&BBox::new(20.0, 20.0, 60.0, 60.0), View::Scale(2.0), DIMS),
            b
        );
    }

    #[test]
    fn tags_round_trip() {
        for v in View::all(2.0) {
            assert_eq!(View::from_tag(v.tag(), 2.0), Some(v));
        }
        assert_eq!(View::from_tag("rotate", 2.0), None);
    }

    #[test]
    fn clip_to_image() {
        let b = BBox::new(-5.0, 10.0, 50.0, 90.0);
        assert_eq!(b.clip(DIMS), Some(BBox::new(0.0, 10.0, 50.0, 80.0)));
        assert_eq!(BBox::new(120.0, 0.0, 130.0, 5.0).clip(DIMS), None);
    }

    fn arb_dims() -> impl Strategy<Value = ImageDims> {
        (1.0f64..4000.0, 1.0f64..4000.0).prop_map(|(w, h)| ImageDims::new(w, h))
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0.0f64..2000.0, 0.0f64..2000.0, 0.01f64..500.0, 0.01f64..500.0)
            .prop_map(|(x, y, w, h)| BBox::from_xywh(x, y, w, h))
    }

    fn arb_view() -> impl Strategy<Value = View> {
        (0u8..4, 0.1f64..8.0).prop_map(|(k, f)| match k {
            0 => View::Identity,
            1 => View::HFlip,
            2 => View::Scale(f),
            _ => View::HFlipScale(f),
        })
    }

    proptest! {
        #[test]
        fn round_trip(b in arb_box(), v in arb_view(), d in arb_dims()) {
            let back = invert_view(&apply_view(&b, v, d), v, d);
            prop_assert!((back.x1 - b.x1).abs() < 1e-9);
            prop_assert!((back.y1 - b.y1).abs() < 1e-9);
            prop_assert!((back.x2 - b.x2).abs() < 1e-9);
            prop_assert!((back.y2 - b.y2).abs() < 1e-9);
            prop_assert!(apply_view(&b, v, d).is_valid());
        }

        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = iou(&a, &b);
            prop_assert_eq!(ab, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            if a != b {
                prop_assert!(ab < 1.0);
            }
        }

        #[test]
        fn iou_view_invariant(a in arb_box(), b in arb_box(), d in arb_dims(), f in 0.1f64..8.0) {
            let base = iou(&a, &b);
            let flipped = iou(&apply_view(&a, View::HFlip, d), &apply_view(&b, View::HFlip, d));
            prop_assert!((flipped - base).abs() < 1e-9);
            let scaled = iou(&apply_view(&a, View::Scale(f), d), &apply_view(&b, View::Scale(f), d));
            prop_assert!((scaled - base).abs() < 1e-9);
        }
    }
}
