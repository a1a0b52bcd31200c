use serde::{Deserialize, Serialize};

use crate::geometry::Pixel;

pub const BBOX_MARGIN_PX: f64 = 60.0;
/// Crops overlapping another individual's box by more than this fraction of their own area are excluded.
pub const CROP_OVERLAP_LIMIT: f64 = 0.30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn width(&self) -> f64 {
        (self.x_max - self.x_min).max(0.0)
    }

    pub fn height(&self) -> f64 {
        (self.y_max - self.y_min).max(0.0)
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn intersection(&self, other: &BBox) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        w.max(0.0) * h.max(0.0)
    }

    pub fn contains(&self, p: &Pixel) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }
}

/// Min/max over the visible keypoints grown by `margin` on every side and clipped to the
/// image. `None` when no keypoint is visible.
pub fn bounding_box(visible: &[Pixel], width: u32, height: u32, margin: f64) -> Option<BBox> {
    let first = visible.first()?;
    let (mut lo, mut hi) = (*first, *first);
    for p in visible {
        lo.x = lo.x.min(p.x);
        lo.y = lo.y.min(p.y);
        hi.x = hi.x.max(p.x);
        hi.y = hi.y.max(p.y);
    }
    let (w, h) = (width as f64, height as f64);
    Some(BBox {
        x_min: (lo.x - margin).clamp(0.0, w),
        y_min: (lo.y - margin).clamp(0.0, h),
        x_max: (hi.x + margin).clamp(0.0, w),
        y_max: (hi.y + margin).clamp(0.0, h),
    })
}

/// Largest fraction of `own`'s area covered by any one of `others`.
pub fn overlap_fraction(own: &BBox, others: &[BBox]) -> f64 {
    let area = own.area();
    if area <= 0.0 {
        return 0.0;
    }
    others.iter().map(|o| own.intersection(o) / area).fold(0.0, f64::max)
}

/// Include flags for the boxes of all individuals in one view.
pub fn filter_training_crops(boxes: &[BBox]) -> Vec<bool> {
    (0..boxes.len())
        .map(|i| {
            let others: Vec<BBox> = boxes
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, b)| *b)
                .collect();
            overlap_fraction(&boxes[i], &others) <= CROP_OVERLAP_LIMIT
        })
        .collect()
}
