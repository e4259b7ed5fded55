//! Axis-aligned boxes and the three-way spatial predicate used for spatial edges.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Containment fraction at or above which two boxes are `InsideOutside`.
pub const DEFAULT_INSIDE_THRESHOLD: f64 = 0.8;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("box has non-positive size ({w} x {h})")]
    Degenerate { w: f64, h: f64 },
    #[error("frame dimensions must be positive, got {w} x {h}")]
    BadFrame { w: f64, h: f64 },
    #[error("box [{x}, {y}, {w}, {h}] lies outside a {frame_w} x {frame_h} frame")]
    OutsideFrame {
        x: f64,
        y: f64,
        w: f64,
        h: f64,
        frame_w: f64,
        frame_h: f64,
    },
}

/// Axis-aligned box in pixels: top-left corner plus width and height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    /// Checked constructor; width and height must be strictly positive and finite.
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        let b = BBox { x, y, w, h };
        if b.is_valid() {
            Ok(b)
        } else {
            Err(GeometryError::Degenerate { w, h })
        }
    }

    pub fn is_valid(&self) -> bool {
        self.x.is_finite()
            && self.y.is_finite()
            && self.w.is_finite()
            && self.h.is_finite()
            && self.w > 0.0
            && self.h > 0.0
    }

    pub fn x2(&self) -> f64 {
        self.x + self.w
    }

    pub fn y2(&self) -> f64 {
        self.y + self.h
    }

    /// Computed from the corner coordinates so that it agrees bit-for-bit
    /// with [`BBox::intersection_area`] of a box with itself.
    pub fn area(&self) -> f64 {
        (self.x2() - self.x) * (self.y2() - self.y)
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn within(&self, frame_w: f64, frame_h: f64) -> bool {
        self.x >= 0.0 && self.y >= 0.0 && self.x2() <= frame_w && self.y2() <= frame_h
    }

    /// Area of the overlap with `other`; zero when the boxes only touch or are disjoint.
    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let iw = (self.x2().min(other.x2()) - self.x.max(other.x)).max(0.0);
        let ih = (self.y2().min(other.y2()) - self.y.max(other.y)).max(0.0);
        iw * ih
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }
}

/// The three symmetric relation classes between two boxes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SpatialRelation {
    LeftRight,
    AboveBelow,
    InsideOutside,
}

impl SpatialRelation {
    pub const ALL: [SpatialRelation; 3] = [
        SpatialRelation::LeftRight,
        SpatialRelation::AboveBelow,
        SpatialRelation::InsideOutside,
    ];

    pub fn index(self) -> usize {
        match self {
            SpatialRelation::LeftRight => 0,
            SpatialRelation::AboveBelow => 1,
            SpatialRelation::InsideOutside => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            SpatialRelation::LeftRight => "left-right",
            SpatialRelation::AboveBelow => "above-below",
            SpatialRelation::InsideOutside => "inside-outside",
        }
    }
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Smallest box containing both inputs.
pub fn union_box(a: &BBox, b: &BBox) -> BBox {
    let x = a.x.min(b.x);
    let y = a.y.min(b.y);
    BBox {
        x,
        y,
        w: a.x2().max(b.x2()) - x,
        h: a.y2().max(b.y2()) - y,
    }
}

/// Fraction of `a`'s area that lies inside `b`.
pub fn containment_fraction(a: &BBox, b: &BBox) -> f64 {
    (a.intersection_area(b) / a.area()).clamp(0.0, 1.0)
}

/// Containment wins over the center-delta rule; `|dx| == |dy|` resolves to `LeftRight`.
pub fn spatial_relation(a: &BBox, b: &BBox, inside_threshold: f64) -> SpatialRelation {
    if containment_fraction(a, b) >= inside_threshold
        || containment_fraction(b, a) >= inside_threshold
    {
        return SpatialRelation::InsideOutside;
    }
    let (acx, acy) = a.center();
    let (bcx, bcy) = b.center();
    if (acx - bcx).abs() >= (acy - bcy).abs() {
        SpatialRelation::LeftRight
    } else {
        SpatialRelation::AboveBelow
    }
}

/// `(cx / W, cy / H, w / W, h / H)` for a box that lies within the frame.
pub fn normalize_box(b: &BBox, frame_w: f64, frame_h: f64) -> Result<[f64; 4], GeometryError> {
    if !(frame_w > 0.0 && frame_h > 0.0) {
        return Err(GeometryError::BadFrame {
            w: frame_w,
            h: frame_h,
        });
    }
    if !b.within(frame_w, frame_h) {
        return Err(GeometryError::OutsideFrame {
            x: b.x,
            y: b.y,
            w: b.w,
            h: b.h,
            frame_w,
            frame_h,
        });
    }
    let (cx, cy) = b.center();
    Ok([cx / frame_w, cy / frame_h, b.w / frame_w, b.h / frame_h])
}
