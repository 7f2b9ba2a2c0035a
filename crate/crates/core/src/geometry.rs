//! Box representations and the overlap measures used across the pipeline.
//!
//! All coordinates are fractions of the image extent. Pixel boxes are
//! normalized once at ingestion via [`CornerBox::from_pixels`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("non-finite box coordinate")]
    NonFinite,
    #[error("degenerate box: width {w} and height {h} must both be positive")]
    Degenerate { w: f64, h: f64 },
    #[error("image size must be positive, got {width}x{height}")]
    ImageSize { width: f64, height: f64 },
}

/// A center-size box `(cx, cy, w, h)` in normalized coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
}

impl BoundingBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        if ![cx, cy, w, h].iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(GeometryError::Degenerate { w, h });
        }
        Ok(Self { cx, cy, w, h })
    }

    #[inline]
    pub fn cx(&self) -> f64 {
        self.cx
    }

    #[inline]
    pub fn cy(&self) -> f64 {
        self.cy
    }

    #[inline]
    pub fn w(&self) -> f64 {
        self.w
    }

    #[inline]
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }

    pub fn to_corner(&self) -> CornerBox {
        let (hw, hh) = (self.w / 2.0, self.h / 2.0);
        CornerBox {
            x1: self.cx - hw,
            y1: self.cy - hh,
            x2: self.cx + hw,
            y2: self.cy + hh,
        }
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = GeometryError;

    fn try_from(v: [f64; 4]) -> Result<Self, Self::Error> {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        b.to_array()
    }
}

/// A corner box `(x1, y1, x2, y2)` with `x1 < x2` and `y1 < y2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct CornerBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl CornerBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, GeometryError> {
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        if x2 <= x1 || y2 <= y1 {
            return Err(GeometryError::Degenerate {
                w: x2 - x1,
                h: y2 - y1,
            });
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    /// Normalizes a pixel-space corner box by the image size.
    pub fn from_pixels(
        x1: f64,
        y1: f64,
        x2: f64,
        y2: f64,
        width: f64,
        height: f64,
    ) -> Result<Self, GeometryError> {
        if !(width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite()) {
            return Err(GeometryError::ImageSize { width, height });
        }
        Self::new(x1 / width, y1 / height, x2 / width, y2 / height)
    }

    #[inline]
    pub fn x1(&self) -> f64 {
        self.x1
    }

    #[inline]
    pub fn y1(&self) -> f64 {
        self.y1
    }

    #[inline]
    pub fn x2(&self) -> f64 {
        self.x2
    }

    #[inline]
    pub fn y2(&self) -> f64 {
        self.y2
    }

    #[inline]
    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    #[inline]
    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    #[inline]
    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn to_center(&self) -> BoundingBox {
        BoundingBox {
            cx: (self.x1 + self.x2) / 2.0,
            cy: (self.y1 + self.y2) / 2.0,
            w: self.width(),
            h: self.height(),
        }
    }

    /// True if `other` lies inside `self` (boundary inclusive).
    pub fn contains(&self, other: &CornerBox) -> bool {
        self.x1 <= other.x1 && self.y1 <= other.y1 && self.x2 >= other.x2 && self.y2 >= other.y2
    }
}

impl TryFrom<[f64; 4]> for CornerBox {
    type Error = GeometryError;

    fn try_from(v: [f64; 4]) -> Result<Self, Self::Error> {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl From<CornerBox> for [f64; 4] {
    fn from(b: CornerBox) -> Self {
        b.to_array()
    }
}

fn intersection_area(a: &CornerBox, b: &CornerBox) -> f64 {
    let w = a.x2.min(b.x2) - a.x1.max(b.x1);
    let h = a.y2.min(b.y2) - a.y1.max(b.y1);
    if w <= 0.0 || h <= 0.0 {
        0.0
    } else {
        w * h
    }
}

/// Intersection over union. Degenerate boxes cannot be constructed, so the
/// union is always positive.
pub fn iou(a: &CornerBox, b: &CornerBox) -> f64 {
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Generalized IoU: `iou - (|C| - |A ∪ B|) / |C|` with `C` the enclosing box.
pub fn giou(a: &CornerBox, b: &CornerBox) -> f64 {
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    let hull = union_box(a, b).area();
    inter / union - (hull - union) / hull
}

/// Smallest axis-aligned box containing both inputs.
pub fn union_box(a: &CornerBox, b: &CornerBox) -> CornerBox {
    CornerBox {
        x1: a.x1.min(b.x1),
        y1: a.y1.min(b.y1),
        x2: a.x2.max(b.x2),
        y2: a.y2.max(b.y2),
    }
}

/// Strict overlap: the intersection has positive area. Boxes that only
/// share an edge do not overlap.
pub fn overlaps(a: &CornerBox, b: &CornerBox) -> bool {
    intersection_area(a, b) > 0.0
}
