use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in center format.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

/// `(x1, y1, x2, y2)` corners.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corners {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        let b = Self { cx, cy, w, h };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.cx, self.cy, self.w, self.h].iter().all(|v| v.is_finite());
        if !finite || self.w <= 0.0 || self.h <= 0.0 {
            return Err(Error::InvalidBox(format!(
                "(cx={}, cy={}, w={}, h={}) needs finite values and positive extents",
                self.cx, self.cy, self.w, self.h
            )));
        }
        Ok(())
    }

    pub fn corners(&self) -> Corners {
        Corners {
            x1: self.cx - self.w / 2.0,
            y1: self.cy - self.h / 2.0,
            x2: self.cx + self.w / 2.0,
            y2: self.cy + self.h / 2.0,
        }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// The same box with the x and y axes exchanged.
    pub fn swap_axes(&self) -> Self {
        Self {
            cx: self.cy,
            cy: self.cx,
            w: self.h,
            h: self.w,
        }
    }
}

pub fn intersection(a: &BBox, b: &BBox) -> f64 {
    let (p, q) = (a.corners(), b.corners());
    let iw = (p.x2.min(q.x2) - p.x1.max(q.x1)).max(0.0);
    let ih = (p.y2.min(q.y2) - p.y1.max(q.y1)).max(0.0);
    iw * ih
}

/// Plain intersection over union, no stabilizer.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = intersection(a, b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}
