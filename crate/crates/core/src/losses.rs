//! Composite detection loss: BCE classification, CIoU box regression and
//! distribution focal loss, each with an analytic gradient.
//!
//! ```text
//! loss = l1 * L_cls + l2 * L_box + l3 * L_dfl
//! ```

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::tensor::softmax_slice;

/// Clamp and denominator stabilizer shared by all three losses.
pub const EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub cls: f64,
    #[serde(rename = "box")]
    pub bbox: f64,
    pub dfl: f64,
}

impl Default for LossWeights {
    /// Classification 3, box 4, DFL 1.5.
    fn default() -> Self {
        Self {
            cls: 3.0,
            bbox: 4.0,
            dfl: 1.5,
        }
    }
}

impl LossWeights {
    pub fn new(cls: f64, bbox: f64, dfl: f64) -> Result<Self> {
        let w = Self { cls, bbox, dfl };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if [self.cls, self.bbox, self.dfl].iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "loss weights must be finite and non-negative, got {self:?}"
            )));
        }
        Ok(())
    }
}

pub fn total_loss(l_cls: f64, l_box: f64, l_dfl: f64, w: &LossWeights) -> f64 {
    w.cls * l_cls + w.bbox * l_box + w.dfl * l_dfl
}

/// A scalar loss and its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Vec<f64>,
}

/// Mean binary cross-entropy. Probabilities are clamped to
/// `[EPS, 1 - EPS]`; the gradient is taken at the clamped point.
pub fn bce_loss(p: &[f64], y: &[f64]) -> Result<LossGrad> {
    if p.len() != y.len() {
        return Err(Error::LengthMismatch {
            expected: p.len(),
            actual: y.len(),
        });
    }
    if p.is_empty() {
        return Err(Error::InvalidParameter("BCE over an empty vector".into()));
    }
    if let Some(v) = p.iter().chain(y).find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::OutOfRange(format!(
            "probabilities and labels must lie in [0, 1], got {v}"
        )));
    }
    let n = p.len() as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(p.len());
    for (&pi, &yi) in p.iter().zip(y) {
        let q = pi.clamp(EPS, 1.0 - EPS);
        value -= yi * q.ln() + (1.0 - yi) * (1.0 - q).ln();
        grad.push((q - yi) / (q * (1.0 - q)) / n);
    }
    Ok(LossGrad {
        value: value / n,
        grad,
    })
}

/// CIoU terms for one prediction/target pair.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxLoss {
    /// `1 - CIoU`
    pub value: f64,
    pub iou: f64,
    pub ciou: f64,
    /// Aspect-ratio discrepancy `(4 / pi^2) (atan(w_gt/h_gt) - atan(w/h))^2`.
    pub alpha: f64,
    /// Gradient with respect to the prediction's `(cx, cy, w, h)`.
    pub grad: [f64; 4],
}

/// Gradient pieces of an overlap extent along one axis.
struct Overlap {
    len: f64,
    d_lo: f64,
    d_hi: f64,
}

fn overlap(lo: f64, hi: f64, glo: f64, ghi: f64) -> Overlap {
    let len = hi.min(ghi) - lo.max(glo);
    if len <= 0.0 {
        return Overlap { len: 0.0, d_lo: 0.0, d_hi: 0.0 };
    }
    Overlap {
        len,
        d_lo: if lo > glo { -1.0 } else { 0.0 },
        d_hi: if hi < ghi { 1.0 } else { 0.0 },
    }
}

fn enclosing(lo: f64, hi: f64, glo: f64, ghi: f64) -> Overlap {
    Overlap {
        len: hi.max(ghi) - lo.min(glo),
        d_lo: if lo < glo { -1.0 } else { 0.0 },
        d_hi: if hi > ghi { 1.0 } else { 0.0 },
    }
}

/// `L_box = 1 - (IoU - d^2/c^2 - alpha^2 / (1 - IoU + alpha))`.
///
/// `d` is the center distance, `c` the diagonal of the smallest enclosing
/// box. Union, `c^2` and the aspect-term denominator are floored at `EPS`;
/// the aspect term is 0 whenever `alpha` is 0, so identical boxes give 0.
pub fn ciou_box_loss(pred: &BBox, gt: &BBox) -> Result<BoxLoss> {
    pred.validate()?;
    gt.validate()?;
    let (p, g) = (pred.corners(), gt.corners());

    // Corner derivatives w.r.t. (center, extent): lo = c - e/2, hi = c + e/2.
    let ox = overlap(p.x1, p.x2, g.x1, g.x2);
    let oy = overlap(p.y1, p.y2, g.y1, g.y2);
    let inter = ox.len * oy.len;
    let d_inter = [
        oy.len * (ox.d_lo + ox.d_hi),
        ox.len * (oy.d_lo + oy.d_hi),
        oy.len * (ox.d_hi - ox.d_lo) / 2.0,
        ox.len * (oy.d_hi - oy.d_lo) / 2.0,
    ];
    let raw_union = pred.area() + gt.area() - inter;
    let union = raw_union.max(EPS);
    let d_area = [0.0, 0.0, pred.h, pred.w];
    let d_union: Vec<f64> = if raw_union > EPS {
        d_area.iter().zip(&d_inter).map(|(a, i)| a - i).collect()
    } else {
        vec![0.0; 4]
    };
    let iou = inter / union;
    let d_iou: Vec<f64> = (0..4)
        .map(|k| (d_inter[k] * union - inter * d_union[k]) / (union * union))
        .collect();

    let ex = enclosing(p.x1, p.x2, g.x1, g.x2);
    let ey = enclosing(p.y1, p.y2, g.y1, g.y2);
    let raw_c2 = ex.len * ex.len + ey.len * ey.len;
    let c2 = raw_c2.max(EPS);
    let live = if raw_c2 > EPS { 1.0 } else { 0.0 };
    let d_c2 = [
        2.0 * ex.len * (ex.d_lo + ex.d_hi),
        2.0 * ey.len * (ey.d_lo + ey.d_hi),
        2.0 * ex.len * (ex.d_hi - ex.d_lo) / 2.0,
        2.0 * ey.len * (ey.d_hi - ey.d_lo) / 2.0,
    ]
    .map(|g| g * live);
    let (dx, dy) = (pred.cx - gt.cx, pred.cy - gt.cy);
    let d2 = dx * dx + dy * dy;
    let d_d2 = [2.0 * dx, 2.0 * dy, 0.0, 0.0];
    let center = d2 / c2;
    let d_center: Vec<f64> = (0..4)
        .map(|k| (d_d2[k] * c2 - d2 * d_c2[k]) / (c2 * c2))
        .collect();

    let k = 4.0 / (PI * PI);
    let gap = (gt.w / gt.h).atan() - (pred.w / pred.h).atan();
    let alpha = k * gap * gap;
    let hyp = pred.w * pred.w + pred.h * pred.h;
    let d_alpha = [
        0.0,
        0.0,
        -2.0 * k * gap * pred.h / hyp,
        2.0 * k * gap * pred.w / hyp,
    ];
    let raw_denom = 1.0 - iou + alpha;
    let denom = raw_denom.max(EPS);
    let aspect = if alpha == 0.0 { 0.0 } else { alpha * alpha / denom };
    let d_aspect: Vec<f64> = (0..4)
        .map(|j| {
            let d_denom = if raw_denom > EPS { d_alpha[j] - d_iou[j] } else { 0.0 };
            (2.0 * alpha * d_alpha[j] * denom - alpha * alpha * d_denom) / (denom * denom)
        })
        .collect();

    let ciou = iou - center - aspect;
    let mut grad = [0.0; 4];
    for j in 0..4 {
        grad[j] = -d_iou[j] + d_center[j] + d_aspect[j];
    }
    Ok(BoxLoss {
        value: 1.0 - ciou,
        iou,
        ciou,
        alpha,
        grad,
    })
}

/// Discrete bin positions with a predicted probability per bin.
#[derive(Debug, Clone, PartialEq)]
pub struct DflBins {
    positions: Vec<f64>,
    probs: Vec<f64>,
}

impl DflBins {
    pub fn new(positions: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if positions.len() < 2 {
            return Err(Error::InvalidParameter("DFL needs at least two bins".into()));
        }
        if positions.len() != probs.len() {
            return Err(Error::LengthMismatch {
                expected: positions.len(),
                actual: probs.len(),
            });
        }
        if positions.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter(
                "bin positions must be strictly increasing".into(),
            ));
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::OutOfRange("bin probabilities must lie in [0, 1]".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "bin probabilities must sum to 1, got {total}"
            )));
        }
        Ok(Self { positions, probs })
    }

    /// Softmax of `logits` over the given positions.
    pub fn from_logits(positions: Vec<f64>, logits: &[f64]) -> Result<Self> {
        let mut probs = logits.to_vec();
        softmax_slice(&mut probs);
        Self::new(positions, probs)
    }

    /// Unit-spaced positions `0, 1, ..., count - 1`.
    pub fn unit_positions(count: usize) -> Vec<f64> {
        (0..count).map(|i| i as f64).collect()
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Index `n` with `y_n <= y <= y_{n+1}` and the interpolation weights
    /// `(w_n, w_{n+1})` of `y`.
    pub fn bracket(&self, y: f64) -> Result<(usize, f64, f64)> {
        let pos = &self.positions;
        let (first, last) = (pos[0], pos[pos.len() - 1]);
        if !(y >= first && y <= last) {
            return Err(Error::OutOfRange(format!(
                "target {y} outside bin range [{first}, {last}]"
            )));
        }
        let n = pos.partition_point(|&p| p <= y).saturating_sub(1).min(pos.len() - 2);
        let width = pos[n + 1] - pos[n];
        let upper = (y - pos[n]) / width;
        Ok((n, 1.0 - upper, upper))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DflLoss {
    pub value: f64,
    /// Index of the lower bracketing bin.
    pub lower: usize,
    /// Gradient w.r.t. the bin probabilities; non-zero only at the two
    /// bracketing bins.
    pub grad_probs: Vec<f64>,
    /// Gradient w.r.t. the logits the probabilities were softmaxed from.
    pub grad_logits: Vec<f64>,
}

/// `-(w_n ln S_n + w_{n+1} ln S_{n+1})` with linear interpolation weights
/// `w_n = (y_{n+1} - y) / (y_{n+1} - y_n)`, `w_{n+1} = 1 - w_n` and
/// predicted probabilities clamped at `EPS`.
pub fn dfl_loss(bins: &DflBins, target: f64) -> Result<DflLoss> {
    let (n, w_lo, w_hi) = bins.bracket(target)?;
    let s = bins.probs();
    let (s_lo, s_hi) = (s[n].max(EPS), s[n + 1].max(EPS));
    let value = -(w_lo * s_lo.ln() + w_hi * s_hi.ln());

    let mut grad_probs = vec![0.0; s.len()];
    if s[n] >= EPS {
        grad_probs[n] = -w_lo / s_lo;
    }
    if s[n + 1] >= EPS {
        grad_probs[n + 1] = -w_hi / s_hi;
    }
    // Back through the softmax Jacobian: dz_k = S_k (g_k - sum_t g_t S_t).
    let dot: f64 = grad_probs.iter().zip(s).map(|(g, p)| g * p).sum();
    let grad_logits = grad_probs.iter().zip(s).map(|(g, p)| p * (g - dot)).collect();
    Ok(DflLoss {
        value,
        lower: n,
        grad_probs,
        grad_logits,
    })
}

pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradRow {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// `|a - n| / max(1, |a|, |n|)`
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub max_rel_error: f64,
    pub rows: Vec<GradRow>,
}

/// Compare an analytic gradient with central differences of `f`.
pub fn check_gradient<F>(f: F, x: &[f64], analytic: &[f64], step: f64) -> Result<GradReport>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if !(step > 0.0) {
        return Err(Error::InvalidParameter(format!("step must be positive, got {step}")));
    }
    if x.len() != analytic.len() {
        return Err(Error::LengthMismatch {
            expected: x.len(),
            actual: analytic.len(),
        });
    }
    let mut probe = x.to_vec();
    let mut rows = Vec::with_capacity(x.len());
    for (i, &a) in analytic.iter().enumerate() {
        probe[i] = x[i] + step;
        let up = f(&probe)?;
        probe[i] = x[i] - step;
        let down = f(&probe)?;
        probe[i] = x[i];
        let numeric = (up - down) / (2.0 * step);
        let rel_error = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
        rows.push(GradRow {
            index: i,
            analytic: a,
            numeric,
            rel_error,
        });
    }
    let max_rel_error = rows.iter().map(|r| r.rel_error).fold(0.0, f64::max);
    Ok(GradReport { max_rel_error, rows })
}

/// A loss evaluated at a concrete point.
#[derive(Debug, Clone, PartialEq)]
pub enum GradTarget {
    /// Differentiated w.r.t. `p`.
    Bce { p: Vec<f64>, y: Vec<f64> },
    /// Differentiated w.r.t. the prediction's `(cx, cy, w, h)`.
    Ciou { pred: BBox, gt: BBox },
    /// Differentiated w.r.t. the bin logits.
    Dfl {
        positions: Vec<f64>,
        logits: Vec<f64>,
        target: f64,
    },
}

pub fn grad_check(target: &GradTarget, step: f64) -> Result<GradReport> {
    match target {
        GradTarget::Bce { p, y } => {
            let analytic = bce_loss(p, y)?.grad;
            check_gradient(|q| Ok(bce_loss(q, y)?.value), p, &analytic, step)
        }
        GradTarget::Ciou { pred, gt } => {
            let analytic = ciou_box_loss(pred, gt)?.grad;
            let x = [pred.cx, pred.cy, pred.w, pred.h];
            check_gradient(
                |v| Ok(ciou_box_loss(&BBox::new(v[0], v[1], v[2], v[3])?, gt)?.value),
                &x,
                &analytic,
                step,
            )
        }
        GradTarget::Dfl {
            positions,
            logits,
            target,
        } => {
            let bins = DflBins::from_logits(positions.clone(), logits)?;
            let analytic = dfl_loss(&bins, *target)?.grad_logits;
            check_gradient(
                |z| Ok(dfl_loss(&DflBins::from_logits(positions.clone(), z)?, *target)?.value),
                logits,
                &analytic,
                step,
            )
        }
    }
}
