//! Detection evaluation: greedy one-to-one matching, precision/recall/F1,
//! all-point interpolated AP and class-mean mAP.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::bbox::{iou, BBox};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image: String,
    pub class: usize,
    #[serde(flatten)]
    pub bbox: BBox,
    pub conf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub image: String,
    pub class: usize,
    #[serde(flatten)]
    pub bbox: BBox,
}

impl Detection {
    pub fn validate(&self) -> Result<()> {
        self.bbox.validate()?;
        if !(0.0..=1.0).contains(&self.conf) {
            return Err(Error::OutOfRange(format!(
                "confidence {} outside [0, 1]",
                self.conf
            )));
        }
        Ok(())
    }
}

/// Descending confidence; equal confidences keep input order.
fn by_confidence(dets: &[Detection], a: usize, b: usize) -> Ordering {
    dets[b].conf.total_cmp(&dets[a].conf).then(a.cmp(&b))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// TP flag per detection, in input order.
    pub tp: Vec<bool>,
    /// Matched ground-truth index per detection.
    pub assigned: Vec<Option<usize>>,
    /// Detection indices in processing order.
    pub order: Vec<usize>,
    pub false_negatives: usize,
}

/// Greedy matching of one image/class group. Image and class ids are not
/// inspected; callers group beforehand.
pub fn match_detections(dets: &[Detection], gts: &[GroundTruth], iou_thresh: f64) -> MatchResult {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| by_confidence(dets, a, b));
    let mut taken = vec![false; gts.len()];
    let mut tp = vec![false; dets.len()];
    let mut assigned = vec![None; dets.len()];
    for &d in &order {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let v = iou(&dets[d].bbox, &gt.bbox);
            if best.map_or(true, |(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        if let Some((g, v)) = best {
            if v >= iou_thresh {
                taken[g] = true;
                tp[d] = true;
                assigned[d] = Some(g);
            }
        }
    }
    MatchResult {
        tp,
        assigned,
        order,
        false_negatives: taken.iter().filter(|t| !**t).count(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApResult {
    /// `None` when there is no ground truth.
    pub ap: Option<f64>,
    /// One point per detection; empty when `n_gt == 0`.
    pub curve: Vec<PrPoint>,
}

/// All-point interpolated AP over a confidence-sorted TP/FP sequence.
///
/// Recall rises by `1/n_gt` at each TP; the envelope there is the best
/// precision at any later cut.
pub fn average_precision(flags: &[bool], n_gt: usize) -> ApResult {
    if n_gt == 0 {
        return ApResult { ap: None, curve: Vec::new() };
    }
    let n = n_gt as f64;
    let mut curve = Vec::with_capacity(flags.len());
    let mut tp = 0usize;
    for (k, &hit) in flags.iter().enumerate() {
        tp += usize::from(hit);
        curve.push(PrPoint {
            recall: tp as f64 / n,
            precision: tp as f64 / (k + 1) as f64,
        });
    }
    let mut envelope = vec![0.0; flags.len()];
    let mut best = 0.0f64;
    for k in (0..flags.len()).rev() {
        best = best.max(curve[k].precision);
        envelope[k] = best;
    }
    let ap = flags
        .iter()
        .zip(&envelope)
        .filter(|(hit, _)| **hit)
        .fold(0.0, |acc, (_, e)| acc + e / n);
    ApResult { ap: Some(ap), curve }
}

/// `0.50, 0.55, ..., 0.95`
pub fn default_sweep() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub classes: usize,
    /// Threshold for the single-threshold AP, the PR curve and P/R/F1.
    pub iou: f64,
    /// Thresholds averaged into the swept AP.
    pub sweep: Vec<f64>,
}

impl EvalOptions {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            iou: 0.5,
            sweep: default_sweep(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.classes == 0 {
            return Err(Error::InvalidParameter("class count must be positive".into()));
        }
        if self.sweep.is_empty() {
            return Err(Error::InvalidParameter("IoU sweep is empty".into()));
        }
        for &t in std::iter::once(&self.iou).chain(&self.sweep) {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::OutOfRange(format!("IoU threshold {t} outside (0, 1)")));
            }
        }
        Ok(())
    }
}

/// Precision, recall and F1 at one confidence cut.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    /// Detections with confidence at or above this are kept; `None` keeps
    /// nothing.
    pub confidence: Option<f64>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

pub fn f1_score(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Best-F1 cut over distinct confidences. `confs` and `flags` are in
/// processing order. Ties go to the higher confidence.
pub fn max_f1_point(confs: &[f64], flags: &[bool], n_gt: usize) -> OperatingPoint {
    let point = |k: usize, tp: usize| {
        let precision = if k == 0 { 0.0 } else { tp as f64 / k as f64 };
        let recall = if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 };
        OperatingPoint {
            confidence: if k == 0 { None } else { Some(confs[k - 1]) },
            precision,
            recall,
            f1: f1_score(precision, recall),
            tp,
            fp: k - tp,
            fn_: n_gt - tp,
        }
    };
    let mut best = point(0, 0);
    let mut tp = 0;
    for k in 0..flags.len() {
        tp += usize::from(flags[k]);
        if k + 1 < flags.len() && confs[k + 1] == confs[k] {
            continue;
        }
        let cand = point(k + 1, tp);
        if cand.f1 > best.f1 {
            best = cand;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: usize,
    pub n_gt: usize,
    pub n_det: usize,
    pub ap: Option<f64>,
    pub ap_sweep: Option<f64>,
    /// AP at each sweep threshold, in sweep order.
    pub ap_by_threshold: Vec<Option<f64>>,
    pub point: OperatingPoint,
    pub curve: Vec<PrPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub iou: f64,
    pub sweep: Vec<f64>,
    pub map: Option<f64>,
    pub map_sweep: Option<f64>,
    /// Max-F1 point of the curve merged over all classes.
    pub point: OperatingPoint,
    /// Classes without ground truth, left out of the means.
    pub excluded: Vec<usize>,
    pub per_class: Vec<ClassReport>,
    pub curve: Vec<PrPoint>,
}

/// Per-class input indices, with ground truth grouped by image.
struct ClassData<'a> {
    dets: Vec<usize>,
    gts_by_image: HashMap<&'a str, Vec<usize>>,
    n_gt: usize,
}

/// TP flag per detection of one class (indexed like `cd.dets`).
fn class_flags(dets: &[Detection], gts: &[GroundTruth], cd: &ClassData, t: f64) -> Vec<bool> {
    let mut by_image: HashMap<&str, Vec<usize>> = HashMap::new();
    for (slot, &d) in cd.dets.iter().enumerate() {
        by_image.entry(dets[d].image.as_str()).or_default().push(slot);
    }
    let mut flags = vec![false; cd.dets.len()];
    for (image, slots) in by_image {
        let Some(gt_idx) = cd.gts_by_image.get(image) else {
            continue;
        };
        let group_dets: Vec<Detection> = slots.iter().map(|&s| dets[cd.dets[s]].clone()).collect();
        let group_gts: Vec<GroundTruth> = gt_idx.iter().map(|&g| gts[g].clone()).collect();
        let m = match_detections(&group_dets, &group_gts, t);
        for (i, &s) in slots.iter().enumerate() {
            flags[s] = m.tp[i];
        }
    }
    flags
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

struct ClassEval {
    report: ClassReport,
    /// `(detection index, TP)` at the reporting threshold.
    flags: Vec<(usize, bool)>,
}

fn eval_class(
    class: usize,
    dets: &[Detection],
    gts: &[GroundTruth],
    cd: &ClassData,
    opts: &EvalOptions,
) -> ClassEval {
    let ordered = |flags: &[bool]| -> Vec<bool> {
        let mut slots: Vec<usize> = (0..cd.dets.len()).collect();
        slots.sort_by(|&a, &b| by_confidence(dets, cd.dets[a], cd.dets[b]));
        slots.iter().map(|&s| flags[s]).collect()
    };
    let main = class_flags(dets, gts, cd, opts.iou);
    let seq = ordered(&main);
    let main_ap = average_precision(&seq, cd.n_gt);
    let ap_by_threshold: Vec<Option<f64>> = opts
        .sweep
        .iter()
        .map(|&t| average_precision(&ordered(&class_flags(dets, gts, cd, t)), cd.n_gt).ap)
        .collect();
    let ap_sweep = if cd.n_gt == 0 {
        None
    } else {
        mean(ap_by_threshold.iter().flatten().copied())
    };

    let mut sorted = cd.dets.clone();
    sorted.sort_by(|&a, &b| by_confidence(dets, a, b));
    let confs: Vec<f64> = sorted.iter().map(|&d| dets[d].conf).collect();
    let slot_of: HashMap<usize, usize> = cd.dets.iter().enumerate().map(|(s, &d)| (d, s)).collect();
    ClassEval {
        report: ClassReport {
            class,
            n_gt: cd.n_gt,
            n_det: cd.dets.len(),
            ap: main_ap.ap,
            ap_sweep,
            ap_by_threshold,
            point: max_f1_point(&confs, &seq, cd.n_gt),
            curve: main_ap.curve,
        },
        flags: sorted.iter().map(|&d| (d, main[slot_of[&d]])).collect(),
    }
}

/// Per-class matching and AP at `opts.iou` and every sweep threshold,
/// class means over classes that have ground truth, and the max-F1 point of
/// the merged curve.
pub fn evaluate(dets: &[Detection], gts: &[GroundTruth], opts: &EvalOptions) -> Result<EvalReport> {
    opts.validate()?;
    for d in dets {
        d.validate()?;
    }
    for g in gts {
        g.bbox.validate()?;
    }
    let classes = opts.classes;
    if let Some(c) = dets
        .iter()
        .map(|d| d.class)
        .chain(gts.iter().map(|g| g.class))
        .find(|&c| c >= classes)
    {
        return Err(Error::OutOfRange(format!(
            "class id {c} not below class count {classes}"
        )));
    }

    let mut data: Vec<ClassData> = (0..classes)
        .map(|_| ClassData {
            dets: Vec::new(),
            gts_by_image: HashMap::new(),
            n_gt: 0,
        })
        .collect();
    for (i, d) in dets.iter().enumerate() {
        data[d.class].dets.push(i);
    }
    for (i, g) in gts.iter().enumerate() {
        let cd = &mut data[g.class];
        cd.gts_by_image.entry(g.image.as_str()).or_default().push(i);
        cd.n_gt += 1;
    }

    let run = |(class, cd): (usize, &ClassData)| eval_class(class, dets, gts, cd, opts);
    #[cfg(feature = "parallel")]
    let evals: Vec<ClassEval> = {
        use rayon::prelude::*;
        data.par_iter().enumerate().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let evals: Vec<ClassEval> = data.iter().enumerate().map(run).collect();

    let excluded: Vec<usize> = evals
        .iter()
        .filter(|e| e.report.n_gt == 0)
        .map(|e| e.report.class)
        .collect();
    let map = mean(evals.iter().filter_map(|e| e.report.ap));
    let map_sweep = mean(evals.iter().filter_map(|e| e.report.ap_sweep));

    let mut merged: Vec<(usize, bool)> = evals.iter().flat_map(|e| e.flags.iter().copied()).collect();
    merged.sort_by(|a, b| by_confidence(dets, a.0, b.0));
    let flags: Vec<bool> = merged.iter().map(|m| m.1).collect();
    let confs: Vec<f64> = merged.iter().map(|m| dets[m.0].conf).collect();
    let n_gt = gts.len();
    let point = max_f1_point(&confs, &flags, n_gt);
    let curve = average_precision(&flags, n_gt).curve;

    Ok(EvalReport {
        iou: opts.iou,
        sweep: opts.sweep.clone(),
        map,
        map_sweep,
        point,
        excluded,
        per_class: evals.into_iter().map(|e| e.report).collect(),
        curve,
    })
}
