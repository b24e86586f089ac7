//! Reference implementations written straight from the definitions. They
//! share no code with `hgkit-core` beyond plain data types.

#![allow(dead_code)]

use hgkit_core::bbox::BBox;
use hgkit_core::metrics::{Detection, GroundTruth};
use nalgebra::DMatrix;

pub fn manhattan(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

pub fn sq_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn chebyshev(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy)]
pub enum Rule {
    Manhattan(f64),
    Euclidean(f64),
    Chebyshev(f64),
    Gaussian { tau: f64, sigma: f64 },
}

/// All-pairs hyperedges: edge i holds every j satisfying the rule, ascending.
pub fn brute_edges(rows: &[Vec<f64>], rule: Rule) -> Vec<Vec<usize>> {
    rows.iter()
        .map(|a| {
            (0..rows.len())
                .filter(|&j| {
                    let b = &rows[j];
                    match rule {
                        Rule::Manhattan(d) => manhattan(a, b) < d,
                        Rule::Euclidean(d) => sq_euclidean(a, b).sqrt() < d,
                        Rule::Chebyshev(d) => chebyshev(a, b) < d,
                        Rule::Gaussian { tau, sigma } => {
                            (-sq_euclidean(a, b) / (2.0 * sigma * sigma)).exp() > tau
                        }
                    }
                })
                .collect()
        })
        .collect()
}

/// `D_v^-1 H D_e^-1 H^T X theta` with `H` as a node x edge 0/1 matrix.
pub fn dense_propagate(x: &DMatrix<f64>, edges: &[Vec<usize>], theta: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let mut h = DMatrix::<f64>::zeros(n, edges.len());
    for (i, members) in edges.iter().enumerate() {
        for &j in members {
            h[(j, i)] = 1.0;
        }
    }
    let de_inv = DMatrix::from_diagonal(&h.row_sum_tr().map(|d| 1.0 / d));
    let dv_inv = DMatrix::from_diagonal(&h.column_sum().map(|d| 1.0 / d));
    &dv_inv * &h * &de_inv * h.transpose() * x * theta
}

pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut up = x.to_vec();
            let mut down = x.to_vec();
            up[i] += h;
            down[i] -= h;
            (f(&up) - f(&down)) / (2.0 * h)
        })
        .collect()
}

pub fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / 1f64.max(a.abs()).max(n.abs())
}

/// AP by enumerating every cut: at recall level i/n_gt the interpolated
/// precision is the best precision over all cuts holding at least i TPs.
pub fn ap_oracle(flags: &[bool], n_gt: usize) -> Option<f64> {
    if n_gt == 0 {
        return None;
    }
    let cuts: Vec<(usize, f64)> = (1..=flags.len())
        .map(|k| {
            let tp = flags[..k].iter().filter(|f| **f).count();
            (tp, tp as f64 / k as f64)
        })
        .collect();
    let total_tp = flags.iter().filter(|f| **f).count();
    let mut ap = 0.0;
    for level in 1..=total_tp {
        let best = cuts
            .iter()
            .filter(|(tp, _)| *tp >= level)
            .map(|(_, p)| *p)
            .fold(0.0, f64::max);
        ap += best / n_gt as f64;
    }
    Some(ap)
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix = ((a.cx + a.w / 2.0).min(b.cx + b.w / 2.0) - (a.cx - a.w / 2.0).max(b.cx - b.w / 2.0)).max(0.0);
    let iy = ((a.cy + a.h / 2.0).min(b.cy + b.h / 2.0) - (a.cy - a.h / 2.0).max(b.cy - b.h / 2.0)).max(0.0);
    let inter = ix * iy;
    inter / (a.w * a.h + b.w * b.h - inter)
}

/// TP count of greedy matching over the detections `keep` selects.
pub fn greedy_tp(
    dets: &[Detection],
    gts: &[GroundTruth],
    class: usize,
    thresh: f64,
    keep: impl Fn(&Detection) -> bool,
) -> usize {
    let mut order: Vec<usize> = (0..dets.len())
        .filter(|&i| dets[i].class == class && keep(&dets[i]))
        .collect();
    order.sort_by(|&a, &b| dets[b].conf.partial_cmp(&dets[a].conf).unwrap().then(a.cmp(&b)));
    let mut used = vec![false; gts.len()];
    let mut tp = 0;
    for d in order {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if used[g] || gt.class != class || gt.image != dets[d].image {
                continue;
            }
            let v = iou(&dets[d].bbox, &gt.bbox);
            if best.map_or(true, |(_, bv)| v > bv) {
                best = Some((g, v));
            }
        }
        if let Some((g, v)) = best {
            if v >= thresh {
                used[g] = true;
                tp += 1;
            }
        }
    }
    tp
}

pub struct CutSummary {
    pub ap: Option<f64>,
    /// `(precision, recall, f1)` at the best-F1 cut.
    pub best: (f64, f64, f64),
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Recompute AP and the max-F1 point from scratch at every distinct
/// confidence cut. `classes = None` merges all classes.
pub fn exhaustive(dets: &[Detection], gts: &[GroundTruth], classes: &[usize], thresh: f64) -> CutSummary {
    let in_scope = |c: usize| classes.contains(&c);
    let n_gt = gts.iter().filter(|g| in_scope(g.class)).count();
    let mut confs: Vec<f64> = dets.iter().filter(|d| in_scope(d.class)).map(|d| d.conf).collect();
    confs.sort_by(|a, b| b.partial_cmp(a).unwrap());
    confs.dedup();
    let mut cuts = Vec::new();
    for &c in &confs {
        let kept = dets.iter().filter(|d| in_scope(d.class) && d.conf >= c).count();
        let tp: usize = classes
            .iter()
            .map(|&k| greedy_tp(dets, gts, k, thresh, |d| d.conf >= c))
            .sum();
        cuts.push((tp, kept));
    }
    let ap = if n_gt == 0 {
        None
    } else {
        let total = cuts.last().map_or(0, |c| c.0);
        let mut ap = 0.0;
        for level in 1..=total {
            let best = cuts
                .iter()
                .filter(|(tp, _)| *tp >= level)
                .map(|(tp, k)| *tp as f64 / *k as f64)
                .fold(0.0, f64::max);
            ap += best / n_gt as f64;
        }
        Some(ap)
    };
    let mut best = (0.0, 0.0, 0.0);
    for &(tp, k) in &cuts {
        let p = tp as f64 / k as f64;
        let r = if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 };
        if f1(p, r) > best.2 {
            best = (p, r, f1(p, r));
        }
    }
    CutSummary { ap, best }
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

fn clamp(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Plain weights for the reference EMA/CAA.
pub struct EmcaWeights {
    pub groups: usize,
    /// `[o][c]`
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    /// `[o][c][ky][kx]`
    pub w3: Vec<Vec<[[f64; 3]; 3]>>,
    pub b3: Vec<f64>,
    pub k: usize,
    pub w_in: Vec<Vec<f64>>,
    pub b_in: Vec<f64>,
    /// `[c][t]`
    pub w_h: Vec<Vec<f64>>,
    pub b_h: Vec<f64>,
    pub w_v: Vec<Vec<f64>>,
    pub b_v: Vec<f64>,
    pub w_out: Vec<Vec<f64>>,
    pub b_out: Vec<f64>,
}

/// `x[n][c][i][j]` through EMA then CAA, edge-replicated borders.
pub fn emca_reference(x: &[Vec<Vec<Vec<f64>>>], w: &EmcaWeights) -> Vec<Vec<Vec<Vec<f64>>>> {
    let c_all = x[0].len();
    let (h, wd) = (x[0][0].len(), x[0][0][0].len());
    let cg = c_all / w.groups;
    let mut out = Vec::new();
    for sample in x {
        // EMA
        let mut y = vec![vec![vec![0.0; wd]; h]; c_all];
        for g in 0..w.groups {
            let xs = &sample[g * cg..(g + 1) * cg];
            let ph: Vec<Vec<f64>> = xs
                .iter()
                .map(|p| p.iter().map(|row| row.iter().sum::<f64>() / wd as f64).collect())
                .collect();
            let pw: Vec<Vec<f64>> = xs
                .iter()
                .map(|p| (0..wd).map(|j| p.iter().map(|row| row[j]).sum::<f64>() / h as f64).collect())
                .collect();
            let mut gated = vec![vec![vec![0.0; wd]; h]; cg];
            for o in 0..cg {
                for i in 0..h {
                    let zh = w.b1[o] + (0..cg).map(|c| w.w1[o][c] * ph[c][i]).sum::<f64>();
                    for j in 0..wd {
                        let zw = w.b1[o] + (0..cg).map(|c| w.w1[o][c] * pw[c][j]).sum::<f64>();
                        gated[o][i][j] = xs[o][i][j] * sigmoid(zh) * sigmoid(zw);
                    }
                }
            }
            let count = (cg * h * wd) as f64;
            let mean: f64 = gated.iter().flatten().flatten().sum::<f64>() / count;
            let var: f64 = gated.iter().flatten().flatten().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
            let x1: Vec<Vec<Vec<f64>>> = gated
                .iter()
                .map(|p| p.iter().map(|r| r.iter().map(|v| (v - mean) / (var + 1e-5).sqrt()).collect()).collect())
                .collect();
            let mut x2 = vec![vec![vec![0.0; wd]; h]; cg];
            for o in 0..cg {
                for i in 0..h {
                    for j in 0..wd {
                        let mut acc = w.b3[o];
                        for c in 0..cg {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let si = clamp(i as isize + ky as isize - 1, h);
                                    let sj = clamp(j as isize + kx as isize - 1, wd);
                                    acc += w.w3[o][c][ky][kx] * xs[c][si][sj];
                                }
                            }
                        }
                        x2[o][i][j] = acc;
                    }
                }
            }
            let gap = |t: &Vec<Vec<Vec<f64>>>| -> Vec<f64> {
                t.iter().map(|p| p.iter().flatten().sum::<f64>() / (h * wd) as f64).collect()
            };
            let x11 = softmax(&gap(&x1));
            let x21 = softmax(&gap(&x2));
            for i in 0..h {
                for j in 0..wd {
                    let z: f64 = (0..cg).map(|c| x11[c] * x2[c][i][j] + x21[c] * x1[c][i][j]).sum();
                    let a = sigmoid(z);
                    for c in 0..cg {
                        y[g * cg + c][i][j] = xs[c][i][j] * a;
                    }
                }
            }
        }

        // CAA
        let mut pooled = vec![vec![vec![0.0; wd]; h]; c_all];
        for c in 0..c_all {
            for i in 0..h {
                for j in 0..wd {
                    let mut acc = 0.0;
                    for di in -3isize..=3 {
                        for dj in -3isize..=3 {
                            acc += y[c][clamp(i as isize + di, h)][clamp(j as isize + dj, wd)];
                        }
                    }
                    pooled[c][i][j] = acc / 49.0;
                }
            }
        }
        let mix = |src: &Vec<Vec<Vec<f64>>>, wt: &Vec<Vec<f64>>, b: &Vec<f64>| {
            let mut dst = vec![vec![vec![0.0; wd]; h]; c_all];
            for o in 0..c_all {
                for i in 0..h {
                    for j in 0..wd {
                        dst[o][i][j] = b[o] + (0..c_all).map(|c| wt[o][c] * src[c][i][j]).sum::<f64>();
                    }
                }
            }
            dst
        };
        let f1 = mix(&pooled, &w.w_in, &w.b_in);
        let half = (w.k / 2) as isize;
        let mut fh = vec![vec![vec![0.0; wd]; h]; c_all];
        let mut fv = vec![vec![vec![0.0; wd]; h]; c_all];
        for c in 0..c_all {
            for i in 0..h {
                for j in 0..wd {
                    fh[c][i][j] = w.b_h[c]
                        + (0..w.k)
                            .map(|t| w.w_h[c][t] * f1[c][i][clamp(j as isize + t as isize - half, wd)])
                            .sum::<f64>();
                }
            }
            for i in 0..h {
                for j in 0..wd {
                    fv[c][i][j] = w.b_v[c]
                        + (0..w.k)
                            .map(|t| w.w_v[c][t] * fh[c][clamp(i as isize + t as isize - half, h)][j])
                            .sum::<f64>();
                }
            }
        }
        let f3 = mix(&fv, &w.w_out, &w.b_out);
        let z: Vec<Vec<Vec<f64>>> = (0..c_all)
            .map(|c| (0..h).map(|i| (0..wd).map(|j| sigmoid(f3[c][i][j]) * y[c][i][j]).collect()).collect())
            .collect();
        out.push(z);
    }
    out
}

/// Dominant eigenvector of `M^T M` from a full symmetric decomposition.
pub fn dominant_eigvec(rows: usize, cols: usize, data: &[f64]) -> Vec<f64> {
    let m = DMatrix::from_row_slice(rows, cols, data);
    let eig = (m.transpose() * &m).symmetric_eigen();
    let k = eig.eigenvalues.imax();
    eig.eigenvectors.column(k).iter().copied().collect()
}
