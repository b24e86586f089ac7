//! Eigen-CAM: gradient-free activation heatmaps.
//!
//! An activation map `1 x C x H x W` is flattened to an `(H*W) x C` matrix
//! `M`. Its first right singular vector `v` is found by power iteration on
//! `M^T M`; the heatmap is `M v` with negatives clamped, min-max scaled to
//! `[0, 1]` and bilinearly resized (corner-aligned) to the requested size.

use crate::error::{Error, Result};
use crate::hyperconv::gridize;
use crate::matrix::Matrix;
use crate::tensor::Tensor;

pub const MAX_ITERATIONS: usize = 1000;
pub const TOLERANCE: f64 = 1e-10;

/// Unit dominant right singular vector of `m`, signed so `sum(M v) >= 0`.
pub fn principal_direction(m: &Matrix) -> Result<Vec<f64>> {
    let c = m.cols();
    if c == 0 || m.data().iter().all(|&v| v == 0.0) {
        return Err(Error::ZeroMatrix);
    }
    let gram = m.transpose().matmul(m)?;

    let mut v = vec![1.0 / (c as f64).sqrt(); c];
    let mut next = gram.mul_vec(&v);
    if norm(&next) <= f64::EPSILON * frobenius(&gram) {
        // The uniform start is orthogonal to the range of M^T M; start from
        // the axis with the largest diagonal entry instead.
        let k = (0..c)
            .max_by(|&a, &b| gram.get(a, a).total_cmp(&gram.get(b, b)))
            .unwrap_or(0);
        v = vec![0.0; c];
        v[k] = 1.0;
        next = gram.mul_vec(&v);
    }
    for _ in 0..MAX_ITERATIONS {
        let n = norm(&next);
        if n == 0.0 {
            break;
        }
        next.iter_mut().for_each(|x| *x /= n);
        let change = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        std::mem::swap(&mut v, &mut next);
        if change < TOLERANCE {
            break;
        }
        next = gram.mul_vec(&v);
    }

    let column_sums = m.tr_mul_vec(&vec![1.0; m.rows()]);
    let direction: f64 = column_sums.iter().zip(&v).map(|(a, b)| a * b).sum();
    if direction < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    Ok(v)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn frobenius(m: &Matrix) -> f64 {
    norm(m.data())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl Heatmap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::LengthMismatch {
                expected: height * width,
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::OutOfRange("heatmap values must lie in [0, 1]".into()));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Binary PGM (P5), 8-bit, pixel = `round(255 * value)`.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.values.iter().map(|v| (255.0 * v).round() as u8));
        out
    }

    /// One CSV line per row, comma-separated values.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for row in self.values.chunks_exact(self.width) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
            s.push_str(&line.join(","));
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CamResult {
    pub heatmap: Heatmap,
    /// True when the activation (or its projection) carries no contrast and
    /// the heatmap is all zeros.
    pub degenerate: bool,
}

pub fn eigen_cam(activation: &Tensor, out_h: usize, out_w: usize) -> Result<CamResult> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::ZeroSizeOutput(format!("heatmap of {out_h}x{out_w}")));
    }
    let nodes = gridize(activation)?;
    let (h, w) = (nodes.height(), nodes.width());
    let degenerate = || CamResult {
        heatmap: Heatmap {
            height: out_h,
            width: out_w,
            values: vec![0.0; out_h * out_w],
        },
        degenerate: true,
    };
    let v = match principal_direction(nodes.features()) {
        Ok(v) => v,
        Err(Error::ZeroMatrix) => return Ok(degenerate()),
        Err(e) => return Err(e),
    };
    let scores: Vec<f64> = nodes.features().mul_vec(&v).into_iter().map(|s| s.max(0.0)).collect();
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    if !(max - min > 1e-12 * max) {
        return Ok(degenerate());
    }
    let range = max - min;
    let normalized: Vec<f64> = scores.iter().map(|s| ((s - min) / range).clamp(0.0, 1.0)).collect();
    let values = bilinear_resize(&normalized, h, w, out_h, out_w);
    Ok(CamResult {
        heatmap: Heatmap::new(out_h, out_w, values)?,
        degenerate: false,
    })
}

/// Corner-aligned bilinear resampling of a row-major `h x w` grid.
pub fn bilinear_resize(src: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let coord = |i: usize, n_in: usize, n_out: usize| -> (usize, usize, f64) {
        if n_in == 1 || n_out == 1 {
            return (0, 0, 0.0);
        }
        let pos = i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
        let lo = (pos.floor() as usize).min(n_in - 1);
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, pos - lo as f64)
    };
    let mut out = Vec::with_capacity(out_h * out_w);
    for oy in 0..out_h {
        let (y0, y1, fy) = coord(oy, h, out_h);
        for ox in 0..out_w {
            let (x0, x1, fx) = coord(ox, w, out_w);
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out.push((top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use proptest::prelude::*;

    #[test]
    fn rank_one_recovers_direction() {
        let u = [1.0, 2.0, -0.5, 3.0];
        let v = [0.6, -0.8, 0.0];
        let data: Vec<f64> = u.iter().flat_map(|a| v.iter().map(move |b| a * b)).collect();
        let m = Matrix::new(4, 3, data).unwrap();
        let got = principal_direction(&m).unwrap();
        let sign = if got[0] * v[0] < 0.0 { -1.0 } else { 1.0 };
        for (g, want) in got.iter().zip(v) {
            assert!((g * sign - want).abs() < 1e-15);
        }
    }

    #[test]
    fn rank_one_orthogonal_to_uniform_start() {
        // v is orthogonal to (1, 1)/sqrt(2)
        let v = [std::f64::consts::FRAC_1_SQRT_2, -std::f64::consts::FRAC_1_SQRT_2];
        let m = Matrix::new(2, 2, vec![v[0], v[1], 2.0 * v[0], 2.0 * v[1]]).unwrap();
        let got = principal_direction(&m).unwrap();
        assert!((got[0].abs() - v[0]).abs() < 1e-15);
        assert!((got[0] * got[1] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn diagonal_spectrum() {
        let m = Matrix::new(2, 2, vec![3.0, 0.0, 0.0, 1.0]).unwrap();
        let v = principal_direction(&m).unwrap();
        // stops once an iterate moves less than 1e-10
        assert!((v[0].abs() - 1.0).abs() < 1e-12);
        assert!(v[1].abs() < 1e-10);
    }

    #[test]
    fn zero_matrix_is_an_error() {
        assert_eq!(principal_direction(&Matrix::zeros(3, 2)), Err(Error::ZeroMatrix));
    }

    #[test]
    fn rank_one_heatmap_is_normalized_pattern() {
        let (h, w) = (3, 4);
        let s: Vec<f64> = (0..12).map(|i| ((i * 7) % 5) as f64).collect();
        let v = [0.5, 1.5];
        let mut data = Vec::new();
        for vc in v {
            data.extend(s.iter().map(|x| x * vc));
        }
        let act = Tensor::new(vec![1, 2, h, w], data).unwrap();
        let cam = eigen_cam(&act, h, w).unwrap();
        assert!(!cam.degenerate);
        let (lo, hi) = (0.0, 4.0);
        for (got, x) in cam.heatmap.values().iter().zip(&s) {
            assert!((got - (x - lo) / (hi - lo)).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_activation_is_degenerate() {
        let act = Tensor::full(&[1, 3, 4, 4], 2.0).unwrap();
        let cam = eigen_cam(&act, 8, 8).unwrap();
        assert!(cam.degenerate);
        assert!(cam.heatmap.values().iter().all(|&v| v == 0.0));
        let zero = Tensor::zeros(&[1, 3, 4, 4]).unwrap();
        assert!(eigen_cam(&zero, 2, 2).unwrap().degenerate);
    }

    #[test]
    fn pgm_layout() {
        let hm = Heatmap::new(1, 3, vec![0.0, 0.5, 1.0]).unwrap();
        let bytes = hm.to_pgm();
        assert_eq!(&bytes[..11], b"P5\n3 1\n255\n");
        assert_eq!(&bytes[11..], &[0, 128, 255]);
        assert_eq!(hm.to_csv(), "0.000000,0.500000,1.000000\n");
    }

    #[test]
    fn bilinear_corners_and_midpoint() {
        let src = [0.0, 1.0, 1.0, 0.0];
        let out = bilinear_resize(&src, 2, 2, 3, 3);
        assert_eq!(out[0], 0.0);
        assert_eq!(out[2], 1.0);
        assert_eq!(out[4], 0.5);
        assert_eq!(out[8], 0.0);
    }

    fn random_activation(seed: u64) -> Tensor {
        Tensor::new(vec![1, 4, 5, 6], SeededRng::new(seed).fill_uniform(120, -1.0, 2.0)).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn unit_norm_and_rayleigh_optimal(seed in any::<u64>()) {
            let mut rng = SeededRng::new(seed);
            let m = Matrix::new(7, 4, rng.fill_uniform(28, -1.0, 1.0)).unwrap();
            let v = principal_direction(&m).unwrap();
            prop_assert!((norm(&v) - 1.0).abs() < 1e-12);
            let best = norm(&m.mul_vec(&v));
            for _ in 0..100 {
                let mut w = rng.fill_uniform(4, -1.0, 1.0);
                let n = norm(&w);
                w.iter_mut().for_each(|x| *x /= n);
                prop_assert!(best >= norm(&m.mul_vec(&w)) - 1e-6);
            }
        }

        #[test]
        fn heatmap_range_and_scale_invariance(seed in any::<u64>(), k in 0.01f64..100.0, oh in 1usize..16, ow in 1usize..16) {
            let act = random_activation(seed);
            let a = eigen_cam(&act, oh, ow).unwrap();
            let b = eigen_cam(&act.scale(k), oh, ow).unwrap();
            prop_assert_eq!((a.heatmap.height(), a.heatmap.width()), (oh, ow));
            prop_assert!(a.heatmap.values().iter().all(|v| (0.0..=1.0).contains(v)));
            for (x, y) in a.heatmap.values().iter().zip(b.heatmap.values()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
