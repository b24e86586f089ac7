//! Dense rank-1..4 tensors and the neural primitives the attention blocks use.
//!
//! Rank-4 tensors are laid out `(N, C, H, W)`, row-major. All arithmetic is
//! `f64`. Every function here is pure: inputs are borrowed, outputs are new.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if dims.is_empty() || dims.len() > 4 {
            return Err(Error::InvalidDims {
                dims,
                reason: "rank must be between 1 and 4".into(),
            });
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidDims {
                dims,
                reason: "every extent must be at least 1".into(),
            });
        }
        let len: usize = dims.iter().product();
        if len != data.len() {
            return Err(Error::LengthMismatch {
                expected: len,
                actual: data.len(),
            });
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        Self::full(dims, 0.0)
    }

    pub fn full(dims: &[usize], value: f64) -> Result<Self> {
        let len = dims.iter().product();
        Self::new(dims.to_vec(), vec![value; len])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn reshape(self, dims: Vec<usize>) -> Result<Self> {
        Self::new(dims, self.data)
    }

    /// `(N, C, H, W)` of a rank-4 tensor.
    pub fn nchw(&self) -> Result<(usize, usize, usize, usize)> {
        match self.dims.as_slice() {
            &[n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::ShapeMismatch(format!(
                "expected a rank-4 (N, C, H, W) tensor, got dims {:?}",
                self.dims
            ))),
        }
    }

    pub fn at4(&self, n: usize, c: usize, h: usize, w: usize) -> f64 {
        let (_, cc, hh, ww) = (self.dims[0], self.dims[1], self.dims[2], self.dims[3]);
        self.data[((n * cc + c) * hh + h) * ww + w]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scale(&self, k: f64) -> Tensor {
        self.map(|x| x * k)
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Channels `start..start + count` of a rank-4 tensor.
    pub fn channel_slice(&self, start: usize, count: usize) -> Result<Tensor> {
        let (n, c, h, w) = self.nchw()?;
        if start + count > c || count == 0 {
            return Err(Error::OutOfRange(format!(
                "channels {start}..{} of {c}",
                start + count
            )));
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(n * count * plane);
        for b in 0..n {
            let base = (b * c + start) * plane;
            data.extend_from_slice(&self.data[base..base + count * plane]);
        }
        Tensor::new(vec![n, count, h, w], data)
    }

    /// Concatenate rank-4 tensors along the channel axis.
    pub fn concat_channels(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidParameter("nothing to concatenate".into()))?;
        let (n, _, h, w) = first.nchw()?;
        let mut total_c = 0;
        for p in parts {
            let (pn, pc, ph, pw) = p.nchw()?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(Error::ShapeMismatch(format!(
                    "cannot concatenate {:?} with {:?}",
                    first.dims, p.dims
                )));
            }
            total_c += pc;
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(n * total_c * plane);
        for b in 0..n {
            for p in parts {
                let pc = p.dims[1];
                let base = b * pc * plane;
                data.extend_from_slice(&p.data[base..base + pc * plane]);
            }
        }
        Tensor::new(vec![n, total_c, h, w], data)
    }
}

/// How out-of-bounds taps are filled for convolution and pooling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Padding {
    /// Out-of-bounds taps read 0.
    #[default]
    Zeros,
    /// Out-of-bounds taps read the nearest in-bounds element.
    Replicate,
}

#[inline]
fn tap(
    plane: &[f64],
    h: usize,
    w: usize,
    y: isize,
    x: isize,
    padding: Padding,
) -> f64 {
    let inside = y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w;
    if inside {
        return plane[y as usize * w + x as usize];
    }
    match padding {
        Padding::Zeros => 0.0,
        Padding::Replicate => {
            let yy = y.clamp(0, h as isize - 1) as usize;
            let xx = x.clamp(0, w as isize - 1) as usize;
            plane[yy * w + xx]
        }
    }
}

fn output_extent(input: usize, pad: usize, kernel: usize, stride: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// A 2-D convolution layer: weights `(out_c, in_c / groups, kh, kw)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvSpec {
    weight: Tensor,
    bias: Option<Vec<f64>>,
    stride: usize,
    padding: (usize, usize),
    groups: usize,
    pad_mode: Padding,
}

impl ConvSpec {
    pub fn new(weight: Tensor, groups: usize) -> Result<Self> {
        let (out_c, _, _, _) = weight.nchw()?;
        if groups == 0 || out_c % groups != 0 {
            return Err(Error::NotDivisible {
                what: "output channels",
                value: out_c,
                divisor: groups,
            });
        }
        Ok(Self {
            weight,
            bias: None,
            stride: 1,
            padding: (0, 0),
            groups,
            pad_mode: Padding::Zeros,
        })
    }

    pub fn with_bias(mut self, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != self.out_channels() {
            return Err(Error::LengthMismatch {
                expected: self.out_channels(),
                actual: bias.len(),
            });
        }
        self.bias = Some(bias);
        Ok(self)
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_padding(mut self, ph: usize, pw: usize) -> Self {
        self.padding = (ph, pw);
        self
    }

    pub fn with_pad_mode(mut self, mode: Padding) -> Self {
        self.pad_mode = mode;
        self
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn bias(&self) -> Option<&[f64]> {
        self.bias.as_deref()
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn padding(&self) -> (usize, usize) {
        self.padding
    }

    pub fn pad_mode(&self) -> Padding {
        self.pad_mode
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims[0]
    }

    /// Input channels this layer accepts.
    pub fn in_channels(&self) -> usize {
        self.weight.dims[1] * self.groups
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.weight.dims[2], self.weight.dims[3])
    }
}

/// Direct cross-correlation (no kernel flip) plus optional bias.
pub fn conv2d(input: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
    let (n, c, h, w) = input.nchw()?;
    if c != spec.in_channels() {
        return Err(Error::ShapeMismatch(format!(
            "conv expects {} input channels, got {c}",
            spec.in_channels()
        )));
    }
    let (kh, kw) = spec.kernel();
    let (ph, pw) = spec.padding;
    let oh = output_extent(h, ph, kh, spec.stride);
    let ow = output_extent(w, pw, kw, spec.stride);
    let (oh, ow) = match (oh, ow) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::ZeroSizeOutput(format!(
                "{kh}x{kw} kernel, stride {}, padding ({ph}, {pw}) on {h}x{w} input",
                spec.stride
            )))
        }
    };
    let out_c = spec.out_channels();
    let in_per_group = c / spec.groups;
    let out_per_group = out_c / spec.groups;
    let wdata = spec.weight.data();
    let mut out = vec![0.0; n * out_c * oh * ow];
    for b in 0..n {
        for oc in 0..out_c {
            let g = oc / out_per_group;
            let bias = spec.bias.as_ref().map_or(0.0, |v| v[oc]);
            let out_base = (b * out_c + oc) * oh * ow;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for icg in 0..in_per_group {
                        let ic = g * in_per_group + icg;
                        let plane = &input.data[(b * c + ic) * h * w..(b * c + ic + 1) * h * w];
                        let wbase = (oc * in_per_group + icg) * kh * kw;
                        for ky in 0..kh {
                            let y = (oy * spec.stride + ky) as isize - ph as isize;
                            for kx in 0..kw {
                                let x = (ox * spec.stride + kx) as isize - pw as isize;
                                acc += wdata[wbase + ky * kw + kx]
                                    * tap(plane, h, w, y, x, spec.pad_mode);
                            }
                        }
                    }
                    out[out_base + oy * ow + ox] = acc + bias;
                }
            }
        }
    }
    Tensor::new(vec![n, out_c, oh, ow], out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    /// Windowed mean; always divides by the full window area.
    Avg,
    GlobalAvg,
    /// Mean over width: `(N, C, H, 1)`.
    RowAvg,
    /// Mean over height: `(N, C, 1, W)`.
    ColAvg,
}

/// Windowed or directional pooling. Window parameters are ignored for the
/// global and directional kinds.
pub fn pool2d(
    input: &Tensor,
    kind: PoolKind,
    k: usize,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    pool2d_with(input, kind, k, stride, pad, Padding::Zeros)
}

pub fn pool2d_with(
    input: &Tensor,
    kind: PoolKind,
    k: usize,
    stride: usize,
    pad: usize,
    pad_mode: Padding,
) -> Result<Tensor> {
    let (n, c, h, w) = input.nchw()?;
    let plane_len = h * w;
    let planes = input.data.chunks_exact(plane_len);
    match kind {
        PoolKind::GlobalAvg => {
            let data = planes.map(|p| p.iter().sum::<f64>() / plane_len as f64).collect();
            Tensor::new(vec![n, c, 1, 1], data)
        }
        PoolKind::RowAvg => {
            let data = planes
                .flat_map(|p| p.chunks_exact(w).map(|row| row.iter().sum::<f64>() / w as f64))
                .collect();
            Tensor::new(vec![n, c, h, 1], data)
        }
        PoolKind::ColAvg => {
            let mut data = Vec::with_capacity(n * c * w);
            for p in planes {
                for x in 0..w {
                    let s: f64 = (0..h).map(|y| p[y * w + x]).sum();
                    data.push(s / h as f64);
                }
            }
            Tensor::new(vec![n, c, 1, w], data)
        }
        PoolKind::Max | PoolKind::Avg => {
            let geometry = output_extent(h, pad, k, stride).zip(output_extent(w, pad, k, stride));
            let (oh, ow) = match geometry {
                Some(g) if k > 0 => g,
                _ => {
                    return Err(Error::ZeroSizeOutput(format!(
                        "{k}x{k} pool, stride {stride}, padding {pad} on {h}x{w} input"
                    )))
                }
            };
            let area = (k * k) as f64;
            let mut data = Vec::with_capacity(n * c * oh * ow);
            for p in planes {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = if kind == PoolKind::Max { f64::NEG_INFINITY } else { 0.0 };
                        for ky in 0..k {
                            let y = (oy * stride + ky) as isize - pad as isize;
                            for kx in 0..k {
                                let x = (ox * stride + kx) as isize - pad as isize;
                                let v = tap(p, h, w, y, x, pad_mode);
                                if kind == PoolKind::Max {
                                    acc = acc.max(v);
                                } else {
                                    acc += v;
                                }
                            }
                        }
                        data.push(if kind == PoolKind::Avg { acc / area } else { acc });
                    }
                }
            }
            Tensor::new(vec![n, c, oh, ow], data)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Softmax { axis: usize },
}

pub fn activation(input: &Tensor, kind: Activation) -> Result<Tensor> {
    match kind {
        Activation::Sigmoid => Ok(input.map(sigmoid_scalar)),
        Activation::Softmax { axis } => softmax(input, axis),
    }
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(input: &Tensor) -> Tensor {
    input.map(sigmoid_scalar)
}

/// In-place max-subtracted softmax of a slice.
pub fn softmax_slice(values: &mut [f64]) {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in values.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in values.iter_mut() {
        *v /= sum;
    }
}

pub fn softmax(input: &Tensor, axis: usize) -> Result<Tensor> {
    let dims = &input.dims;
    if axis >= dims.len() {
        return Err(Error::InvalidParameter(format!(
            "softmax axis {axis} on rank-{} tensor",
            dims.len()
        )));
    }
    let extent = dims[axis];
    let inner: usize = dims[axis + 1..].iter().product();
    let outer: usize = dims[..axis].iter().product();
    let mut out = input.data.clone();
    let mut lane = vec![0.0; extent];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * extent + k) * inner + i;
            for (k, l) in lane.iter_mut().enumerate() {
                *l = input.data[at(k)];
            }
            softmax_slice(&mut lane);
            for (k, l) in lane.iter().enumerate() {
                out[at(k)] = *l;
            }
        }
    }
    Tensor::new(dims.clone(), out)
}

pub const GROUP_NORM_EPS: f64 = 1e-5;

/// Group normalization without affine parameters. Statistics are taken per
/// (sample, group) over the group's channels and all spatial positions.
pub fn group_norm(input: &Tensor, num_groups: usize, eps: f64) -> Result<Tensor> {
    let (n, c, h, w) = input.nchw()?;
    if num_groups == 0 || c % num_groups != 0 {
        return Err(Error::NotDivisible {
            what: "channels",
            value: c,
            divisor: num_groups,
        });
    }
    let chunk = (c / num_groups) * h * w;
    let mut out = Vec::with_capacity(input.len());
    for group in input.data.chunks_exact(chunk) {
        let mean = group.iter().sum::<f64>() / chunk as f64;
        let var = group.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / chunk as f64;
        let inv = 1.0 / (var + eps).sqrt();
        out.extend(group.iter().map(|x| (x - mean) * inv));
    }
    debug_assert_eq!(out.len(), n * c * h * w);
    Tensor::new(input.dims.clone(), out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pointwise {
    Mul,
    Add,
}

/// Elementwise `a ∘ b` where `b` may broadcast (extent 1) along any axis.
/// Lower-rank `b` is aligned to the trailing axes of `a`.
pub fn pointwise(a: &Tensor, b: &Tensor, kind: Pointwise) -> Result<Tensor> {
    if b.rank() > a.rank() {
        return Err(Error::ShapeMismatch(format!(
            "cannot broadcast {:?} into {:?}",
            b.dims, a.dims
        )));
    }
    let offset = a.rank() - b.rank();
    let mut bdims = vec![1; offset];
    bdims.extend_from_slice(&b.dims);
    for (&ad, &bd) in a.dims.iter().zip(&bdims) {
        if bd != ad && bd != 1 {
            return Err(Error::ShapeMismatch(format!(
                "cannot broadcast {:?} into {:?}",
                b.dims, a.dims
            )));
        }
    }
    // Strides of b, zeroed along broadcast axes.
    let rank = a.rank();
    let mut bstrides = vec![0; rank];
    let mut acc = 1;
    for ax in (0..rank).rev() {
        bstrides[ax] = if bdims[ax] == 1 { 0 } else { acc };
        acc *= bdims[ax];
    }
    let mut idx = vec![0usize; rank];
    let mut out = Vec::with_capacity(a.len());
    for &av in &a.data {
        let boff: usize = idx.iter().zip(&bstrides).map(|(i, s)| i * s).sum();
        let bv = b.data[boff];
        out.push(match kind {
            Pointwise::Mul => av * bv,
            Pointwise::Add => av + bv,
        });
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            if idx[ax] < a.dims[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    Tensor::new(a.dims.clone(), out)
}
