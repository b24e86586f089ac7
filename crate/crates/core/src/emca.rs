//! Efficient multi-scale context attention: EMA followed by CAA.
//!
//! EMA splits the channels into `g` groups that share one 1x1 and one 3x3
//! convolution. Each group gets a directional gate (row and column means
//! through the 1x1 conv, sigmoid, multiplied in, group-normalized) and a
//! 3x3 branch; the two branches are cross-contracted through softmaxed
//! channel descriptors into one spatial attention map per group.
//!
//! CAA smooths with a 7x7 mean, mixes channels with a 1x1 conv, runs a
//! horizontal then vertical depthwise band conv, mixes again and gates the
//! input with a sigmoid.
//!
//! Convolutions and pooling here read borders with [`Padding::Replicate`]
//! by default, so every pixel of a spatially constant map sees the same
//! neighbourhood and the blocks preserve spatial constancy. Use
//! `with_border(Padding::Zeros)` for zero-padded borders.

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{
    conv2d, group_norm, pointwise, pool2d_with, sigmoid, sigmoid_scalar, softmax_slice, ConvSpec,
    Padding, PoolKind, Pointwise, Tensor, GROUP_NORM_EPS,
};

/// Glorot-uniform conv weights, bound `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_conv(
    out_c: usize,
    in_per_group: usize,
    kh: usize,
    kw: usize,
    groups: usize,
    rng: &mut SeededRng,
) -> Tensor {
    let fan_in = (in_per_group * kh * kw) as f64;
    let fan_out = (out_c / groups * kh * kw) as f64;
    let bound = (6.0 / (fan_in + fan_out)).sqrt();
    let len = out_c * in_per_group * kh * kw;
    Tensor::new(
        vec![out_c, in_per_group, kh, kw],
        rng.fill_uniform(len, -bound, bound),
    )
    .expect("positive extents")
}

/// `8` for wide inputs, `1` for narrow ones. Channel counts of at least 8
/// that are not multiples of 8 fall back to `gcd(C, 8)`.
pub fn default_groups(channels: usize) -> usize {
    if channels >= 8 {
        gcd(channels, 8)
    } else {
        1
    }
}

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn expect_weight(w: &Tensor, dims: [usize; 4], name: &str) -> Result<()> {
    if w.dims() != dims {
        return Err(Error::ShapeMismatch(format!(
            "{name} weight must be {dims:?}, got {:?}",
            w.dims()
        )));
    }
    Ok(())
}

fn attach_bias(spec: ConvSpec, bias: Option<Vec<f64>>) -> Result<ConvSpec> {
    match bias {
        Some(b) => spec.with_bias(b),
        None => Ok(spec),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmaConfig {
    groups: usize,
    conv1x1: ConvSpec,
    conv3x3: ConvSpec,
    norm_groups: usize,
    eps: f64,
    border: Padding,
}

impl EmaConfig {
    /// `conv1x1` is `(C/g, C/g, 1, 1)`, `conv3x3` is `(C/g, C/g, 3, 3)`;
    /// both are shared by every group.
    pub fn from_weights(
        groups: usize,
        conv1x1: Tensor,
        bias1x1: Option<Vec<f64>>,
        conv3x3: Tensor,
        bias3x3: Option<Vec<f64>>,
    ) -> Result<Self> {
        if groups == 0 {
            return Err(Error::InvalidParameter("group count must be positive".into()));
        }
        let cg = conv1x1.dims().first().copied().unwrap_or(0);
        expect_weight(&conv1x1, [cg, cg, 1, 1], "EMA 1x1")?;
        expect_weight(&conv3x3, [cg, cg, 3, 3], "EMA 3x3")?;
        let border = Padding::Replicate;
        let conv1x1 = attach_bias(ConvSpec::new(conv1x1, 1)?, bias1x1)?;
        let conv3x3 = attach_bias(
            ConvSpec::new(conv3x3, 1)?.with_padding(1, 1).with_pad_mode(border),
            bias3x3,
        )?;
        Ok(Self {
            groups,
            conv1x1,
            conv3x3,
            norm_groups: 1,
            eps: GROUP_NORM_EPS,
            border,
        })
    }

    pub fn random(channels: usize, groups: usize, rng: &mut SeededRng) -> Result<Self> {
        check_divisible(channels, groups)?;
        let cg = channels / groups;
        let w1 = glorot_conv(cg, cg, 1, 1, 1, rng);
        let w3 = glorot_conv(cg, cg, 3, 3, 1, rng);
        Self::from_weights(groups, w1, None, w3, None)
    }

    pub fn zeros(channels: usize, groups: usize) -> Result<Self> {
        check_divisible(channels, groups)?;
        let cg = channels / groups;
        Self::from_weights(
            groups,
            Tensor::zeros(&[cg, cg, 1, 1])?,
            None,
            Tensor::zeros(&[cg, cg, 3, 3])?,
            None,
        )
    }

    pub fn with_border(mut self, border: Padding) -> Self {
        self.border = border;
        self.conv3x3 = self.conv3x3.with_pad_mode(border);
        self
    }

    pub fn with_norm_groups(mut self, norm_groups: usize) -> Result<Self> {
        check_divisible(self.group_channels(), norm_groups)?;
        self.norm_groups = norm_groups;
        Ok(self)
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn group_channels(&self) -> usize {
        self.conv1x1.out_channels()
    }

    pub fn conv1x1(&self) -> &ConvSpec {
        &self.conv1x1
    }

    pub fn conv3x3(&self) -> &ConvSpec {
        &self.conv3x3
    }

    pub fn norm_groups(&self) -> usize {
        self.norm_groups
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn border(&self) -> Padding {
        self.border
    }
}

fn check_divisible(channels: usize, groups: usize) -> Result<()> {
    if groups == 0 || channels % groups != 0 {
        return Err(Error::NotDivisible {
            what: "channels",
            value: channels,
            divisor: groups,
        });
    }
    Ok(())
}

/// Per (sample, group) intermediates of one EMA pass.
#[derive(Debug, Clone, PartialEq)]
pub struct EmaGroupTrace {
    /// Softmaxed channel descriptor of the gated branch.
    pub x11: Vec<f64>,
    /// Softmaxed channel descriptor of the 3x3 branch.
    pub x21: Vec<f64>,
    /// Sigmoid spatial attention, `H * W` values.
    pub attention: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmaTrace {
    pub output: Tensor,
    /// Indexed `sample * groups + group`.
    pub groups: Vec<EmaGroupTrace>,
}

pub fn ema_forward(x: &Tensor, cfg: &EmaConfig) -> Result<Tensor> {
    Ok(ema_forward_traced(x, cfg)?.output)
}

pub fn ema_forward_traced(x: &Tensor, cfg: &EmaConfig) -> Result<EmaTrace> {
    let (n, c, h, w) = x.nchw()?;
    check_divisible(c, cfg.groups)?;
    let cg = c / cfg.groups;
    if cg != cfg.group_channels() {
        return Err(Error::ShapeMismatch(format!(
            "EMA weights expect {} channels per group, input has {c} channels in {} groups",
            cfg.group_channels(),
            cfg.groups
        )));
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(x.len());
    let mut traces = Vec::with_capacity(n * cfg.groups);
    for chunk in x.data().chunks_exact(cg * plane) {
        let xg = Tensor::new(vec![1, cg, h, w], chunk.to_vec())?;
        let (y, trace) = ema_group(&xg, cfg)?;
        out.extend_from_slice(y.data());
        traces.push(trace);
    }
    Ok(EmaTrace {
        output: Tensor::new(vec![n, c, h, w], out)?,
        groups: traces,
    })
}

fn ema_group(xg: &Tensor, cfg: &EmaConfig) -> Result<(Tensor, EmaGroupTrace)> {
    let (_, cg, h, w) = xg.nchw()?;

    // Directional gate: [pool_h ; pool_w] stacked along the pooled axis.
    let pool_h = pool2d_with(xg, PoolKind::RowAvg, 0, 0, 0, cfg.border)?;
    let pool_w = pool2d_with(xg, PoolKind::ColAvg, 0, 0, 0, cfg.border)?;
    let mut stacked = Vec::with_capacity(cg * (h + w));
    for ch in 0..cg {
        stacked.extend_from_slice(&pool_h.data()[ch * h..(ch + 1) * h]);
        stacked.extend_from_slice(&pool_w.data()[ch * w..(ch + 1) * w]);
    }
    let stacked = Tensor::new(vec![1, cg, h + w, 1], stacked)?;
    let mixed = conv2d(&stacked, &cfg.conv1x1)?;
    let mut gate_h = Vec::with_capacity(cg * h);
    let mut gate_w = Vec::with_capacity(cg * w);
    for lane in mixed.data().chunks_exact(h + w) {
        gate_h.extend(lane[..h].iter().map(|&v| sigmoid_scalar(v)));
        gate_w.extend(lane[h..].iter().map(|&v| sigmoid_scalar(v)));
    }
    let gate_h = Tensor::new(vec![1, cg, h, 1], gate_h)?;
    let gate_w = Tensor::new(vec![1, cg, 1, w], gate_w)?;
    let gated = pointwise(&pointwise(xg, &gate_h, Pointwise::Mul)?, &gate_w, Pointwise::Mul)?;
    let x1 = group_norm(&gated, cfg.norm_groups, cfg.eps)?;

    let x2 = conv2d(xg, &cfg.conv3x3)?;

    let plane = h * w;
    let descriptor = |t: &Tensor| -> Vec<f64> {
        let mut d: Vec<f64> = t
            .data()
            .chunks_exact(plane)
            .map(|p| p.iter().sum::<f64>() / plane as f64)
            .collect();
        softmax_slice(&mut d);
        d
    };
    let x11 = descriptor(&x1);
    let x21 = descriptor(&x2);

    let mut logits = vec![0.0; plane];
    for ch in 0..cg {
        let p2 = &x2.data()[ch * plane..(ch + 1) * plane];
        let p1 = &x1.data()[ch * plane..(ch + 1) * plane];
        for (i, l) in logits.iter_mut().enumerate() {
            *l += x11[ch] * p2[i] + x21[ch] * p1[i];
        }
    }
    let attention: Vec<f64> = logits.into_iter().map(sigmoid_scalar).collect();
    let att = Tensor::new(vec![1, 1, h, w], attention.clone())?;
    let y = pointwise(xg, &att, Pointwise::Mul)?;
    Ok((y, EmaGroupTrace { x11, x21, attention }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaaConfig {
    kernel: usize,
    conv_in: ConvSpec,
    band_h: ConvSpec,
    band_v: ConvSpec,
    conv_out: ConvSpec,
    border: Padding,
}

pub const CAA_DEFAULT_KERNEL: usize = 11;
pub const CAA_POOL: usize = 7;

/// Weights for [`CaaConfig::from_weights`]; biases are optional.
#[derive(Debug, Clone, PartialEq)]
pub struct CaaWeights {
    /// `(C, C, 1, 1)`
    pub conv_in: Tensor,
    /// `(C, 1, 1, k)` depthwise
    pub band_h: Tensor,
    /// `(C, 1, k, 1)` depthwise
    pub band_v: Tensor,
    /// `(C, C, 1, 1)`
    pub conv_out: Tensor,
    pub bias_in: Option<Vec<f64>>,
    pub bias_h: Option<Vec<f64>>,
    pub bias_v: Option<Vec<f64>>,
    pub bias_out: Option<Vec<f64>>,
}

impl CaaConfig {
    pub fn from_weights(kernel: usize, weights: CaaWeights) -> Result<Self> {
        if kernel < 3 || kernel % 2 == 0 {
            return Err(Error::InvalidParameter(format!(
                "CAA band kernel must be odd and at least 3, got {kernel}"
            )));
        }
        let c = weights.conv_in.dims().first().copied().unwrap_or(0);
        expect_weight(&weights.conv_in, [c, c, 1, 1], "CAA input 1x1")?;
        expect_weight(&weights.band_h, [c, 1, 1, kernel], "CAA horizontal band")?;
        expect_weight(&weights.band_v, [c, 1, kernel, 1], "CAA vertical band")?;
        expect_weight(&weights.conv_out, [c, c, 1, 1], "CAA output 1x1")?;
        let border = Padding::Replicate;
        let half = kernel / 2;
        Ok(Self {
            kernel,
            conv_in: attach_bias(ConvSpec::new(weights.conv_in, 1)?, weights.bias_in)?,
            band_h: attach_bias(
                ConvSpec::new(weights.band_h, c)?
                    .with_padding(0, half)
                    .with_pad_mode(border),
                weights.bias_h,
            )?,
            band_v: attach_bias(
                ConvSpec::new(weights.band_v, c)?
                    .with_padding(half, 0)
                    .with_pad_mode(border),
                weights.bias_v,
            )?,
            conv_out: attach_bias(ConvSpec::new(weights.conv_out, 1)?, weights.bias_out)?,
            border,
        })
    }

    pub fn random(channels: usize, kernel: usize, rng: &mut SeededRng) -> Result<Self> {
        let weights = CaaWeights {
            conv_in: glorot_conv(channels, channels, 1, 1, 1, rng),
            band_h: glorot_conv(channels, 1, 1, kernel, channels, rng),
            band_v: glorot_conv(channels, 1, kernel, 1, channels, rng),
            conv_out: glorot_conv(channels, channels, 1, 1, 1, rng),
            bias_in: None,
            bias_h: None,
            bias_v: None,
            bias_out: None,
        };
        Self::from_weights(kernel, weights)
    }

    pub fn zeros(channels: usize, kernel: usize) -> Result<Self> {
        let weights = CaaWeights {
            conv_in: Tensor::zeros(&[channels, channels, 1, 1])?,
            band_h: Tensor::zeros(&[channels, 1, 1, kernel])?,
            band_v: Tensor::zeros(&[channels, 1, kernel, 1])?,
            conv_out: Tensor::zeros(&[channels, channels, 1, 1])?,
            bias_in: None,
            bias_h: None,
            bias_v: None,
            bias_out: None,
        };
        Self::from_weights(kernel, weights)
    }

    pub fn with_border(mut self, border: Padding) -> Self {
        self.border = border;
        self.band_h = self.band_h.with_pad_mode(border);
        self.band_v = self.band_v.with_pad_mode(border);
        self
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn channels(&self) -> usize {
        self.conv_in.out_channels()
    }

    pub fn conv_in(&self) -> &ConvSpec {
        &self.conv_in
    }

    pub fn band_h(&self) -> &ConvSpec {
        &self.band_h
    }

    pub fn band_v(&self) -> &ConvSpec {
        &self.band_v
    }

    pub fn conv_out(&self) -> &ConvSpec {
        &self.conv_out
    }

    pub fn border(&self) -> Padding {
        self.border
    }
}

/// The sigmoid gate CAA multiplies into its input; same dims as `x`.
pub fn caa_attention(x: &Tensor, cfg: &CaaConfig) -> Result<Tensor> {
    let (_, c, _, _) = x.nchw()?;
    if c != cfg.channels() {
        return Err(Error::ShapeMismatch(format!(
            "CAA weights expect {} channels, input has {c}",
            cfg.channels()
        )));
    }
    let pooled = pool2d_with(x, PoolKind::Avg, CAA_POOL, 1, CAA_POOL / 2, cfg.border)?;
    let f1 = conv2d(&pooled, &cfg.conv_in)?;
    let f2 = conv2d(&conv2d(&f1, &cfg.band_h)?, &cfg.band_v)?;
    Ok(sigmoid(&conv2d(&f2, &cfg.conv_out)?))
}

pub fn caa_forward(x: &Tensor, cfg: &CaaConfig) -> Result<Tensor> {
    let att = caa_attention(x, cfg)?;
    pointwise(&att, x, Pointwise::Mul)
}

pub fn emca_forward(x: &Tensor, ema: &EmaConfig, caa: &CaaConfig) -> Result<Tensor> {
    caa_forward(&ema_forward(x, ema)?, caa)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_input(dims: [usize; 4], seed: u64) -> Tensor {
        let len = dims.iter().product();
        Tensor::new(dims.to_vec(), SeededRng::new(seed).fill_uniform(len, -1.0, 1.0)).unwrap()
    }

    #[test]
    fn ema_preserves_shape() {
        let mut rng = SeededRng::new(3);
        let cfg = EmaConfig::random(8, default_groups(8), &mut rng).unwrap();
        let x = random_input([1, 8, 4, 4], 1);
        assert_eq!(ema_forward(&x, &cfg).unwrap().dims(), &[1, 8, 4, 4]);
    }

    #[test]
    fn default_group_rule() {
        assert_eq!(default_groups(4), 1);
        assert_eq!(default_groups(8), 8);
        assert_eq!(default_groups(64), 8);
        assert_eq!(default_groups(12), 4);
    }

    #[test]
    fn ema_rejects_bad_grouping() {
        let cfg = EmaConfig::zeros(4, 2).unwrap();
        let x = random_input([1, 6, 2, 2], 1);
        assert!(ema_forward(&x, &cfg).is_err());
        assert!(EmaConfig::zeros(6, 4).is_err());
    }

    #[test]
    fn caa_zero_weights_halve_input() {
        let cfg = CaaConfig::zeros(3, CAA_DEFAULT_KERNEL).unwrap();
        let x = random_input([2, 3, 5, 4], 8);
        let y = caa_forward(&x, &cfg).unwrap();
        let want = x.scale(0.5);
        assert_eq!(y, want);
    }

    #[test]
    fn caa_rejects_even_kernel_and_wrong_channels() {
        assert!(CaaConfig::zeros(3, 4).is_err());
        assert!(CaaConfig::zeros(3, 1).is_err());
        let cfg = CaaConfig::zeros(3, 3).unwrap();
        assert!(caa_forward(&random_input([1, 2, 3, 3], 0), &cfg).is_err());
    }

    #[test]
    fn emca_is_composition() {
        let mut rng = SeededRng::new(11);
        let ema = EmaConfig::random(8, 2, &mut rng).unwrap();
        let caa = CaaConfig::random(8, 5, &mut rng).unwrap();
        let x = random_input([1, 8, 6, 5], 4);
        let composed = caa_forward(&ema_forward(&x, &ema).unwrap(), &caa).unwrap();
        let direct = emca_forward(&x, &ema, &caa).unwrap();
        assert!(composed
            .data()
            .iter()
            .zip(direct.data())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn constant_input_stays_constant() {
        let mut rng = SeededRng::new(5);
        let ema = EmaConfig::random(4, 2, &mut rng).unwrap();
        let caa = CaaConfig::random(4, 5, &mut rng).unwrap();
        let mut data = Vec::new();
        for c in 0..4 {
            data.extend(std::iter::repeat(c as f64 * 0.7 - 1.0).take(30));
        }
        let x = Tensor::new(vec![1, 4, 5, 6], data).unwrap();
        let y = emca_forward(&x, &ema, &caa).unwrap();
        for plane in y.data().chunks_exact(30) {
            let mean = plane.iter().sum::<f64>() / 30.0;
            assert!(plane.iter().all(|v| (v - mean).abs() < 1e-9));
        }
    }

    #[test]
    fn zero_padding_breaks_constancy_at_borders() {
        let mut rng = SeededRng::new(5);
        let caa = CaaConfig::random(2, 3, &mut rng).unwrap().with_border(Padding::Zeros);
        let x = Tensor::full(&[1, 2, 8, 8], 1.0).unwrap();
        let att = caa_attention(&x, &caa).unwrap();
        let plane = &att.data()[..64];
        assert!(plane.iter().any(|v| (v - plane[27]).abs() > 1e-12));
    }

    #[test]
    fn group_softmax_sums_to_one() {
        let mut rng = SeededRng::new(2);
        let cfg = EmaConfig::random(8, 2, &mut rng).unwrap();
        let trace = ema_forward_traced(&random_input([2, 8, 3, 4], 6), &cfg).unwrap();
        assert_eq!(trace.groups.len(), 4);
        for g in &trace.groups {
            assert!((g.x11.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!((g.x21.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(g.attention.iter().all(|&a| a > 0.0 && a < 1.0));
        }
    }

    #[test]
    fn permuting_groups_permutes_output() {
        let mut rng = SeededRng::new(21);
        let cfg = EmaConfig::random(6, 3, &mut rng).unwrap();
        let x = random_input([1, 6, 3, 3], 2);
        let y = ema_forward(&x, &cfg).unwrap();
        let perm = [2usize, 0, 1];
        let parts: Vec<Tensor> = perm.iter().map(|&g| x.channel_slice(g * 2, 2).unwrap()).collect();
        let xp = Tensor::concat_channels(&parts).unwrap();
        let yp = ema_forward(&xp, &cfg).unwrap();
        for (slot, &g) in perm.iter().enumerate() {
            let a = yp.channel_slice(slot * 2, 2).unwrap();
            let b = y.channel_slice(g * 2, 2).unwrap();
            assert_eq!(a, b);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn emca_invariants(
            (c, groups) in (1usize..=12).prop_flat_map(|c| {
                let divisors: Vec<usize> = (1..=c).filter(|g| c % g == 0).collect();
                (Just(c), proptest::sample::select(divisors))
            }),
            h in 1usize..8,
            w in 1usize..8,
            k in proptest::sample::select(vec![3usize, 5, 7]),
            seed in any::<u64>(),
        ) {
            let mut rng = SeededRng::new(seed);
            let ema = EmaConfig::random(c, groups, &mut rng).unwrap();
            let caa = CaaConfig::random(c, k, &mut rng).unwrap();
            let x = random_input([1, c, h, w], seed ^ 1);
            let y = emca_forward(&x, &ema, &caa).unwrap();
            prop_assert_eq!(y.dims(), x.dims());
            prop_assert!(y.data().iter().all(|v| v.is_finite()));

            let att = caa_attention(&ema_forward(&x, &ema).unwrap(), &caa).unwrap();
            prop_assert!(att.data().iter().all(|&a| a > 0.0 && a < 1.0));

            let levels = rng.fill_uniform(c, -2.0, 2.0);
            let flat: Vec<f64> = levels.iter().flat_map(|&v| std::iter::repeat(v).take(h * w)).collect();
            let out = emca_forward(&Tensor::new(vec![1, c, h, w], flat).unwrap(), &ema, &caa).unwrap();
            for plane in out.data().chunks_exact(h * w) {
                prop_assert!(plane.iter().all(|v| (v - plane[0]).abs() < 1e-9));
            }
        }
    }
}
