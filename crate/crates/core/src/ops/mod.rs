//! Convolution and resampling primitives.
//!
//! Every convolution accumulates each output element in the fixed order
//! input channel, kernel row, kernel column, skipping taps that fall into
//! the zero padding. Kernels differ only in how output elements are grouped
//! and traversed, so all schedules produce bit-identical results.

mod direct;
mod parallel;
mod gemm;
mod reference;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::sqrt_f32;
use crate::schedule::Schedule;
use crate::tensor::{Tensor, TensorShape};

/// Batch-norm epsilon.
pub const BN_EPS: f32 = 1e-5;

/// Geometry of a 2-D convolution (or transposed convolution).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvSpec {
    pub in_c: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    /// Extra rows/columns on the high side of a transposed convolution's
    /// output. Always 0 for ordinary convolutions.
    pub output_padding: usize,
}

impl ConvSpec {
    pub fn standard(in_c: usize, out_c: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            in_c,
            out_c,
            kernel,
            stride,
            padding,
            groups: 1,
            output_padding: 0,
        }
    }

    pub fn depthwise(channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            in_c: channels,
            out_c: channels,
            kernel,
            stride,
            padding,
            groups: channels,
            output_padding: 0,
        }
    }

    pub fn pointwise(in_c: usize, out_c: usize) -> Self {
        Self::standard(in_c, out_c, 1, 1, 0)
    }

    /// Stride-`stride` transposed convolution with the given output padding.
    pub fn transposed(
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        output_padding: usize,
    ) -> Self {
        Self {
            output_padding,
            ..Self::standard(in_c, out_c, kernel, stride, padding)
        }
    }

    pub fn is_depthwise(&self) -> bool {
        self.groups > 1 && self.groups == self.in_c && self.groups == self.out_c
    }

    pub fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.groups == 1
    }

    /// Input channels seen by each filter.
    pub fn in_per_group(&self) -> usize {
        self.in_c / self.groups
    }

    pub fn weight_len(&self) -> usize {
        self.out_c * self.in_per_group() * self.kernel * self.kernel
    }

    pub fn weight_dims(&self) -> [usize; 4] {
        [self.out_c, self.in_per_group(), self.kernel, self.kernel]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConv(format!("{msg}: {self:?}")));
        if self.in_c == 0 || self.out_c == 0 || self.groups == 0 {
            return bad("channel counts and groups must be positive");
        }
        if !matches!(self.kernel, 1 | 3 | 5 | 7) {
            return bad("kernel must be 1, 3, 5 or 7");
        }
        if !matches!(self.stride, 1 | 2) {
            return bad("stride must be 1 or 2");
        }
        if self.in_c % self.groups != 0 || self.out_c % self.groups != 0 {
            return bad("channels must be divisible by groups");
        }
        if self.groups != 1 && !self.is_depthwise() {
            return bad("only standard (groups = 1) and depthwise convolutions are supported");
        }
        if self.output_padding >= self.stride.max(1) && self.output_padding != 0 {
            return bad("output padding must be smaller than the stride");
        }
        Ok(())
    }

    /// Output height and width of an ordinary convolution.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        if h + 2 * p < k || w + 2 * p < k {
            return Err(Error::EmptyOutput {
                input: TensorShape { n: 1, c: self.in_c, h, w },
            });
        }
        Ok(((h + 2 * p - k) / s + 1, (w + 2 * p - k) / s + 1))
    }

    /// Output height and width of a transposed convolution:
    /// `(h - 1)·s - 2p + k + output_padding`.
    pub fn transposed_output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (k, s, p, op) = (self.kernel, self.stride, self.padding, self.output_padding);
        let grow = |d: usize| ((d - 1) * s + k + op).checked_sub(2 * p).filter(|&v| v > 0);
        match (grow(h), grow(w)) {
            (Some(oh), Some(ow)) => Ok((oh, ow)),
            _ => Err(Error::EmptyOutput {
                input: TensorShape { n: 1, c: self.in_c, h, w },
            }),
        }
    }
}

/// Inference-time batch-norm statistics, one entry per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

impl BatchNorm {
    pub fn identity(channels: usize) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, channels: usize) -> Result<()> {
        for (name, v) in [
            ("bn_gamma", &self.gamma),
            ("bn_beta", &self.beta),
            ("bn_mean", &self.mean),
            ("bn_var", &self.var),
        ] {
            if v.len() != channels {
                return Err(Error::ParamLength {
                    name: name.into(),
                    expected: channels,
                    actual: v.len(),
                });
            }
        }
        if self.var.iter().any(|&v| !(v + BN_EPS > 0.0)) {
            return Err(Error::InvalidConv("batch-norm variance + eps must be positive".into()));
        }
        Ok(())
    }

    /// Keep only the listed channels.
    pub fn select(&self, keep: &[usize]) -> Self {
        let pick = |v: &[f32]| keep.iter().map(|&i| v[i]).collect();
        Self {
            gamma: pick(&self.gamma),
            beta: pick(&self.beta),
            mean: pick(&self.mean),
            var: pick(&self.var),
        }
    }
}

/// Parameters of one convolution layer. Weights are laid out
/// `[out_c, in_c / groups, k, k]` for ordinary and transposed convolutions.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub weight: Vec<f32>,
    pub bias: Option<Vec<f32>>,
    pub bn: Option<BatchNorm>,
}

impl ConvParams {
    pub fn check(&self, spec: &ConvSpec) -> Result<()> {
        if self.weight.len() != spec.weight_len() {
            return Err(Error::ParamLength {
                name: "weight".into(),
                expected: spec.weight_len(),
                actual: self.weight.len(),
            });
        }
        if let Some(b) = &self.bias {
            if b.len() != spec.out_c {
                return Err(Error::ParamLength {
                    name: "bias".into(),
                    expected: spec.out_c,
                    actual: b.len(),
                });
            }
        }
        if let Some(bn) = &self.bn {
            bn.check(spec.out_c)?;
        }
        Ok(())
    }
}

/// Per-output-channel post-processing applied after accumulation:
/// bias, then batch norm, then optional ReLU.
#[derive(Debug, Clone)]
pub(crate) struct Epilogue {
    bias: Option<Vec<f32>>,
    bn: Option<(Vec<f32>, Vec<f32>, Vec<f32>, Vec<f32>)>,
    relu: bool,
}

impl Epilogue {
    pub(crate) fn new(params: &ConvParams, relu: bool) -> Self {
        Self::from_parts(params.bias.as_deref(), params.bn.as_ref(), relu)
    }

    fn from_parts(bias: Option<&[f32]>, bn: Option<&BatchNorm>, relu: bool) -> Self {
        Self {
            bias: bias.map(|b| b.to_vec()),
            bn: bn.map(|bn| {
                let sd = bn.var.iter().map(|&v| sqrt_f32(v + BN_EPS)).collect();
                (bn.gamma.clone(), bn.beta.clone(), bn.mean.clone(), sd)
            }),
            relu,
        }
    }

    #[inline]
    pub(crate) fn apply(&self, c: usize, acc: f32) -> f32 {
        let mut v = acc;
        if let Some(b) = &self.bias {
            v += b[c];
        }
        if let Some((gamma, beta, mean, sd)) = &self.bn {
            v = gamma[c] * (v - mean[c]) / sd[c] + beta[c];
        }
        if self.relu && v < 0.0 {
            v = 0.0;
        }
        v
    }

    pub(crate) fn apply_slice(&self, c: usize, values: &mut [f32]) {
        for v in values {
            *v = self.apply(c, *v);
        }
    }
}

fn check_input(x: &Tensor, spec: &ConvSpec, params: &ConvParams) -> Result<()> {
    spec.validate()?;
    if x.shape().c != spec.in_c {
        return Err(Error::ChannelMismatch {
            expected: spec.in_c,
            actual: x.shape().c,
        });
    }
    params.check(spec)
}

/// 2-D convolution with fused bias / batch norm / ReLU.
///
/// Output extent per spatial dimension is `floor((d + 2p - k) / s) + 1`.
pub fn conv2d(
    x: &Tensor,
    spec: &ConvSpec,
    params: &ConvParams,
    relu: bool,
    schedule: &Schedule,
) -> Result<Tensor> {
    check_input(x, spec, params)?;
    let s = x.shape();
    let (oh, ow) = spec.output_hw(s.h, s.w)?;
    let out_shape = TensorShape::new(s.n, spec.out_c, oh, ow)?;
    let epi = Epilogue::new(params, relu);
    let schedule = schedule.feasible_or_naive(spec, oh, ow);
    let mut out = Tensor::zeros(out_shape);
    let out_len = spec.out_c * oh * ow;
    for n in 0..s.n {
        let input = &x.data()[n * s.c * s.plane()..(n + 1) * s.c * s.plane()];
        let dst = &mut out.data_mut()[n * out_len..(n + 1) * out_len];
        let geom = Geometry::new(spec, s.h, s.w, oh, ow);
        match schedule.row_tile {
            None if !schedule.vectorize => reference::conv(input, &params.weight, &geom, &epi, dst),
            None => direct::conv_rows(input, &params.weight, &geom, &epi, dst, 1, oh, true),
            Some(rt) if spec.is_depthwise() => direct::conv_rows(
                input,
                &params.weight,
                &geom,
                &epi,
                dst,
                schedule.channel_tile.unwrap_or(1),
                rt,
                schedule.vectorize,
            ),
            Some(rt) => gemm::conv(
                input,
                &params.weight,
                &geom,
                &epi,
                dst,
                rt,
                schedule.channel_tile.unwrap_or(spec.out_c),
                schedule.vectorize,
            ),
        }
    }
    debug_assert!(out.is_finite() || !x.is_finite() || !params.weight.iter().all(|v| v.is_finite()));
    Ok(out)
}

/// Transposed convolution with fused bias / batch norm / ReLU.
///
/// Computed as zero insertion followed by a dense convolution with the
/// spatially flipped kernel and padding `k - 1 - p`; output extent is
/// `(d - 1)·s - 2p + k + output_padding`.
pub fn transpose_conv2d(
    x: &Tensor,
    spec: &ConvSpec,
    params: &ConvParams,
    relu: bool,
    schedule: &Schedule,
) -> Result<Tensor> {
    check_input(x, spec, params)?;
    if spec.groups != 1 {
        return Err(Error::InvalidConv("transposed convolution must have groups = 1".into()));
    }
    if spec.padding >= spec.kernel {
        return Err(Error::InvalidConv(format!(
            "transposed convolution padding must be < kernel: {spec:?}"
        )));
    }
    let s = x.shape();
    let (oh, ow) = spec.transposed_output_hw(s.h, s.w)?;
    let dense = spec.dense_equivalent();
    let flipped = rot180(&params.weight, spec);
    let dilated = dilate(x, spec.stride, spec.output_padding)?;
    let dense_params = ConvParams {
        weight: flipped,
        bias: params.bias.clone(),
        bn: params.bn.clone(),
    };
    if schedule.row_tile.is_none() && !schedule.vectorize {
        // Reference path: gather straight from the undilated input.
        let out_shape = TensorShape::new(s.n, spec.out_c, oh, ow)?;
        let epi = Epilogue::new(&dense_params, relu);
        let mut out = Tensor::zeros(out_shape);
        let out_len = spec.out_c * oh * ow;
        for n in 0..s.n {
            let input = &x.data()[n * s.c * s.plane()..(n + 1) * s.c * s.plane()];
            let dst = &mut out.data_mut()[n * out_len..(n + 1) * out_len];
            reference::transpose_conv(input, &params.weight, spec, s.h, s.w, oh, ow, &epi, dst);
        }
        return Ok(out);
    }
    let out = conv2d(&dilated, &dense, &dense_params, relu, schedule)?;
    debug_assert_eq!((out.shape().h, out.shape().w), (oh, ow));
    Ok(out)
}

impl ConvSpec {
    /// The dense convolution a transposed convolution reduces to after zero
    /// insertion: same channels and kernel, stride 1, padding `k - 1 - p`.
    pub fn dense_equivalent(&self) -> ConvSpec {
        ConvSpec::standard(self.in_c, self.out_c, self.kernel, 1, self.kernel - 1 - self.padding)
    }
}

/// Rotate every `k×k` kernel slice by 180 degrees.
pub fn rot180(weight: &[f32], spec: &ConvSpec) -> Vec<f32> {
    let k = spec.kernel;
    let mut out = vec![0.0; weight.len()];
    for (dst, src) in out.chunks_exact_mut(k * k).zip(weight.chunks_exact(k * k)) {
        for i in 0..k * k {
            dst[i] = src[k * k - 1 - i];
        }
    }
    out
}

/// Zero insertion with factor `stride`, plus `extra` trailing zero
/// rows/columns. Output extent is `(d - 1)·stride + 1 + extra`.
fn dilate(x: &Tensor, stride: usize, extra: usize) -> Result<Tensor> {
    let s = x.shape();
    let (h, w) = ((s.h - 1) * stride + 1 + extra, (s.w - 1) * stride + 1 + extra);
    let mut out = Tensor::zeros(TensorShape::new(s.n, s.c, h, w)?);
    let data = out.data_mut();
    for nc in 0..s.n * s.c {
        let src = &x.data()[nc * s.plane()..(nc + 1) * s.plane()];
        let dst = &mut data[nc * h * w..(nc + 1) * h * w];
        for y in 0..s.h {
            for xx in 0..s.w {
                dst[y * stride * w + xx * stride] = src[y * s.w + xx];
            }
        }
    }
    Ok(out)
}

/// 2×2 unpooling by zero insertion: `x[i, j]` lands at `(2i, 2j)`, every
/// other output position is 0.
pub fn unpool_zero(x: &Tensor) -> Tensor {
    dilate(x, 2, 1).expect("doubling a valid shape stays valid")
}

/// Nearest-neighbour ×2 upsampling: each pixel becomes a 2×2 block.
pub fn interp_nearest_x2(x: &Tensor) -> Tensor {
    let s = x.shape();
    let (h, w) = (2 * s.h, 2 * s.w);
    let shape = TensorShape::new(s.n, s.c, h, w).expect("doubling a valid shape stays valid");
    let mut data = Vec::with_capacity(shape.numel());
    for nc in 0..s.n * s.c {
        let src = &x.data()[nc * s.plane()..(nc + 1) * s.plane()];
        for row in src.chunks_exact(s.w) {
            let start = data.len();
            for &v in row {
                data.push(v);
                data.push(v);
            }
            data.extend_from_within(start..start + w);
        }
    }
    Tensor::new(shape, data).expect("length matches by construction")
}

/// Per-channel `γ·(x − μ)/sqrt(σ² + ε) + β`, then ReLU if requested.
pub fn batchnorm_relu(x: &Tensor, bn: &BatchNorm, relu: bool) -> Result<Tensor> {
    let s = x.shape();
    bn.check(s.c)?;
    let epi = Epilogue::from_parts(None, Some(bn), relu);
    let mut out = x.clone();
    let p = s.plane();
    for (i, plane) in out.data_mut().chunks_exact_mut(p).enumerate() {
        epi.apply_slice(i % s.c, plane);
    }
    Ok(out)
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| if v < 0.0 { 0.0 } else { v })
}

/// Max pooling; padded taps are ignored.
pub fn max_pool(x: &Tensor, kernel: usize, stride: usize, padding: usize) -> Result<Tensor> {
    let s = x.shape();
    if kernel == 0 || stride == 0 || s.h + 2 * padding < kernel || s.w + 2 * padding < kernel {
        return Err(Error::EmptyOutput { input: s });
    }
    let oh = (s.h + 2 * padding - kernel) / stride + 1;
    let ow = (s.w + 2 * padding - kernel) / stride + 1;
    let shape = TensorShape::new(s.n, s.c, oh, ow)?;
    let mut data = Vec::with_capacity(shape.numel());
    for nc in 0..s.n * s.c {
        let src = &x.data()[nc * s.plane()..(nc + 1) * s.plane()];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut m = f32::NEG_INFINITY;
                for ky in 0..kernel {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy >= s.h as isize {
                        continue;
                    }
                    for kx in 0..kernel {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if ix < 0 || ix >= s.w as isize {
                            continue;
                        }
                        m = m.max(src[iy as usize * s.w + ix as usize]);
                    }
                }
                data.push(m);
            }
        }
    }
    Tensor::new(shape, data)
}

/// Resolved convolution geometry shared by the kernels.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Geometry {
    pub in_c: usize,
    pub out_c: usize,
    pub groups: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub h: usize,
    pub w: usize,
    pub oh: usize,
    pub ow: usize,
}

impl Geometry {
    fn new(spec: &ConvSpec, h: usize, w: usize, oh: usize, ow: usize) -> Self {
        Self {
            in_c: spec.in_c,
            out_c: spec.out_c,
            groups: spec.groups,
            k: spec.kernel,
            stride: spec.stride,
            pad: spec.padding,
            h,
            w,
            oh,
            ow,
        }
    }

    pub fn in_per_group(&self) -> usize {
        self.in_c / self.groups
    }

    pub fn out_per_group(&self) -> usize {
        self.out_c / self.groups
    }

    /// Output columns `[lo, hi)` whose tap at kernel column `kx` lands
    /// inside the input row.
    #[inline]
    pub fn valid_cols(&self, kx: usize) -> (usize, usize) {
        valid_range(kx, self.pad, self.stride, self.w, self.ow)
    }

    /// Input row read by output row `oy` at kernel row `ky`, if inside.
    #[inline]
    pub fn input_row(&self, oy: usize, ky: usize) -> Option<usize> {
        (oy * self.stride + ky).checked_sub(self.pad).filter(|&iy| iy < self.h)
    }
}

/// Outputs `o` in `[0, out)` with `0 <= o*stride + tap - pad < extent`.
#[inline]
pub(crate) fn valid_range(tap: usize, pad: usize, stride: usize, extent: usize, out: usize) -> (usize, usize) {
    let lo = if tap >= pad { 0 } else { (pad - tap).div_ceil(stride) };
    let hi = if extent + pad > tap {
        ((extent - 1 + pad - tap) / stride + 1).min(out)
    } else {
        0
    };
    (lo.min(hi), hi)
}
