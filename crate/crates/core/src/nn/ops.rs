use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use super::tensor::{shape_error, Scalar, Shape, Tensor};
use crate::error::{Error, Result};

pub const BN_EPSILON: f32 = 1e-5;
/// Weight of the newest batch in the running-statistics moving average.
pub const BN_MOMENTUM: f32 = 0.1;

/// Same-padded 2-D convolution without bias. Weight layout is
/// `[out_channels, in_channels / groups, kernel, kernel]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub groups: usize,
}

impl ConvSpec {
    pub const fn pointwise(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel: 1,
            stride: 1,
            groups: 1,
        }
    }

    pub const fn depthwise(channels: usize, kernel: usize, stride: usize) -> Self {
        Self {
            in_channels: channels,
            out_channels: channels,
            kernel,
            stride,
            groups: channels,
        }
    }

    pub const fn dense(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            groups: 1,
        }
    }

    pub const fn padding(&self) -> usize {
        self.kernel / 2
    }

    pub const fn weight_len(&self) -> usize {
        self.out_channels * (self.in_channels / self.groups) * self.kernel * self.kernel
    }

    pub const fn fan_in(&self) -> usize {
        (self.in_channels / self.groups) * self.kernel * self.kernel
    }

    pub const fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (h.div_ceil(self.stride), w.div_ceil(self.stride))
    }

    fn validate(&self) -> Result<()> {
        let ok = self.kernel % 2 == 1
            && (self.stride == 1 || self.stride == 2)
            && (self.groups == 1 || (self.groups == self.in_channels && self.groups == self.out_channels));
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfiguration(alloc::format!("unsupported convolution {self:?}")))
        }
    }
}

/// Output indices `o` in `[lo, hi)` whose input tap `o * stride + offset - pad`
/// falls inside `[0, in_len)`.
#[inline]
fn valid_range(offset: usize, pad: usize, stride: usize, in_len: usize, out_len: usize) -> (usize, usize) {
    let lo = if offset >= pad { 0 } else { (pad - offset).div_ceil(stride) };
    if in_len + pad <= offset {
        return (0, 0);
    }
    let hi = ((in_len - 1 + pad - offset) / stride + 1).min(out_len);
    (lo.min(hi), hi)
}

struct Geometry {
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
    k: usize,
    s: usize,
    p: usize,
}

/// `out += conv(input, kernel)` for one input/output plane pair.
#[inline]
fn plane_forward<T: Scalar>(out: &mut [T], input: &[T], kernel: &[T], g: &Geometry) {
    if g.k == 1 && g.s == 1 {
        let wv = kernel[0];
        for (o, &i) in out.iter_mut().zip(input) {
            *o += wv * i;
        }
        return;
    }
    for ky in 0..g.k {
        let (oy0, oy1) = valid_range(ky, g.p, g.s, g.h, g.ho);
        for kx in 0..g.k {
            let wv = kernel[ky * g.k + kx];
            let (ox0, ox1) = valid_range(kx, g.p, g.s, g.w, g.wo);
            if ox0 >= ox1 {
                continue;
            }
            for oy in oy0..oy1 {
                let iy = oy * g.s + ky - g.p;
                let orow = &mut out[oy * g.wo..oy * g.wo + g.wo];
                let irow = &input[iy * g.w..iy * g.w + g.w];
                if g.s == 1 {
                    let shift = ox0 + kx - g.p;
                    for (o, &i) in orow[ox0..ox1].iter_mut().zip(&irow[shift..]) {
                        *o += wv * i;
                    }
                } else {
                    for ox in ox0..ox1 {
                        orow[ox] += wv * irow[ox * g.s + kx - g.p];
                    }
                }
            }
        }
    }
}

/// `dinput += conv^T(dout, kernel)` and `dkernel += correlation(dout, input)`.
#[inline]
#[allow(clippy::needless_range_loop)]
fn plane_backward<T: Scalar>(
    dout: &[T],
    input: &[T],
    kernel: &[T],
    dinput: &mut [T],
    dkernel: &mut [T],
    g: &Geometry,
) {
    if g.k == 1 && g.s == 1 {
        let wv = kernel[0];
        let mut acc = T::zero();
        for ((d, &i), di) in dout.iter().zip(input).zip(dinput.iter_mut()) {
            acc += *d * i;
            *di += wv * *d;
        }
        dkernel[0] += acc;
        return;
    }
    for ky in 0..g.k {
        let (oy0, oy1) = valid_range(ky, g.p, g.s, g.h, g.ho);
        for kx in 0..g.k {
            let wv = kernel[ky * g.k + kx];
            let (ox0, ox1) = valid_range(kx, g.p, g.s, g.w, g.wo);
            if ox0 >= ox1 {
                continue;
            }
            let mut acc = T::zero();
            for oy in oy0..oy1 {
                let iy = oy * g.s + ky - g.p;
                let drow = &dout[oy * g.wo..oy * g.wo + g.wo];
                let irow = iy * g.w;
                for ox in ox0..ox1 {
                    let ix = irow + ox * g.s + kx - g.p;
                    acc += drow[ox] * input[ix];
                    dinput[ix] += wv * drow[ox];
                }
            }
            dkernel[ky * g.k + kx] += acc;
        }
    }
}

fn conv_geometry(x: Shape, spec: &ConvSpec, weight_len: usize) -> Result<Geometry> {
    spec.validate()?;
    if x.c != spec.in_channels {
        return Err(shape_error(
            "conv2d",
            x,
            Shape::new(x.n, spec.in_channels, x.h, x.w),
        ));
    }
    if weight_len != spec.weight_len() {
        return Err(Error::Shape {
            op: "conv2d weight",
            left: alloc::format!("{weight_len} elements"),
            right: alloc::format!("{} elements", spec.weight_len()),
        });
    }
    let (ho, wo) = spec.output_hw(x.h, x.w);
    Ok(Geometry {
        h: x.h,
        w: x.w,
        ho,
        wo,
        k: spec.kernel,
        s: spec.stride,
        p: spec.padding(),
    })
}

pub fn conv2d<T: Scalar>(x: &Tensor<T>, weight: &[T], spec: &ConvSpec) -> Result<Tensor<T>> {
    let xs = x.shape();
    let g = conv_geometry(xs, spec, weight.len())?;
    let mut y = Tensor::zeros(Shape::new(xs.n, spec.out_channels, g.ho, g.wo));
    let cin_g = spec.in_channels / spec.groups;
    let cout_g = spec.out_channels / spec.groups;
    let kk = g.k * g.k;
    for b in 0..xs.n {
        for oc in 0..spec.out_channels {
            let group = oc / cout_g;
            let out = y.plane_mut(b, oc);
            for icl in 0..cin_g {
                let ic = group * cin_g + icl;
                let kernel = &weight[(oc * cin_g + icl) * kk..][..kk];
                plane_forward(out, x.plane(b, ic), kernel, &g);
            }
        }
    }
    Ok(y)
}

/// Returns `(dx, dweight)`.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &[T],
    spec: &ConvSpec,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>)> {
    let xs = x.shape();
    let g = conv_geometry(xs, spec, weight.len())?;
    let expected = Shape::new(xs.n, spec.out_channels, g.ho, g.wo);
    if dy.shape() != expected {
        return Err(shape_error("conv2d backward", dy.shape(), expected));
    }
    let mut dx = Tensor::zeros(xs);
    let mut dw = vec![T::zero(); weight.len()];
    let cin_g = spec.in_channels / spec.groups;
    let cout_g = spec.out_channels / spec.groups;
    let kk = g.k * g.k;
    for b in 0..xs.n {
        for oc in 0..spec.out_channels {
            let group = oc / cout_g;
            let dout = dy.plane(b, oc);
            for icl in 0..cin_g {
                let ic = group * cin_g + icl;
                let widx = (oc * cin_g + icl) * kk;
                plane_backward(
                    dout,
                    x.plane(b, ic),
                    &weight[widx..widx + kk],
                    dx.plane_mut(b, ic),
                    &mut dw[widx..widx + kk],
                    &g,
                );
            }
        }
    }
    Ok((dx, dw))
}

/// Running statistics of one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BnStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

impl BnStats {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// Exponential moving average toward `batch`.
    pub fn update_ema(&mut self, batch: &ChannelStats, momentum: f32) {
        for c in 0..self.channels() {
            let (m, v) = batch.mean_var(c);
            self.mean[c] = (1.0 - momentum) * self.mean[c] + momentum * m as f32;
            self.var[c] = (1.0 - momentum) * self.var[c] + momentum * v as f32;
        }
    }

    pub fn set_from(&mut self, stats: &ChannelStats) {
        for c in 0..self.channels() {
            let (m, v) = stats.mean_var(c);
            self.mean[c] = m as f32;
            self.var[c] = v as f32;
        }
    }
}

/// Per-channel first and second moments accumulated in `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub sum: Vec<f64>,
    pub sum_sq: Vec<f64>,
    pub count: u64,
}

impl ChannelStats {
    pub fn new(channels: usize) -> Self {
        Self {
            sum: vec![0.0; channels],
            sum_sq: vec![0.0; channels],
            count: 0,
        }
    }

    pub fn merge(&mut self, other: &ChannelStats) {
        for c in 0..self.sum.len() {
            self.sum[c] += other.sum[c];
            self.sum_sq[c] += other.sum_sq[c];
        }
        self.count += other.count;
    }

    /// Mean and biased variance of channel `c`.
    pub fn mean_var(&self, c: usize) -> (f64, f64) {
        let n = self.count.max(1) as f64;
        let mean = self.sum[c] / n;
        let var = (self.sum_sq[c] / n - mean * mean).max(0.0);
        (mean, var)
    }
}

pub fn channel_stats<T: Scalar>(x: &Tensor<T>) -> ChannelStats {
    let s = x.shape();
    let mut stats = ChannelStats::new(s.c);
    for b in 0..s.n {
        for c in 0..s.c {
            let (mut sum, mut sq) = (0.0f64, 0.0f64);
            for &v in x.plane(b, c) {
                let v = v.as_f64();
                sum += v;
                sq += v * v;
            }
            stats.sum[c] += sum;
            stats.sum_sq[c] += sq;
        }
    }
    stats.count = (s.n * s.plane()) as u64;
    stats
}

/// Saved normalized activations for the training-mode backward pass.
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
}

fn check_channels(op: &'static str, x: Shape, len: usize) -> Result<()> {
    if x.c != len {
        return Err(shape_error(op, x, Shape::new(x.n, len, x.h, x.w)));
    }
    Ok(())
}

/// Normalizes with the statistics of the batch itself. Returns the output,
/// the backward cache and the batch statistics.
pub fn batch_norm_train<T: Scalar>(
    x: &Tensor<T>,
    scale: &[T],
    shift: &[T],
    eps: T,
) -> Result<(Tensor<T>, BnCache<T>, ChannelStats)> {
    let s = x.shape();
    check_channels("batch_norm", s, scale.len())?;
    check_channels("batch_norm", s, shift.len())?;
    let stats = channel_stats(x);
    let mut xhat = Tensor::zeros(s);
    let mut y = Tensor::zeros(s);
    let mut inv_std = Vec::with_capacity(s.c);
    for c in 0..s.c {
        let (mean, var) = stats.mean_var(c);
        let istd = T::from_f64_lossy(1.0 / Float::sqrt(var + eps.as_f64()));
        let mean = T::from_f64_lossy(mean);
        inv_std.push(istd);
        for b in 0..s.n {
            let src = x.plane(b, c);
            for (d, &v) in xhat.plane_mut(b, c).iter_mut().zip(src) {
                *d = (v - mean) * istd;
            }
            for (d, &v) in y.plane_mut(b, c).iter_mut().zip(xhat.plane(b, c)) {
                *d = v * scale[c] + shift[c];
            }
        }
    }
    Ok((y, BnCache { xhat, inv_std }, stats))
}

/// Returns `(dx, dscale, dshift)`.
pub fn batch_norm_train_backward<T: Scalar>(
    cache: &BnCache<T>,
    scale: &[T],
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    let s = dy.shape();
    if s != cache.xhat.shape() {
        return Err(shape_error("batch_norm backward", s, cache.xhat.shape()));
    }
    let m = T::from_usize(s.n * s.plane()).unwrap_or_else(T::one);
    let mut dx = Tensor::zeros(s);
    let mut dscale = vec![T::zero(); s.c];
    let mut dshift = vec![T::zero(); s.c];
    for c in 0..s.c {
        let (mut sum_dy, mut sum_dy_xhat) = (T::zero(), T::zero());
        for b in 0..s.n {
            for (&d, &xh) in dy.plane(b, c).iter().zip(cache.xhat.plane(b, c)) {
                sum_dy += d;
                sum_dy_xhat += d * xh;
            }
        }
        dscale[c] = sum_dy_xhat;
        dshift[c] = sum_dy;
        let k = scale[c] * cache.inv_std[c] / m;
        for b in 0..s.n {
            let xh = cache.xhat.plane(b, c);
            let d = dy.plane(b, c);
            for ((o, &dv), &xv) in dx.plane_mut(b, c).iter_mut().zip(d).zip(xh) {
                *o = k * (m * dv - sum_dy - xv * sum_dy_xhat);
            }
        }
    }
    Ok((dx, dscale, dshift))
}

/// Normalizes with stored running statistics.
pub fn batch_norm_eval<T: Scalar>(
    x: &Tensor<T>,
    scale: &[T],
    shift: &[T],
    stats: &BnStats,
    eps: T,
) -> Result<Tensor<T>> {
    let s = x.shape();
    check_channels("batch_norm", s, scale.len())?;
    check_channels("batch_norm", s, stats.channels())?;
    let mut y = Tensor::zeros(s);
    for c in 0..s.c {
        let istd = T::from_f64_lossy(1.0 / Float::sqrt(stats.var[c] as f64 + eps.as_f64()));
        let mean = T::from_f64_lossy(stats.mean[c] as f64);
        let a = scale[c] * istd;
        let bias = shift[c] - mean * a;
        for b in 0..s.n {
            for (o, &v) in y.plane_mut(b, c).iter_mut().zip(x.plane(b, c)) {
                *o = v * a + bias;
            }
        }
    }
    Ok(y)
}

/// NaN passes through unchanged.
pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v < T::zero() { T::zero() } else { v })
}

/// Gradient of ReLU given the forward input `x`.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
    if x.shape() != dy.shape() {
        return Err(shape_error("relu backward", x.shape(), dy.shape()));
    }
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&v, &d)| if v > T::zero() { d } else { T::zero() })
        .collect();
    Tensor::from_vec(x.shape(), data)
}

/// Splits channels into `[0, at)` and `[at, c)`.
pub fn channel_split<T: Scalar>(x: &Tensor<T>, at: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let s = x.shape();
    if at > s.c {
        return Err(shape_error("channel_split", s, Shape::new(s.n, at, s.h, s.w)));
    }
    let p = s.plane();
    let mut a = Vec::with_capacity(s.n * at * p);
    let mut b = Vec::with_capacity(s.n * (s.c - at) * p);
    for n in 0..s.n {
        let row = x.sample(n);
        a.extend_from_slice(&row[..at * p]);
        b.extend_from_slice(&row[at * p..]);
    }
    Ok((
        Tensor::from_vec(Shape::new(s.n, at, s.h, s.w), a)?,
        Tensor::from_vec(Shape::new(s.n, s.c - at, s.h, s.w), b)?,
    ))
}

pub fn channel_concat<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.n != sb.n || sa.h != sb.h || sa.w != sb.w {
        return Err(shape_error("channel_concat", sa, sb));
    }
    let mut data = Vec::with_capacity(a.len() + b.len());
    for n in 0..sa.n {
        data.extend_from_slice(a.sample(n));
        data.extend_from_slice(b.sample(n));
    }
    Tensor::from_vec(Shape::new(sa.n, sa.c + sb.c, sa.h, sa.w), data)
}

/// Splits the upstream gradient back into the two concatenated parts.
pub fn channel_concat_backward<T: Scalar>(
    dy: &Tensor<T>,
    first_channels: usize,
) -> Result<(Tensor<T>, Tensor<T>)> {
    channel_split(dy, first_channels)
}

fn shuffle_impl<T: Scalar>(x: &Tensor<T>, groups: usize, inverse: bool) -> Result<Tensor<T>> {
    let s = x.shape();
    if groups == 0 || !s.c.is_multiple_of(groups) {
        return Err(Error::InvalidConfiguration(alloc::format!(
            "channel_shuffle: {} channels not divisible into {groups} groups",
            s.c
        )));
    }
    let per = s.c / groups;
    let mut y = Tensor::zeros(s);
    for n in 0..s.n {
        for g in 0..groups {
            for j in 0..per {
                let (src, dst) = (g * per + j, j * groups + g);
                let (src, dst) = if inverse { (dst, src) } else { (src, dst) };
                y.plane_mut(n, dst).copy_from_slice(x.plane(n, src));
            }
        }
    }
    Ok(y)
}

/// Interleaves `groups` channel groups: output channel `j * groups + g`
/// takes input channel `g * (c / groups) + j`.
pub fn channel_shuffle<T: Scalar>(x: &Tensor<T>, groups: usize) -> Result<Tensor<T>> {
    shuffle_impl(x, groups, false)
}

pub fn channel_shuffle_backward<T: Scalar>(dy: &Tensor<T>, groups: usize) -> Result<Tensor<T>> {
    shuffle_impl(dy, groups, true)
}

/// Same-padded max pooling; padding never wins. Returns the output and the
/// flat input index selected for every output element.
pub fn max_pool<T: Scalar>(x: &Tensor<T>, kernel: usize, stride: usize) -> Result<(Tensor<T>, Vec<usize>)> {
    let s = x.shape();
    if kernel.is_multiple_of(2) || stride == 0 {
        return Err(Error::InvalidConfiguration(alloc::format!(
            "max_pool kernel {kernel} stride {stride}"
        )));
    }
    let p = kernel / 2;
    let (ho, wo) = (s.h.div_ceil(stride), s.w.div_ceil(stride));
    let mut y = Tensor::zeros(Shape::new(s.n, s.c, ho, wo));
    let mut arg = Vec::with_capacity(y.len());
    let plane = s.plane();
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * plane;
            let src = x.plane(n, c);
            let out = y.plane_mut(n, c);
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = T::neg_infinity();
                    let mut best_idx = 0;
                    for ky in 0..kernel {
                        let iy = (oy * stride + ky) as isize - p as isize;
                        if iy < 0 || iy >= s.h as isize {
                            continue;
                        }
                        for kx in 0..kernel {
                            let ix = (ox * stride + kx) as isize - p as isize;
                            if ix < 0 || ix >= s.w as isize {
                                continue;
                            }
                            let idx = iy as usize * s.w + ix as usize;
                            if src[idx] > best {
                                best = src[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out[oy * wo + ox] = best;
                    arg.push(base + best_idx);
                }
            }
        }
    }
    Ok((y, arg))
}

pub fn max_pool_backward<T: Scalar>(input_shape: Shape, argmax: &[usize], dy: &Tensor<T>) -> Result<Tensor<T>> {
    if argmax.len() != dy.len() {
        return Err(shape_error("max_pool backward", input_shape, dy.shape()));
    }
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&i, &g) in argmax.iter().zip(dy.data()) {
        d[i] += g;
    }
    Ok(dx)
}

/// `[n, c, h, w] -> [n, c]`.
pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let inv = T::one() / T::from_usize(s.plane()).unwrap_or_else(T::one);
    let mut y = Tensor::zeros(Shape::matrix(s.n, s.c));
    for n in 0..s.n {
        for c in 0..s.c {
            let sum: T = x.plane(n, c).iter().copied().sum();
            y.data_mut()[n * s.c + c] = sum * inv;
        }
    }
    y
}

pub fn global_avg_pool_backward<T: Scalar>(input_shape: Shape, dy: &Tensor<T>) -> Result<Tensor<T>> {
    let expected = Shape::matrix(input_shape.n, input_shape.c);
    if dy.shape() != expected {
        return Err(shape_error("global_avg_pool backward", dy.shape(), expected));
    }
    let inv = T::one() / T::from_usize(input_shape.plane()).unwrap_or_else(T::one);
    let mut dx = Tensor::zeros(input_shape);
    for n in 0..input_shape.n {
        for c in 0..input_shape.c {
            let g = dy.data()[n * input_shape.c + c] * inv;
            dx.plane_mut(n, c).iter_mut().for_each(|v| *v = g);
        }
    }
    Ok(dx)
}

/// `y = x W^T + b` with `W` stored as `[out, in]`.
pub fn fully_connected<T: Scalar>(x: &Tensor<T>, weight: &[T], bias: &[T]) -> Result<Tensor<T>> {
    let s = x.shape();
    let fin = s.c * s.plane();
    let out = bias.len();
    if weight.len() != out * fin {
        return Err(shape_error("fully_connected", s, Shape::matrix(s.n, weight.len() / out.max(1))));
    }
    let mut y = Tensor::zeros(Shape::matrix(s.n, out));
    for n in 0..s.n {
        let row = x.sample(n);
        for o in 0..out {
            let w = &weight[o * fin..(o + 1) * fin];
            let dot: T = w.iter().zip(row).map(|(&a, &b)| a * b).sum();
            y.data_mut()[n * out + o] = dot + bias[o];
        }
    }
    Ok(y)
}

/// Returns `(dx, dweight, dbias)`.
pub fn fully_connected_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &[T],
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    let s = x.shape();
    let fin = s.c * s.plane();
    let out = dy.shape().c;
    if dy.shape() != Shape::matrix(s.n, out) || weight.len() != out * fin {
        return Err(shape_error("fully_connected backward", s, dy.shape()));
    }
    let mut dx = Tensor::zeros(s);
    let mut dw = vec![T::zero(); weight.len()];
    let mut db = vec![T::zero(); out];
    for n in 0..s.n {
        let row = x.sample(n);
        for o in 0..out {
            let g = dy.data()[n * out + o];
            db[o] += g;
            let w = &weight[o * fin..(o + 1) * fin];
            for (d, &xv) in dw[o * fin..(o + 1) * fin].iter_mut().zip(row) {
                *d += g * xv;
            }
            for (d, &wv) in dx.data_mut()[n * fin..(n + 1) * fin].iter_mut().zip(w) {
                *d += g * wv;
            }
        }
    }
    Ok((dx, dw, db))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Shape, data: &[f32]) -> Tensor<f32> {
        Tensor::from_vec(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn relu_backward_masks_negative_inputs() {
        let x = t(Shape::matrix(1, 2), &[-1.0, 2.0]);
        let dy = t(Shape::matrix(1, 2), &[1.0, 1.0]);
        assert_eq!(relu_backward(&x, &dy).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn shuffle_twice_on_four_channels_is_identity() {
        let x = t(Shape::new(1, 4, 1, 1), &[0.0, 1.0, 2.0, 3.0]);
        let once = channel_shuffle(&x, 2).unwrap();
        assert_eq!(once.data(), &[0.0, 2.0, 1.0, 3.0]);
        assert_eq!(channel_shuffle(&once, 2).unwrap(), x);
    }

    #[test]
    fn shuffle_backward_inverts_forward() {
        let data: Vec<f32> = (0..2 * 6 * 2 * 2).map(|v| v as f32).collect();
        let x = t(Shape::new(2, 6, 2, 2), &data);
        let y = channel_shuffle(&x, 2).unwrap();
        assert_eq!(channel_shuffle_backward(&y, 2).unwrap(), x);
        let mut sorted: Vec<f32> = y.data().to_vec();
        sorted.sort_by(f32::total_cmp);
        assert_eq!(sorted, data);
    }

    #[test]
    fn conv_shape_errors_name_both_shapes() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 3, 4, 4));
        let spec = ConvSpec::pointwise(4, 2);
        let err = conv2d(&x, &[0.0; 8], &spec).unwrap_err();
        match err {
            Error::Shape { left, right, .. } => {
                assert_eq!(left, "[1, 3, 4, 4]");
                assert_eq!(right, "[1, 4, 4, 4]");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn pointwise_conv_matches_direct_formula() {
        let x = t(Shape::new(1, 2, 1, 2), &[1.0, 2.0, 3.0, 4.0]);
        let w = [1.0, 10.0, -1.0, 0.5];
        let y = conv2d(&x, &w, &ConvSpec::pointwise(2, 2)).unwrap();
        assert_eq!(y.data(), &[31.0, 42.0, 0.5, 0.0]);
    }

    #[test]
    fn stride_two_halves_extent_rounding_up() {
        let x = Tensor::<f32>::filled(Shape::new(1, 2, 5, 5), 1.0);
        let spec = ConvSpec::depthwise(2, 3, 2);
        let y = conv2d(&x, &[1.0; 18], &spec).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 2, 3, 3));
        // corner taps see 2x2 of the input, centre sees 3x3
        assert_eq!(y.plane(0, 0), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn bn_constant_input_statistics() {
        let x = Tensor::<f32>::filled(Shape::new(4, 2, 3, 3), 2.5);
        let stats = channel_stats(&x);
        for c in 0..2 {
            let (m, v) = stats.mean_var(c);
            assert!((m - 2.5).abs() < 1e-12);
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn max_pool_ignores_padding() {
        let x = t(Shape::new(1, 1, 2, 2), &[-4.0, -3.0, -2.0, -1.0]);
        let (y, arg) = max_pool(&x, 3, 2).unwrap();
        assert_eq!(y.data(), &[-1.0]);
        assert_eq!(arg, vec![3]);
    }

    #[test]
    fn non_finite_detection() {
        let x = t(Shape::matrix(1, 2), &[1.0, f32::NAN]);
        assert!(matches!(x.check_finite("probe"), Err(Error::NonFinite(_))));
    }
}
