//! Layer specifications, shape inference, and the per-layer forward/backward kernels.

use crate::error::{Error, Result};
use crate::tensor::{check_slope, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Output spatial size is `ceil(input / stride)`.
    Same,
    /// No padding; the kernel stays inside the input.
    Valid,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
}

impl Activation {
    fn slope(self) -> f64 {
        match self {
            Activation::Relu => 0.0,
            Activation::LeakyRelu(s) => s,
        }
    }
}

/// Declarative description of one layer. Shapes are per sample; the batch
/// dimension is implicit.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    Conv2d {
        out_channels: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: Padding,
    },
    /// Transposed convolution. `output` pins the spatial output size; when
    /// absent it is `input * stride` (same) or `(input - 1) * stride + kernel` (valid).
    Deconv2d {
        out_channels: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: Padding,
        output: Option<(usize, usize)>,
    },
    MaxPool2d {
        window: (usize, usize),
        stride: (usize, usize),
    },
    /// Fully connected; flattens its input.
    Dense { units: usize },
    /// Per-channel (rank-3 input) or per-feature (rank-1 input) batch normalization.
    BatchNorm,
    Activation(Activation),
    Reshape { shape: Vec<usize> },
}

impl LayerSpec {
    pub fn conv(out_channels: usize, kernel: usize, stride: usize, padding: Padding) -> Self {
        LayerSpec::Conv2d {
            out_channels,
            kernel: (kernel, kernel),
            stride: (stride, stride),
            padding,
        }
    }

    pub fn deconv(out_channels: usize, kernel: usize, stride: usize, output: Option<(usize, usize)>) -> Self {
        LayerSpec::Deconv2d {
            out_channels,
            kernel: (kernel, kernel),
            stride: (stride, stride),
            padding: Padding::Same,
            output,
        }
    }

    pub fn max_pool(window: (usize, usize), stride: (usize, usize)) -> Self {
        LayerSpec::MaxPool2d { window, stride }
    }

    pub fn dense(units: usize) -> Self {
        LayerSpec::Dense { units }
    }

    pub fn relu() -> Self {
        LayerSpec::Activation(Activation::Relu)
    }

    pub fn lrelu(slope: f64) -> Self {
        LayerSpec::Activation(Activation::LeakyRelu(slope))
    }

    pub fn reshape(shape: &[usize]) -> Self {
        LayerSpec::Reshape {
            shape: shape.to_vec(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Deconv2d { .. } => "deconv2d",
            LayerSpec::MaxPool2d { .. } => "maxpool2d",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::BatchNorm => "batchnorm",
            LayerSpec::Activation(Activation::Relu) => "relu",
            LayerSpec::Activation(Activation::LeakyRelu(_)) => "lrelu",
            LayerSpec::Reshape { .. } => "reshape",
        }
    }
}

/// Output spatial size of a convolution along one axis.
pub fn conv_output_size(input: usize, kernel: usize, stride: usize, padding: Padding) -> Option<usize> {
    if kernel == 0 || stride == 0 || input == 0 {
        return None;
    }
    match padding {
        Padding::Same => Some(input.div_ceil(stride)),
        Padding::Valid if input >= kernel => Some((input - kernel) / stride + 1),
        Padding::Valid => None,
    }
}

/// Geometry of a 2-D convolution mapping `in_*` to `out_*`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct ConvGeom {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeom {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        in_c: usize,
        in_h: usize,
        in_w: usize,
        out_c: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: Padding,
    ) -> Option<Self> {
        let (kh, kw) = kernel;
        let (sh, sw) = stride;
        let out_h = conv_output_size(in_h, kh, sh, padding)?;
        let out_w = conv_output_size(in_w, kw, sw, padding)?;
        let (pad_top, pad_left) = match padding {
            Padding::Same => (
                ((out_h - 1) * sh + kh).saturating_sub(in_h) / 2,
                ((out_w - 1) * sw + kw).saturating_sub(in_w) / 2,
            ),
            Padding::Valid => (0, 0),
        };
        Some(ConvGeom {
            in_c,
            in_h,
            in_w,
            out_c,
            out_h,
            out_w,
            kh,
            kw,
            sh,
            sw,
            pad_top,
            pad_left,
        })
    }

    /// Rows of the column matrix.
    pub fn k(&self) -> usize {
        self.in_c * self.kh * self.kw
    }

    /// Output positions (columns of the column matrix).
    pub fn p(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn in_len(&self) -> usize {
        self.in_c * self.in_h * self.in_w
    }

    pub fn out_len(&self) -> usize {
        self.out_c * self.p()
    }

    /// Output positions `lo..hi` along one axis whose input index
    /// `o * s + k - pad` falls inside `0..limit`.
    fn valid_range(out: usize, k: usize, s: usize, pad: usize, limit: usize) -> (usize, usize) {
        let lo = if pad > k { (pad - k).div_ceil(s) } else { 0 };
        let hi = if limit + pad > k {
            ((limit + pad - k - 1) / s + 1).min(out)
        } else {
            0
        };
        (lo.min(hi), hi)
    }

    pub fn im2col(&self, x: &[f64], col: &mut [f64]) {
        self.im2col_strided(x, col, self.p(), 0);
    }

    /// Write the column matrix of one sample into columns
    /// `offset..offset + p` of a row-major matrix with `ld` columns.
    pub fn im2col_strided(&self, x: &[f64], col: &mut [f64], ld: usize, offset: usize) {
        let (ow, sw) = (self.out_w, self.sw);
        for c in 0..self.in_c {
            for ky in 0..self.kh {
                let (ylo, yhi) = Self::valid_range(self.out_h, ky, self.sh, self.pad_top, self.in_h);
                for kx in 0..self.kw {
                    let (xlo, xhi) = Self::valid_range(ow, kx, sw, self.pad_left, self.in_w);
                    let row = ((c * self.kh + ky) * self.kw + kx) * ld + offset;
                    for oy in 0..self.out_h {
                        let dst = &mut col[row + oy * ow..row + (oy + 1) * ow];
                        if oy < ylo || oy >= yhi || xlo >= xhi {
                            dst.fill(0.0);
                            continue;
                        }
                        let iy = oy * self.sh + ky - self.pad_top;
                        let src = &x[(c * self.in_h + iy) * self.in_w..][..self.in_w];
                        dst[..xlo].fill(0.0);
                        dst[xhi..].fill(0.0);
                        let ix0 = xlo * sw + kx - self.pad_left;
                        if sw == 1 {
                            dst[xlo..xhi].copy_from_slice(&src[ix0..ix0 + (xhi - xlo)]);
                        } else {
                            for (j, d) in dst[xlo..xhi].iter_mut().enumerate() {
                                *d = src[ix0 + j * sw];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Scatter-add a column matrix back onto an image (adjoint of `im2col`).
    pub fn col2im(&self, col: &[f64], x: &mut [f64]) {
        self.col2im_strided(col, x, self.p(), 0);
    }

    pub fn col2im_strided(&self, col: &[f64], x: &mut [f64], ld: usize, offset: usize) {
        let (ow, sw) = (self.out_w, self.sw);
        for c in 0..self.in_c {
            for ky in 0..self.kh {
                let (ylo, yhi) = Self::valid_range(self.out_h, ky, self.sh, self.pad_top, self.in_h);
                for kx in 0..self.kw {
                    let (xlo, xhi) = Self::valid_range(ow, kx, sw, self.pad_left, self.in_w);
                    if xlo >= xhi {
                        continue;
                    }
                    let row = ((c * self.kh + ky) * self.kw + kx) * ld + offset;
                    let ix0 = xlo * sw + kx - self.pad_left;
                    for oy in ylo..yhi {
                        let iy = oy * self.sh + ky - self.pad_top;
                        let src = &col[row + oy * ow + xlo..row + oy * ow + xhi];
                        let dst = &mut x[(c * self.in_h + iy) * self.in_w..][..self.in_w];
                        for (j, v) in src.iter().enumerate() {
                            dst[ix0 + j * sw] += v;
                        }
                    }
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct PoolGeom {
    pub c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub ph: usize,
    pub pw: usize,
    pub sh: usize,
    pub sw: usize,
}

/// Resolved layer operation with the geometry needed by the kernels.
#[derive(Clone, Debug)]
pub(crate) enum Op {
    Conv(ConvGeom),
    /// Stored as the geometry of the forward convolution it transposes
    /// (deconv output -> deconv input).
    Deconv(ConvGeom),
    Pool(PoolGeom),
    Dense { fan_in: usize, fan_out: usize },
    BatchNorm {
        channels: usize,
        spatial: usize,
        running_mean: Vec<f64>,
        running_var: Vec<f64>,
    },
    Act(Activation),
    Reshape,
}

pub const BATCHNORM_MOMENTUM: f64 = 0.9;
pub const BATCHNORM_EPS: f64 = 1e-5;

/// Shape of a learnable parameter and its role.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamKind {
    Weight,
    Bias,
    Scale,
    Shift,
}

impl ParamKind {
    pub fn label(self) -> &'static str {
        match self {
            ParamKind::Weight => "w",
            ParamKind::Bias => "b",
            ParamKind::Scale => "gamma",
            ParamKind::Shift => "beta",
        }
    }
}

fn dims3(shape: &[usize], layer: &str) -> Result<(usize, usize, usize)> {
    match *shape {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::Config(format!(
            "{layer}: expected a [channels, height, width] input, got {shape:?}"
        ))),
    }
}

/// Resolve a spec against an input shape: the op, its output shape, and the
/// shapes of its parameters.
pub(crate) fn resolve(
    spec: &LayerSpec,
    in_shape: &[usize],
    name: &str,
) -> Result<(Op, Vec<usize>, Vec<(ParamKind, Vec<usize>)>)> {
    let bad = |what: String| Error::Config(format!("{name}: {what}"));
    let positive = |v: (usize, usize), what: &str| -> Result<()> {
        if v.0 == 0 || v.1 == 0 {
            Err(bad(format!("{what} must be at least 1, got {v:?}")))
        } else {
            Ok(())
        }
    };
    match spec {
        LayerSpec::Conv2d {
            out_channels,
            kernel,
            stride,
            padding,
        } => {
            positive(*kernel, "kernel")?;
            positive(*stride, "stride")?;
            if *out_channels == 0 {
                return Err(bad("output channels must be positive".into()));
            }
            let (c, h, w) = dims3(in_shape, name)?;
            let g = ConvGeom::new(c, h, w, *out_channels, *kernel, *stride, *padding).ok_or_else(|| {
                bad(format!("kernel {kernel:?} does not fit input {h}x{w} with {padding:?} padding"))
            })?;
            Ok((
                Op::Conv(g),
                vec![g.out_c, g.out_h, g.out_w],
                vec![
                    (ParamKind::Weight, vec![g.out_c, c, kernel.0, kernel.1]),
                    (ParamKind::Bias, vec![g.out_c]),
                ],
            ))
        }
        LayerSpec::Deconv2d {
            out_channels,
            kernel,
            stride,
            padding,
            output,
        } => {
            positive(*kernel, "kernel")?;
            positive(*stride, "stride")?;
            if *out_channels == 0 {
                return Err(bad("output channels must be positive".into()));
            }
            let (c, h, w) = dims3(in_shape, name)?;
            let (oh, ow) = match (output, padding) {
                (Some(o), _) => *o,
                (None, Padding::Same) => (h * stride.0, w * stride.1),
                (None, Padding::Valid) => ((h - 1) * stride.0 + kernel.0, (w - 1) * stride.1 + kernel.1),
            };
            let g = ConvGeom::new(*out_channels, oh, ow, c, *kernel, *stride, *padding)
                .filter(|g| g.out_h == h && g.out_w == w)
                .ok_or_else(|| {
                    bad(format!(
                        "cannot transpose-convolve {h}x{w} to {oh}x{ow} with kernel {kernel:?}, stride {stride:?}"
                    ))
                })?;
            Ok((
                Op::Deconv(g),
                vec![*out_channels, oh, ow],
                vec![
                    (ParamKind::Weight, vec![c, *out_channels, kernel.0, kernel.1]),
                    (ParamKind::Bias, vec![*out_channels]),
                ],
            ))
        }
        LayerSpec::MaxPool2d { window, stride } => {
            positive(*window, "pool window")?;
            positive(*stride, "pool stride")?;
            let (c, h, w) = dims3(in_shape, name)?;
            let out_h = conv_output_size(h, window.0, stride.0, Padding::Valid);
            let out_w = conv_output_size(w, window.1, stride.1, Padding::Valid);
            let (Some(out_h), Some(out_w)) = (out_h, out_w) else {
                return Err(bad(format!("pool window {window:?} larger than input {h}x{w}")));
            };
            Ok((
                Op::Pool(PoolGeom {
                    c,
                    in_h: h,
                    in_w: w,
                    out_h,
                    out_w,
                    ph: window.0,
                    pw: window.1,
                    sh: stride.0,
                    sw: stride.1,
                }),
                vec![c, out_h, out_w],
                vec![],
            ))
        }
        LayerSpec::Dense { units } => {
            if *units == 0 {
                return Err(bad("dense layer needs at least one unit".into()));
            }
            let fan_in: usize = in_shape.iter().product();
            Ok((
                Op::Dense {
                    fan_in,
                    fan_out: *units,
                },
                vec![*units],
                vec![
                    (ParamKind::Weight, vec![*units, fan_in]),
                    (ParamKind::Bias, vec![*units]),
                ],
            ))
        }
        LayerSpec::BatchNorm => {
            let channels = in_shape[0];
            let spatial = in_shape[1..].iter().product();
            Ok((
                Op::BatchNorm {
                    channels,
                    spatial,
                    running_mean: vec![0.0; channels],
                    running_var: vec![1.0; channels],
                },
                in_shape.to_vec(),
                vec![(ParamKind::Scale, vec![channels]), (ParamKind::Shift, vec![channels])],
            ))
        }
        LayerSpec::Activation(a) => {
            if let Activation::LeakyRelu(s) = a {
                check_slope(*s).map_err(|e| bad(e.to_string()))?;
            }
            Ok((Op::Act(*a), in_shape.to_vec(), vec![]))
        }
        LayerSpec::Reshape { shape } => {
            let n: usize = shape.iter().product();
            let m: usize = in_shape.iter().product();
            if n != m || shape.contains(&0) {
                return Err(bad(format!("cannot reshape {in_shape:?} into {shape:?}")));
            }
            Ok((Op::Reshape, shape.clone(), vec![]))
        }
    }
}

/// Data retained by a forward pass for the matching backward pass.
#[derive(Clone, Debug, Default)]
pub(crate) enum Cache {
    #[default]
    Empty,
    /// Batch im2col matrix `[k, n * p]` for convolution.
    Cols(Vec<f64>),
    Input(Tensor),
    Argmax(Vec<usize>),
    BatchNorm {
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        training: bool,
    },
}

/// Batch statistics produced by a training-mode batch-norm forward pass.
pub(crate) struct BnStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    c: &mut [f64],
    beta: f64,
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths are checked above and the strides describe
    // dense row-major (or transposed) matrices inside those slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Forward kernel. Pure: returns the output, the backward cache, and (for
/// training-mode batch norm) the batch statistics.
pub(crate) fn forward(
    op: &Op,
    params: &[&Tensor],
    x: &Tensor,
    out_shape: &[usize],
    training: bool,
) -> (Tensor, Cache, Option<BnStats>) {
    let n = x.batch();
    let mut shape = vec![n];
    shape.extend_from_slice(out_shape);
    match op {
        Op::Conv(g) => {
            let (w, b) = (params[0].data(), params[1].data());
            let (k, p) = (g.k(), g.p());
            let ld = n * p;
            let mut cols = vec![0.0; k * ld];
            for i in 0..n {
                g.im2col_strided(x.sample(i), &mut cols, ld, i * p);
            }
            let mut prod = vec![0.0; g.out_c * ld];
            gemm(g.out_c, k, ld, w, false, &cols, false, &mut prod, 0.0);
            let mut y = vec![0.0; n * g.out_len()];
            for oc in 0..g.out_c {
                for i in 0..n {
                    let src = &prod[oc * ld + i * p..oc * ld + (i + 1) * p];
                    let dst = &mut y[(i * g.out_c + oc) * p..(i * g.out_c + oc + 1) * p];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d = s + b[oc];
                    }
                }
            }
            (Tensor::new(&shape, y).unwrap(), Cache::Cols(cols), None)
        }
        Op::Deconv(g) => {
            // g maps deconv output (in_*) to deconv input (out_*).
            let (w, b) = (params[0].data(), params[1].data());
            let (k, p) = (g.k(), g.p());
            let mut col = vec![0.0; k * p];
            let mut y = vec![0.0; n * g.in_len()];
            let plane = g.in_h * g.in_w;
            for i in 0..n {
                gemm(k, g.out_c, p, w, true, x.sample(i), false, &mut col, 0.0);
                let yi = &mut y[i * g.in_len()..(i + 1) * g.in_len()];
                for (c, ch) in yi.chunks_mut(plane).enumerate() {
                    ch.fill(b[c]);
                }
                g.col2im(&col, yi);
            }
            (Tensor::new(&shape, y).unwrap(), Cache::Input(x.clone()), None)
        }
        Op::Pool(g) => {
            let in_plane = g.in_h * g.in_w;
            let out_len = g.c * g.out_h * g.out_w;
            let mut y = vec![0.0; n * out_len];
            let mut arg = vec![0usize; n * out_len];
            for i in 0..n {
                let xi = x.sample(i);
                for c in 0..g.c {
                    for oy in 0..g.out_h {
                        for ox in 0..g.out_w {
                            let mut best = f64::NEG_INFINITY;
                            let mut best_idx = 0;
                            for dy in 0..g.ph {
                                for dx in 0..g.pw {
                                    let idx = c * in_plane + (oy * g.sh + dy) * g.in_w + ox * g.sw + dx;
                                    if xi[idx] > best {
                                        best = xi[idx];
                                        best_idx = idx;
                                    }
                                }
                            }
                            let o = i * out_len + (c * g.out_h + oy) * g.out_w + ox;
                            y[o] = best;
                            arg[o] = best_idx;
                        }
                    }
                }
            }
            (Tensor::new(&shape, y).unwrap(), Cache::Argmax(arg), None)
        }
        Op::Dense { fan_in, fan_out } => {
            let (w, b) = (params[0].data(), params[1].data());
            let mut y = vec![0.0; n * fan_out];
            for row in y.chunks_mut(*fan_out) {
                row.copy_from_slice(b);
            }
            gemm(n, *fan_in, *fan_out, x.data(), false, w, true, &mut y, 1.0);
            (Tensor::new(&shape, y).unwrap(), Cache::Input(x.clone()), None)
        }
        Op::BatchNorm {
            channels,
            spatial,
            running_mean,
            running_var,
        } => {
            let (gamma, beta) = (params[0].data(), params[1].data());
            let (c_n, s_n) = (*channels, *spatial);
            let xd = x.data();
            let at = |i: usize, c: usize, s: usize| (i * c_n + c) * s_n + s;
            let count = (n * s_n) as f64;
            let (mean, var, stats) = if training {
                let mut mean = vec![0.0; c_n];
                let mut var = vec![0.0; c_n];
                for c in 0..c_n {
                    let mut acc = 0.0;
                    for i in 0..n {
                        for s in 0..s_n {
                            acc += xd[at(i, c, s)];
                        }
                    }
                    mean[c] = acc / count;
                    let mut acc = 0.0;
                    for i in 0..n {
                        for s in 0..s_n {
                            let d = xd[at(i, c, s)] - mean[c];
                            acc += d * d;
                        }
                    }
                    var[c] = acc / count;
                }
                let stats = BnStats {
                    mean: mean.clone(),
                    var: var.clone(),
                };
                (mean, var, Some(stats))
            } else {
                (running_mean.clone(), running_var.clone(), None)
            };
            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BATCHNORM_EPS).sqrt()).collect();
            let mut xhat = vec![0.0; xd.len()];
            let mut y = vec![0.0; xd.len()];
            for i in 0..n {
                for c in 0..c_n {
                    for s in 0..s_n {
                        let j = at(i, c, s);
                        xhat[j] = (xd[j] - mean[c]) * inv_std[c];
                        y[j] = gamma[c] * xhat[j] + beta[c];
                    }
                }
            }
            (
                Tensor::new(&shape, y).unwrap(),
                Cache::BatchNorm {
                    xhat,
                    inv_std,
                    training,
                },
                stats,
            )
        }
        Op::Act(a) => {
            let slope = a.slope();
            let y = x.map(|v| if v > 0.0 { v } else { slope * v });
            (y.reshape(&shape).unwrap(), Cache::Input(x.clone()), None)
        }
        Op::Reshape => (x.clone().reshape(&shape).unwrap(), Cache::Empty, None),
    }
}

/// Backward kernel: parameter gradients (in declaration order) and, when
/// requested, the gradient with respect to the layer input.
pub(crate) fn backward(
    op: &Op,
    params: &[&Tensor],
    cache: &Cache,
    dy: &Tensor,
    in_shape: &[usize],
    need_input: bool,
) -> (Vec<Tensor>, Option<Tensor>) {
    let n = dy.batch();
    let mut shape = vec![n];
    shape.extend_from_slice(in_shape);
    match (op, cache) {
        (Op::Conv(g), Cache::Cols(cols)) => {
            let w = params[0];
            let (k, p) = (g.k(), g.p());
            let ld = n * p;
            let mut dprod = vec![0.0; g.out_c * ld];
            let mut db = vec![0.0; g.out_c];
            for i in 0..n {
                let dyi = dy.sample(i);
                for (oc, row) in dyi.chunks(p).enumerate() {
                    db[oc] += row.iter().sum::<f64>();
                    dprod[oc * ld + i * p..oc * ld + (i + 1) * p].copy_from_slice(row);
                }
            }
            let mut dw = vec![0.0; w.len()];
            gemm(g.out_c, ld, k, &dprod, false, cols, true, &mut dw, 0.0);
            let dx = need_input.then(|| {
                let mut dcol = vec![0.0; k * ld];
                gemm(k, g.out_c, ld, w.data(), true, &dprod, false, &mut dcol, 0.0);
                let mut dx = vec![0.0; n * g.in_len()];
                for i in 0..n {
                    g.col2im_strided(&dcol, &mut dx[i * g.in_len()..(i + 1) * g.in_len()], ld, i * p);
                }
                Tensor::new(&shape, dx).unwrap()
            });
            (
                vec![
                    Tensor::new(w.shape(), dw).unwrap(),
                    Tensor::new(&[g.out_c], db).unwrap(),
                ],
                dx,
            )
        }
        (Op::Deconv(g), Cache::Input(x)) => {
            let w = params[0];
            let (k, p) = (g.k(), g.p());
            let mut dw = vec![0.0; w.len()];
            let mut db = vec![0.0; g.in_c];
            let mut dx = need_input.then(|| vec![0.0; n * g.out_len()]);
            let mut col = vec![0.0; k * p];
            let plane = g.in_h * g.in_w;
            for i in 0..n {
                let dyi = dy.sample(i);
                g.im2col(dyi, &mut col);
                gemm(g.out_c, p, k, x.sample(i), false, &col, true, &mut dw, 1.0);
                for (c, ch) in dyi.chunks(plane).enumerate() {
                    db[c] += ch.iter().sum::<f64>();
                }
                if let Some(dx) = dx.as_mut() {
                    let dxi = &mut dx[i * g.out_len()..(i + 1) * g.out_len()];
                    gemm(g.out_c, k, p, w.data(), false, &col, false, dxi, 0.0);
                }
            }
            (
                vec![
                    Tensor::new(w.shape(), dw).unwrap(),
                    Tensor::new(&[g.in_c], db).unwrap(),
                ],
                dx.map(|d| Tensor::new(&shape, d).unwrap()),
            )
        }
        (Op::Pool(g), Cache::Argmax(arg)) => {
            let in_len = g.c * g.in_h * g.in_w;
            let out_len = g.c * g.out_h * g.out_w;
            let dx = need_input.then(|| {
                let mut dx = vec![0.0; n * in_len];
                for i in 0..n {
                    for o in 0..out_len {
                        dx[i * in_len + arg[i * out_len + o]] += dy.data()[i * out_len + o];
                    }
                }
                Tensor::new(&shape, dx).unwrap()
            });
            (vec![], dx)
        }
        (Op::Dense { fan_in, fan_out }, Cache::Input(x)) => {
            let w = params[0];
            let mut dw = vec![0.0; w.len()];
            gemm(*fan_out, n, *fan_in, dy.data(), true, x.data(), false, &mut dw, 0.0);
            let mut db = vec![0.0; *fan_out];
            for row in dy.data().chunks(*fan_out) {
                for (d, v) in db.iter_mut().zip(row) {
                    *d += v;
                }
            }
            let dx = need_input.then(|| {
                let mut dx = vec![0.0; n * fan_in];
                gemm(n, *fan_out, *fan_in, dy.data(), false, w.data(), false, &mut dx, 0.0);
                Tensor::new(&shape, dx).unwrap()
            });
            (
                vec![
                    Tensor::new(w.shape(), dw).unwrap(),
                    Tensor::new(&[*fan_out], db).unwrap(),
                ],
                dx,
            )
        }
        (
            Op::BatchNorm {
                channels, spatial, ..
            },
            Cache::BatchNorm {
                xhat,
                inv_std,
                training,
            },
        ) => {
            let gamma = params[0].data();
            let (c_n, s_n) = (*channels, *spatial);
            let at = |i: usize, c: usize, s: usize| (i * c_n + c) * s_n + s;
            let dyd = dy.data();
            let mut dgamma = vec![0.0; c_n];
            let mut dbeta = vec![0.0; c_n];
            for i in 0..n {
                for c in 0..c_n {
                    for s in 0..s_n {
                        let j = at(i, c, s);
                        dgamma[c] += dyd[j] * xhat[j];
                        dbeta[c] += dyd[j];
                    }
                }
            }
            let dx = need_input.then(|| {
                let mut dx = vec![0.0; dyd.len()];
                let count = (n * s_n) as f64;
                for c in 0..c_n {
                    let k = gamma[c] * inv_std[c];
                    for i in 0..n {
                        for s in 0..s_n {
                            let j = at(i, c, s);
                            dx[j] = if *training {
                                k * (dyd[j] - dbeta[c] / count - xhat[j] * dgamma[c] / count)
                            } else {
                                k * dyd[j]
                            };
                        }
                    }
                }
                Tensor::new(&shape, dx).unwrap()
            });
            (
                vec![
                    Tensor::new(&[c_n], dgamma).unwrap(),
                    Tensor::new(&[c_n], dbeta).unwrap(),
                ],
                dx,
            )
        }
        (Op::Act(a), Cache::Input(x)) => {
            let slope = a.slope();
            let dx = need_input.then(|| {
                let d: Vec<f64> = x
                    .data()
                    .iter()
                    .zip(dy.data())
                    .map(|(&xv, &g)| if xv > 0.0 { g } else { slope * g })
                    .collect();
                Tensor::new(&shape, d).unwrap()
            });
            (vec![], dx)
        }
        (Op::Reshape, _) => (vec![], need_input.then(|| dy.clone().reshape(&shape).unwrap())),
        _ => unreachable!("layer cache does not match its op"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_padding_output_sizes() {
        assert_eq!(conv_output_size(39, 5, 1, Padding::Same), Some(39));
        assert_eq!(conv_output_size(39, 3, 2, Padding::Same), Some(20));
        assert_eq!(conv_output_size(4, 2, 2, Padding::Valid), Some(2));
        assert_eq!(conv_output_size(1, 2, 2, Padding::Valid), None);
    }

    #[test]
    fn im2col_col2im_are_adjoint() {
        let g = ConvGeom::new(2, 5, 4, 3, (3, 2), (2, 1), Padding::Same).unwrap();
        let x: Vec<f64> = (0..g.in_len()).map(|i| (i as f64 * 0.37).sin()).collect();
        let c: Vec<f64> = (0..g.k() * g.p()).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut col = vec![0.0; g.k() * g.p()];
        g.im2col(&x, &mut col);
        let mut back = vec![0.0; g.in_len()];
        g.col2im(&c, &mut back);
        let lhs: f64 = col.iter().zip(&c).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn deconv_rejects_incompatible_output() {
        let spec = LayerSpec::deconv(1, 3, 2, Some((9, 9)));
        assert!(resolve(&spec, &[1, 4, 4], "d").is_err());
        let spec = LayerSpec::deconv(1, 3, 2, Some((7, 8)));
        assert!(resolve(&spec, &[1, 4, 4], "d").is_ok());
    }
}
