//! Forward operations and their reverse-mode rules.
//!
//! The op set is exactly what the change-detection models and losses need:
//! conv2d, relu/sigmoid, 2x2 max pooling, nearest 2x upsampling, channel
//! concatenation, elementwise add/sub/abs, scalar scaling, sum, and the two
//! losses (pixel-averaged binary cross-entropy and mean squared error).

use super::kernels;
use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Probability clamp inside [`bce_loss`]; the raw cross-entropy is undefined
/// at exactly 0 or 1.
pub const BCE_EPS: f64 = 1e-7;

/// Records how a tensor was produced, holding the inputs needed for backprop.
pub(super) enum Op<T: Scalar> {
    Leaf,
    Relu {
        x: Tensor<T>,
    },
    Sigmoid {
        x: Tensor<T>,
    },
    Abs {
        x: Tensor<T>,
    },
    Add {
        a: Tensor<T>,
        b: Tensor<T>,
    },
    Sub {
        a: Tensor<T>,
        b: Tensor<T>,
    },
    Scale {
        x: Tensor<T>,
        c: T,
    },
    Sum {
        x: Tensor<T>,
    },
    Reshape {
        x: Tensor<T>,
    },
    Conv2d {
        input: Tensor<T>,
        weight: Tensor<T>,
        bias: Tensor<T>,
        stride: usize,
        padding: usize,
    },
    MaxPool2x2 {
        x: Tensor<T>,
        argmax: Vec<usize>,
    },
    Upsample2x {
        x: Tensor<T>,
    },
    ConcatChannels {
        a: Tensor<T>,
        b: Tensor<T>,
    },
    Bce {
        pred: Tensor<T>,
        target: Tensor<T>,
    },
    Mse {
        a: Tensor<T>,
        b: Tensor<T>,
    },
}

impl<T: Scalar> Op<T> {
    pub(super) fn inputs(&self) -> Vec<&Tensor<T>> {
        match self {
            Op::Leaf => vec![],
            Op::Relu { x } | Op::Sigmoid { x } | Op::Abs { x } | Op::Scale { x, .. } => vec![x],
            Op::Sum { x } | Op::MaxPool2x2 { x, .. } | Op::Upsample2x { x } => vec![x],
            Op::Reshape { x } => vec![x],
            Op::Add { a, b } | Op::Sub { a, b } | Op::ConcatChannels { a, b } => vec![a, b],
            Op::Conv2d {
                input, weight, bias, ..
            } => vec![input, weight, bias],
            Op::Bce { pred, target } => vec![pred, target],
            Op::Mse { a, b } => vec![a, b],
        }
    }
}

fn check_same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("shapes {:?} and {:?} differ", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

impl<T: Scalar> Tensor<T> {
    /// Elementwise `max(0, x)`.
    pub fn relu(&self) -> Tensor<T> {
        let data = self.data().iter().map(|&v| v.maximum(T::ZERO)).collect();
        Tensor::from_op(self.shape().to_vec(), data, Op::Relu { x: self.clone() })
    }

    /// Elementwise logistic function, numerically stable for large |x| and
    /// clamped into the open interval (0, 1).
    pub fn sigmoid(&self) -> Tensor<T> {
        let data = self
            .data()
            .iter()
            .map(|&v| {
                let p = if v >= T::ZERO {
                    T::ONE / (T::ONE + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (T::ONE + e)
                };
                p.maximum(T::tiny()).minimum(T::one_minus_ulp())
            })
            .collect();
        Tensor::from_op(self.shape().to_vec(), data, Op::Sigmoid { x: self.clone() })
    }

    /// Elementwise absolute value.
    pub fn abs(&self) -> Tensor<T> {
        let data = self.data().iter().map(|&v| v.abs()).collect();
        Tensor::from_op(self.shape().to_vec(), data, Op::Abs { x: self.clone() })
    }

    /// Elementwise sum of two equal-shape tensors.
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        check_same_shape("add", self, other)?;
        let data = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(&a, &b)| a + b)
            .collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            Op::Add {
                a: self.clone(),
                b: other.clone(),
            },
        ))
    }

    /// Elementwise difference of two equal-shape tensors.
    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        check_same_shape("sub", self, other)?;
        let data = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(&a, &b)| a - b)
            .collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            Op::Sub {
                a: self.clone(),
                b: other.clone(),
            },
        ))
    }

    /// Multiply every element by a constant.
    pub fn scale(&self, c: T) -> Tensor<T> {
        let data = self.data().iter().map(|&v| v * c).collect();
        Tensor::from_op(self.shape().to_vec(), data, Op::Scale { x: self.clone(), c })
    }

    /// Sum of all elements, as a scalar tensor.
    pub fn sum(&self) -> Tensor<T> {
        let mut acc = T::ZERO;
        for &v in self.data().iter() {
            acc += v;
        }
        Tensor::from_op(vec![1], vec![acc], Op::Sum { x: self.clone() })
    }

    /// Same values under a new shape with equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        let expect: usize = shape.iter().product();
        if expect != self.elem_count() {
            return Err(Error::shape(
                "reshape",
                format!(
                    "cannot view {:?} ({} values) as {:?} ({} values)",
                    self.shape(),
                    self.elem_count(),
                    shape,
                    expect
                ),
            ));
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.to_vec(),
            Op::Reshape { x: self.clone() },
        ))
    }

    /// 2x2 max pooling with stride 2 on an `[N, C, H, W]` tensor; H and W
    /// must be even. Ties route the gradient to the first maximal element in
    /// row-major window order.
    pub fn maxpool2x2(&self) -> Result<Tensor<T>> {
        let [n, c, h, w] = self.dims4("maxpool2x2")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::arg(format!(
                "maxpool2x2 needs even spatial dims, got {}x{}",
                h, w
            )));
        }
        let (oh, ow) = (h / 2, w / 2);
        let src = self.data();
        let mut out = vec![T::ZERO; n * c * oh * ow];
        let mut argmax = vec![0usize; out.len()];
        for plane in 0..n * c {
            let base = plane * h * w;
            for oi in 0..oh {
                for oj in 0..ow {
                    let mut best_idx = base + (2 * oi) * w + 2 * oj;
                    let mut best = src[best_idx];
                    for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * oi + di) * w + (2 * oj + dj);
                        if src[idx] > best {
                            best = src[idx];
                            best_idx = idx;
                        }
                    }
                    let o = plane * oh * ow + oi * ow + oj;
                    out[o] = best;
                    argmax[o] = best_idx;
                }
            }
        }
        drop(src);
        Ok(Tensor::from_op(
            vec![n, c, oh, ow],
            out,
            Op::MaxPool2x2 {
                x: self.clone(),
                argmax,
            },
        ))
    }

    /// Nearest-neighbour 2x upsampling of an `[N, C, H, W]` tensor: each
    /// pixel becomes a 2x2 block.
    pub fn upsample2x_nearest(&self) -> Result<Tensor<T>> {
        let [n, c, h, w] = self.dims4("upsample2x_nearest")?;
        let (oh, ow) = (2 * h, 2 * w);
        let src = self.data();
        let mut out = vec![T::ZERO; n * c * oh * ow];
        for plane in 0..n * c {
            let base_in = plane * h * w;
            let base_out = plane * oh * ow;
            for i in 0..h {
                for j in 0..w {
                    let v = src[base_in + i * w + j];
                    let o = base_out + (2 * i) * ow + 2 * j;
                    out[o] = v;
                    out[o + 1] = v;
                    out[o + ow] = v;
                    out[o + ow + 1] = v;
                }
            }
        }
        drop(src);
        Ok(Tensor::from_op(
            vec![n, c, oh, ow],
            out,
            Op::Upsample2x { x: self.clone() },
        ))
    }

    /// Concatenate along the channel axis; batch and spatial dims must match.
    pub fn concat_channels(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let [n, ca, h, w] = self.dims4("concat_channels")?;
        let [n2, cb, h2, w2] = other.dims4("concat_channels")?;
        if n != n2 || h != h2 || w != w2 {
            return Err(Error::shape(
                "concat_channels",
                format!(
                    "batch/spatial dims differ: {:?} vs {:?}",
                    self.shape(),
                    other.shape()
                ),
            ));
        }
        let plane = h * w;
        let mut out = vec![T::ZERO; n * (ca + cb) * plane];
        let a = self.data();
        let b = other.data();
        for ni in 0..n {
            let dst = &mut out[ni * (ca + cb) * plane..(ni + 1) * (ca + cb) * plane];
            dst[..ca * plane].copy_from_slice(&a[ni * ca * plane..(ni + 1) * ca * plane]);
            dst[ca * plane..].copy_from_slice(&b[ni * cb * plane..(ni + 1) * cb * plane]);
        }
        drop(a);
        drop(b);
        Ok(Tensor::from_op(
            vec![n, ca + cb, h, w],
            out,
            Op::ConcatChannels {
                a: self.clone(),
                b: other.clone(),
            },
        ))
    }
}

/// 2-d cross-correlation of `input [N,C,H,W]` with `weight [F,C,kh,kw]` plus
/// `bias [F]`. Kernel dims must be odd and the output size
/// `(H + 2*padding - kh) / stride + 1` must be integral.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let [n, c, h, w] = input.dims4("conv2d input")?;
    let [f, cw, kh, kw] = weight.dims4("conv2d weight")?;
    if cw != c {
        return Err(Error::shape(
            "conv2d",
            format!("input has {} channels but weight expects {}", c, cw),
        ));
    }
    if bias.shape() != [f] {
        return Err(Error::shape(
            "conv2d",
            format!("bias shape {:?} does not match {} filters", bias.shape(), f),
        ));
    }
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::arg(format!(
            "conv2d kernel dims must be odd, got {}x{}",
            kh, kw
        )));
    }
    if stride == 0 {
        return Err(Error::arg("conv2d stride must be at least 1".to_string()));
    }
    let (oh, ow) = conv_out_size(h, w, kh, kw, stride, padding)?;

    let k = c * kh * kw;
    let m = oh * ow;
    let src = input.data();
    let wdat = weight.data();
    let bdat = bias.data();
    let mut out = vec![T::ZERO; n * f * m];
    let mut cols = vec![T::ZERO; k * m];
    for ni in 0..n {
        kernels::im2col(
            &src[ni * c * h * w..(ni + 1) * c * h * w],
            c,
            h,
            w,
            kh,
            kw,
            stride,
            padding,
            oh,
            ow,
            &mut cols,
        );
        let out_n = &mut out[ni * f * m..(ni + 1) * f * m];
        for fi in 0..f {
            out_n[fi * m..(fi + 1) * m].fill(bdat[fi]);
        }
        kernels::gemm_accum(&wdat, &cols, out_n, f, k, m);
    }
    drop(src);
    drop(wdat);
    drop(bdat);
    Ok(Tensor::from_op(
        vec![n, f, oh, ow],
        out,
        Op::Conv2d {
            input: input.clone(),
            weight: weight.clone(),
            bias: bias.clone(),
            stride,
            padding,
        },
    ))
}

fn conv_out_size(
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
) -> Result<(usize, usize)> {
    let span_h = (h + 2 * padding).checked_sub(kh);
    let span_w = (w + 2 * padding).checked_sub(kw);
    match (span_h, span_w) {
        (Some(sh), Some(sw)) if sh % stride == 0 && sw % stride == 0 => {
            Ok((sh / stride + 1, sw / stride + 1))
        }
        _ => Err(Error::arg(format!(
            "conv2d output size is not integral for input {}x{}, kernel {}x{}, stride {}, padding {}",
            h, w, kh, kw, stride, padding
        ))),
    }
}

/// Pixel-averaged binary cross-entropy between predicted probabilities and a
/// binary target: `mean(-y*ln(p) - (1-y)*ln(1-p))` with `p` clamped to
/// `[BCE_EPS, 1 - BCE_EPS]`. Gradients flow into `pred` only.
pub fn bce_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    check_same_shape("bce_loss", pred, target)?;
    if pred.elem_count() == 0 {
        return Err(Error::arg("bce_loss on empty tensors".to_string()));
    }
    let eps = T::from_f64(BCE_EPS);
    let one_m_eps = T::ONE - eps;
    let mut acc = T::ZERO;
    {
        let p = pred.data();
        let y = target.data();
        for (&pi, &yi) in p.iter().zip(y.iter()) {
            if !(yi == T::ZERO || yi == T::ONE) {
                return Err(Error::arg(format!(
                    "bce_loss target values must be 0 or 1, got {}",
                    yi
                )));
            }
            let pc = pi.maximum(eps).minimum(one_m_eps);
            acc += -(yi * pc.ln()) - (T::ONE - yi) * (T::ONE - pc).ln();
        }
    }
    let n = T::from_f64(pred.elem_count() as f64);
    Ok(Tensor::from_op(
        vec![1],
        vec![acc / n],
        Op::Bce {
            pred: pred.clone(),
            target: target.clone(),
        },
    ))
}

/// Mean squared error `mean((a - b)^2)`. The second argument is treated as a
/// constant: gradients flow into `a` only, so a frozen teacher output can be
/// passed directly as `b`.
pub fn mse_loss<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    check_same_shape("mse_loss", a, b)?;
    if a.elem_count() == 0 {
        return Err(Error::arg("mse_loss on empty tensors".to_string()));
    }
    let mut acc = T::ZERO;
    {
        let av = a.data();
        let bv = b.data();
        for (&x, &y) in av.iter().zip(bv.iter()) {
            let d = x - y;
            acc += d * d;
        }
    }
    let n = T::from_f64(a.elem_count() as f64);
    Ok(Tensor::from_op(
        vec![1],
        vec![acc / n],
        Op::Mse {
            a: a.clone(),
            b: b.clone(),
        },
    ))
}

/// Apply one op's reverse rule: distribute `grad` (the gradient at `t`) to
/// `t`'s inputs through `sink`.
pub(super) fn backprop_step<T: Scalar>(
    t: &Tensor<T>,
    grad: &[T],
    sink: &mut dyn FnMut(&Tensor<T>, Vec<T>),
) {
    match &t.inner.op {
        Op::Leaf => {}
        Op::Relu { x } => {
            let xv = x.data();
            let g = grad
                .iter()
                .zip(xv.iter())
                .map(|(&g, &v)| if v > T::ZERO { g } else { T::ZERO })
                .collect();
            drop(xv);
            sink(x, g);
        }
        Op::Sigmoid { x } => {
            // d sigma = p (1 - p), using the saved output.
            let p = t.data();
            let g = grad
                .iter()
                .zip(p.iter())
                .map(|(&g, &pv)| g * pv * (T::ONE - pv))
                .collect();
            drop(p);
            sink(x, g);
        }
        Op::Abs { x } => {
            let xv = x.data();
            let g = grad
                .iter()
                .zip(xv.iter())
                .map(|(&g, &v)| {
                    if v > T::ZERO {
                        g
                    } else if v < T::ZERO {
                        -g
                    } else {
                        T::ZERO
                    }
                })
                .collect();
            drop(xv);
            sink(x, g);
        }
        Op::Add { a, b } => {
            sink(a, grad.to_vec());
            sink(b, grad.to_vec());
        }
        Op::Sub { a, b } => {
            sink(a, grad.to_vec());
            sink(b, grad.iter().map(|&g| -g).collect());
        }
        Op::Scale { x, c } => {
            sink(x, grad.iter().map(|&g| g * *c).collect());
        }
        Op::Sum { x } => {
            sink(x, vec![grad[0]; x.elem_count()]);
        }
        Op::Reshape { x } => {
            sink(x, grad.to_vec());
        }
        Op::Conv2d {
            input,
            weight,
            bias,
            stride,
            padding,
        } => {
            conv2d_backward(t, grad, input, weight, bias, *stride, *padding, sink);
        }
        Op::MaxPool2x2 { x, argmax } => {
            let mut g = vec![T::ZERO; x.elem_count()];
            for (o, &src_idx) in argmax.iter().enumerate() {
                g[src_idx] += grad[o];
            }
            sink(x, g);
        }
        Op::Upsample2x { x } => {
            let [n, c, h, w] = [
                x.shape()[0],
                x.shape()[1],
                x.shape()[2],
                x.shape()[3],
            ];
            let ow = 2 * w;
            let mut g = vec![T::ZERO; x.elem_count()];
            for plane in 0..n * c {
                let base_in = plane * h * w;
                let base_out = plane * 4 * h * w;
                for i in 0..h {
                    for j in 0..w {
                        let o = base_out + (2 * i) * ow + 2 * j;
                        g[base_in + i * w + j] =
                            ((grad[o] + grad[o + 1]) + (grad[o + ow] + grad[o + ow + 1]))
                                + g[base_in + i * w + j];
                    }
                }
            }
            sink(x, g);
        }
        Op::ConcatChannels { a, b } => {
            let [n, ca, h, w] = [a.shape()[0], a.shape()[1], a.shape()[2], a.shape()[3]];
            let cb = b.shape()[1];
            let plane = h * w;
            let mut ga = vec![T::ZERO; a.elem_count()];
            let mut gb = vec![T::ZERO; b.elem_count()];
            for ni in 0..n {
                let src = &grad[ni * (ca + cb) * plane..(ni + 1) * (ca + cb) * plane];
                ga[ni * ca * plane..(ni + 1) * ca * plane].copy_from_slice(&src[..ca * plane]);
                gb[ni * cb * plane..(ni + 1) * cb * plane].copy_from_slice(&src[ca * plane..]);
            }
            sink(a, ga);
            sink(b, gb);
        }
        Op::Bce { pred, target } => {
            let eps = T::from_f64(BCE_EPS);
            let one_m_eps = T::ONE - eps;
            let n = T::from_f64(pred.elem_count() as f64);
            let scale = grad[0] / n;
            let p = pred.data();
            let y = target.data();
            let g = p
                .iter()
                .zip(y.iter())
                .map(|(&pi, &yi)| {
                    // The clamp zeroes the derivative outside [eps, 1-eps].
                    if pi < eps || pi > one_m_eps {
                        T::ZERO
                    } else {
                        scale * (-(yi / pi) + (T::ONE - yi) / (T::ONE - pi))
                    }
                })
                .collect();
            drop(p);
            drop(y);
            sink(pred, g);
            // Targets are labels; no gradient is defined for them.
        }
        Op::Mse { a, b } => {
            let n = T::from_f64(a.elem_count() as f64);
            let two = T::from_f64(2.0);
            let scale = grad[0] * two / n;
            let av = a.data();
            let bv = b.data();
            let g = av
                .iter()
                .zip(bv.iter())
                .map(|(&x, &y)| scale * (x - y))
                .collect();
            drop(av);
            drop(bv);
            sink(a, g);
            // b is a constant (frozen teacher side).
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv2d_backward<T: Scalar>(
    out: &Tensor<T>,
    grad: &[T],
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
    sink: &mut dyn FnMut(&Tensor<T>, Vec<T>),
) {
    let [n, c, h, w] = [
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    ];
    let [f, _, kh, kw] = [
        weight.shape()[0],
        weight.shape()[1],
        weight.shape()[2],
        weight.shape()[3],
    ];
    let (oh, ow) = (out.shape()[2], out.shape()[3]);
    let k = c * kh * kw;
    let m = oh * ow;

    let src = input.data();
    let wdat = weight.data();

    let mut grad_input = vec![T::ZERO; input.elem_count()];
    let mut grad_weight = vec![T::ZERO; weight.elem_count()];
    let mut grad_bias = vec![T::ZERO; f];
    let mut cols = vec![T::ZERO; k * m];
    let mut cols_grad = vec![T::ZERO; k * m];

    for ni in 0..n {
        let go = &grad[ni * f * m..(ni + 1) * f * m];

        // grad_weight[f][k] += dot(go_row_f, cols_row_k)
        kernels::im2col(
            &src[ni * c * h * w..(ni + 1) * c * h * w],
            c,
            h,
            w,
            kh,
            kw,
            stride,
            padding,
            oh,
            ow,
            &mut cols,
        );
        for fi in 0..f {
            let go_row = &go[fi * m..(fi + 1) * m];
            for ki in 0..k {
                grad_weight[fi * k + ki] += kernels::dot(go_row, &cols[ki * m..(ki + 1) * m]);
            }
        }

        // cols_grad = weight^T (K x F) * go (F x M), then fold back to image.
        cols_grad.fill(T::ZERO);
        for ki in 0..k {
            let row = &mut cols_grad[ki * m..(ki + 1) * m];
            for fi in 0..f {
                let wv = wdat[fi * k + ki];
                let go_row = &go[fi * m..(fi + 1) * m];
                for (r, g) in row.iter_mut().zip(go_row.iter()) {
                    *r = wv.mul_add(*g, *r);
                }
            }
        }
        kernels::col2im_accum(
            &cols_grad,
            c,
            h,
            w,
            kh,
            kw,
            stride,
            padding,
            oh,
            ow,
            &mut grad_input[ni * c * h * w..(ni + 1) * c * h * w],
        );

        for fi in 0..f {
            let go_row = &go[fi * m..(fi + 1) * m];
            let mut acc = T::ZERO;
            for &g in go_row {
                acc += g;
            }
            grad_bias[fi] += acc;
        }
    }

    drop(src);
    drop(wdat);
    sink(input, grad_input);
    sink(weight, grad_weight);
    sink(bias, grad_bias);
}
