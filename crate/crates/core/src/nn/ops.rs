//! Layer kernels over NHWC tensors.
//!
//! The public functions validate shapes and allocate; the `*_into` /
//! slice-level helpers are what the model's forward/backward passes call.

use rand::Rng;

use super::error::NnError;
use super::scalar::{gemm, Scalar};
use super::tensor::Tensor;

pub const KERNEL: usize = 3;

/// Lowers `[n, h, w, c]` into a `[n * (h-2) * (w-2), 9 * c]` patch matrix.
///
/// Column order is `(a, b, c)` so that a `[3, 3, c_in, c_out]` kernel tensor
/// is already the right-hand matrix of the product.
pub(crate) fn im2col<T: Scalar>(input: &[T], n: usize, h: usize, w: usize, c: usize) -> Vec<T> {
    let (oh, ow) = (h - KERNEL + 1, w - KERNEL + 1);
    let patch = KERNEL * KERNEL * c;
    let mut cols = vec![T::zero(); n * oh * ow * patch];
    let mut dst = 0;
    for s in 0..n {
        let img = &input[s * h * w * c..(s + 1) * h * w * c];
        for i in 0..oh {
            for j in 0..ow {
                for a in 0..KERNEL {
                    let src = ((i + a) * w + j) * c;
                    let run = KERNEL * c;
                    cols[dst..dst + run].copy_from_slice(&img[src..src + run]);
                    dst += run;
                }
            }
        }
    }
    cols
}

/// Scatter-adds a patch-gradient matrix back into an input-shaped buffer.
pub(crate) fn col2im<T: Scalar>(cols: &[T], n: usize, h: usize, w: usize, c: usize) -> Vec<T> {
    let (oh, ow) = (h - KERNEL + 1, w - KERNEL + 1);
    let mut out = vec![T::zero(); n * h * w * c];
    let mut src = 0;
    for s in 0..n {
        let img = &mut out[s * h * w * c..(s + 1) * h * w * c];
        for i in 0..oh {
            for j in 0..ow {
                for a in 0..KERNEL {
                    let dst = ((i + a) * w + j) * c;
                    let run = KERNEL * c;
                    for (d, g) in img[dst..dst + run].iter_mut().zip(&cols[src..src + run]) {
                        *d = *d + *g;
                    }
                    src += run;
                }
            }
        }
    }
    out
}

fn check_conv_shapes<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<(usize, usize, usize, usize, usize), NnError> {
    if input.rank() != 4 {
        return Err(NnError::shape("conv2d", format!("input must be [N,H,W,C], got {:?}", input.shape())));
    }
    let (n, h, w, c) = (input.dim(0), input.dim(1), input.dim(2), input.dim(3));
    if h < KERNEL || w < KERNEL {
        return Err(NnError::shape("conv2d", format!("spatial dims {h}x{w} smaller than 3x3 kernel")));
    }
    let ks = kernels.shape();
    if ks.len() != 4 || ks[0] != KERNEL || ks[1] != KERNEL || ks[2] != c {
        return Err(NnError::shape("conv2d", format!("kernel must be [3,3,{c},C_out], got {ks:?}")));
    }
    if bias.shape() != [ks[3]] {
        return Err(NnError::shape("conv2d", format!("bias must be [{}], got {:?}", ks[3], bias.shape())));
    }
    Ok((n, h, w, c, ks[3]))
}

/// Valid-padding, stride-1 3x3 convolution (no activation).
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>, NnError> {
    let (n, h, w, c, c_out) = check_conv_shapes(input, kernels, bias)?;
    let cols = im2col(input.data(), n, h, w, c);
    let out = conv_from_cols(&cols, kernels.data(), bias.data(), c_out);
    Tensor::new(vec![n, h - 2, w - 2, c_out], out)
}

pub(crate) fn conv_from_cols<T: Scalar>(cols: &[T], kernels: &[T], bias: &[T], c_out: usize) -> Vec<T> {
    let patch = kernels.len() / c_out;
    let rows = cols.len() / patch;
    let mut out = Vec::with_capacity(rows * c_out);
    for _ in 0..rows {
        out.extend_from_slice(bias);
    }
    gemm(false, false, rows, c_out, patch, cols, kernels, T::one(), &mut out);
    out
}

/// Gradients of a 3x3 convolution given its lowered input.
///
/// Returns `(grad_input, grad_kernels, grad_bias)`; `grad_input` is skipped
/// when `input_dims` is `None`.
pub(crate) fn conv_backward_from_cols<T: Scalar>(
    cols: &[T],
    kernels: &[T],
    grad_out: &[T],
    c_out: usize,
    input_dims: Option<(usize, usize, usize, usize)>,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let patch = kernels.len() / c_out;
    let rows = cols.len() / patch;
    let mut grad_k = vec![T::zero(); patch * c_out];
    gemm(true, false, patch, c_out, rows, cols, grad_out, T::zero(), &mut grad_k);
    let mut grad_b = vec![T::zero(); c_out];
    for r in grad_out.chunks_exact(c_out) {
        for (b, g) in grad_b.iter_mut().zip(r) {
            *b = *b + *g;
        }
    }
    let grad_in = input_dims.map(|(n, h, w, c)| {
        let mut grad_cols = vec![T::zero(); rows * patch];
        gemm(false, true, rows, patch, c_out, grad_out, kernels, T::zero(), &mut grad_cols);
        col2im(&grad_cols, n, h, w, c)
    });
    (grad_in, grad_k, grad_b)
}

pub fn relu_forward<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let mut out = input.clone();
    relu_in_place(out.data_mut());
    out
}

pub(crate) fn relu_in_place<T: Scalar>(x: &mut [T]) {
    for v in x {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Zeroes gradient entries where the activation output was clamped.
pub(crate) fn relu_backward_in_place<T: Scalar>(activated: &[T], grad: &mut [T]) {
    for (g, a) in grad.iter_mut().zip(activated) {
        if *a <= T::zero() {
            *g = T::zero();
        }
    }
}

/// 2x2 max pooling, stride 2. The index map holds, for each output element,
/// the flat input offset of the winning element (first maximum in scan order).
pub fn maxpool2x2_forward<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<u32>), NnError> {
    if input.rank() != 4 {
        return Err(NnError::shape("maxpool2x2", format!("input must be [N,H,W,C], got {:?}", input.shape())));
    }
    let (n, h, w, c) = (input.dim(0), input.dim(1), input.dim(2), input.dim(3));
    if h % 2 != 0 || w % 2 != 0 {
        return Err(NnError::shape("maxpool2x2", format!("spatial dims must be even, got {h}x{w}")));
    }
    let (out, idx) = maxpool_raw(input.data(), n, h, w, c);
    Ok((Tensor::new(vec![n, h / 2, w / 2, c], out)?, idx))
}

pub(crate) fn maxpool_raw<T: Scalar>(x: &[T], n: usize, h: usize, w: usize, c: usize) -> (Vec<T>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * oh * ow * c);
    let mut idx = Vec::with_capacity(n * oh * ow * c);
    for s in 0..n {
        let base = s * h * w * c;
        for i in 0..oh {
            for j in 0..ow {
                for ch in 0..c {
                    let mut best = base + ((2 * i) * w + 2 * j) * c + ch;
                    for (a, b) in [(0, 1), (1, 0), (1, 1)] {
                        let k = base + ((2 * i + a) * w + 2 * j + b) * c + ch;
                        if x[k] > x[best] {
                            best = k;
                        }
                    }
                    out.push(x[best]);
                    idx.push(best as u32);
                }
            }
        }
    }
    (out, idx)
}

pub(crate) fn maxpool_backward<T: Scalar>(grad_out: &[T], idx: &[u32], input_len: usize) -> Vec<T> {
    let mut grad = vec![T::zero(); input_len];
    for (g, &i) in grad_out.iter().zip(idx) {
        grad[i as usize] = grad[i as usize] + *g;
    }
    grad
}

fn check_rate(rate: f32) -> Result<(), NnError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(NnError::InvalidArgument(format!("dropout rate must lie in [0, 1), got {rate}")));
    }
    Ok(())
}

/// Inverted dropout: survivors are scaled by `1 / (1 - rate)`, inference is
/// the identity.
pub fn dropout_forward<T: Scalar, R: Rng + ?Sized>(
    input: &Tensor<T>,
    rate: f32,
    training: bool,
    rng: &mut R,
) -> Result<Tensor<T>, NnError> {
    check_rate(rate)?;
    let mut out = input.clone();
    if training {
        let mask = dropout_mask::<T, R>(out.len(), rate, rng)?;
        for (v, m) in out.data_mut().iter_mut().zip(&mask) {
            *v = *v * *m;
        }
    }
    Ok(out)
}

/// Per-element multipliers (0 or `1 / (1 - rate)`).
pub(crate) fn dropout_mask<T: Scalar, R: Rng + ?Sized>(len: usize, rate: f32, rng: &mut R) -> Result<Vec<T>, NnError> {
    check_rate(rate)?;
    if rate == 0.0 {
        return Ok(vec![T::one(); len]);
    }
    let keep = T::one() / T::lit(1.0 - rate as f64);
    Ok((0..len).map(|_| if rng.random::<f32>() < rate { T::zero() } else { keep }).collect())
}

pub fn dense_forward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>, NnError> {
    if input.rank() != 2 || weights.rank() != 2 {
        return Err(NnError::shape(
            "dense",
            format!("expected [N,F_in] x [F_in,F_out], got {:?} x {:?}", input.shape(), weights.shape()),
        ));
    }
    let (n, f_in, f_out) = (input.dim(0), input.dim(1), weights.dim(1));
    if weights.dim(0) != f_in {
        return Err(NnError::shape("dense", format!("inner dims disagree: {f_in} vs {}", weights.dim(0))));
    }
    if bias.shape() != [f_out] {
        return Err(NnError::shape("dense", format!("bias must be [{f_out}], got {:?}", bias.shape())));
    }
    Tensor::new(vec![n, f_out], dense_raw(input.data(), weights.data(), bias.data(), n, f_in, f_out))
}

pub(crate) fn dense_raw<T: Scalar>(x: &[T], w: &[T], b: &[T], n: usize, f_in: usize, f_out: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(n * f_out);
    for _ in 0..n {
        out.extend_from_slice(b);
    }
    gemm(false, false, n, f_out, f_in, x, w, T::one(), &mut out);
    out
}

/// Returns `(grad_input, grad_weights, grad_bias)` for `out = x w + b`.
pub(crate) fn dense_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    grad_out: &[T],
    n: usize,
    f_in: usize,
    f_out: usize,
    want_input: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let mut grad_w = vec![T::zero(); f_in * f_out];
    gemm(true, false, f_in, f_out, n, x, grad_out, T::zero(), &mut grad_w);
    let mut grad_b = vec![T::zero(); f_out];
    for r in grad_out.chunks_exact(f_out) {
        for (b, g) in grad_b.iter_mut().zip(r) {
            *b = *b + *g;
        }
    }
    let grad_x = want_input.then(|| {
        let mut gx = vec![T::zero(); n * f_in];
        gemm(false, true, n, f_in, f_out, grad_out, w, T::zero(), &mut gx);
        gx
    });
    (grad_x, grad_w, grad_b)
}

/// Row-wise softmax with max subtraction.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    if logits.rank() != 2 {
        return Err(NnError::shape("softmax", format!("expected [N,K], got {:?}", logits.shape())));
    }
    let mut out = logits.clone();
    let k = logits.dim(1);
    softmax_rows_in_place(out.data_mut(), k);
    Ok(out)
}

pub(crate) fn softmax_rows_in_place<T: Scalar>(x: &mut [T], k: usize) {
    for row in x.chunks_exact_mut(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
}
