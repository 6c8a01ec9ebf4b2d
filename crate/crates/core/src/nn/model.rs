//! Forward and backward passes over a `ModelConfig` stack.
//!
//! A minibatch is split into fixed-size chunks. Chunks may run on different
//! threads, but their gradients are summed in chunk order, so results do not
//! depend on the thread count.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{Activation, Layer, ModelConfig};
use super::error::NnError;
use super::loss::{argmax, ce_logit_grad, sum_weighted_ce, ClassWeights};
use super::ops;
use super::params::{LayerParams, ModelParams};
use super::scalar::Scalar;
use super::tensor::Tensor;

/// Samples per gradient chunk.
pub const CHUNK: usize = 32;

enum Cache<T> {
    Conv { cols: Vec<T>, in_dims: (usize, usize, usize, usize), out: Vec<T> },
    Pool { idx: Vec<u32>, in_len: usize },
    Dropout { mask: Vec<T> },
    Flatten,
    Dense { input: Vec<T>, out: Vec<T>, f_in: usize, f_out: usize },
}

/// Called with each layer's output shape and values.
type Observer<'a, T> = &'a mut dyn FnMut(&[usize], &[T]);

/// Runs the stack on `n` samples. With `dropout_rng` set, dropout is active
/// and per-layer caches are kept for the backward pass.
fn forward_chunk<T: Scalar>(
    config: &ModelConfig,
    params: &ModelParams<T>,
    input: Vec<T>,
    n: usize,
    mut dropout_rng: Option<&mut ChaCha8Rng>,
    keep_cache: bool,
    mut observe: Option<Observer<'_, T>>,
) -> Result<(Vec<T>, Vec<Cache<T>>), NnError> {
    let mut x = input;
    let mut shape = config.input_shape.to_vec();
    let mut caches = Vec::with_capacity(if keep_cache { config.layers.len() } else { 0 });
    for (layer, p) in config.layers.iter().zip(&params.layers) {
        match layer {
            Layer::Conv2d { filters, .. } => {
                let LayerParams { weights, bias } = p.as_ref().expect("conv params");
                let (h, w, c) = (shape[0], shape[1], shape[2]);
                let cols = ops::im2col(&x, n, h, w, c);
                let mut out = ops::conv_from_cols(&cols, weights.data(), bias.data(), *filters);
                ops::relu_in_place(&mut out);
                shape = vec![h - 2, w - 2, *filters];
                if keep_cache {
                    caches.push(Cache::Conv { cols, in_dims: (n, h, w, c), out: out.clone() });
                }
                x = out;
            }
            Layer::MaxPool2x2 => {
                let (h, w, c) = (shape[0], shape[1], shape[2]);
                let (out, idx) = ops::maxpool_raw(&x, n, h, w, c);
                if keep_cache {
                    caches.push(Cache::Pool { idx, in_len: x.len() });
                }
                shape = vec![h / 2, w / 2, c];
                x = out;
            }
            Layer::Dropout { rate } => {
                if let Some(rng) = dropout_rng.as_deref_mut() {
                    let mask = ops::dropout_mask::<T, _>(x.len(), *rate, rng)?;
                    for (v, m) in x.iter_mut().zip(&mask) {
                        *v = *v * *m;
                    }
                    if keep_cache {
                        caches.push(Cache::Dropout { mask });
                    }
                } else if keep_cache {
                    caches.push(Cache::Dropout { mask: vec![T::one(); x.len()] });
                }
            }
            Layer::Flatten => {
                shape = vec![shape.iter().product()];
                if keep_cache {
                    caches.push(Cache::Flatten);
                }
            }
            Layer::Dense { units, activation } => {
                let LayerParams { weights, bias } = p.as_ref().expect("dense params");
                let f_in = shape[0];
                let mut out = ops::dense_raw(&x, weights.data(), bias.data(), n, f_in, *units);
                match activation {
                    Activation::Relu => ops::relu_in_place(&mut out),
                    Activation::Softmax => ops::softmax_rows_in_place(&mut out, *units),
                }
                shape = vec![*units];
                if keep_cache {
                    caches.push(Cache::Dense { input: std::mem::take(&mut x), out: out.clone(), f_in, f_out: *units });
                }
                x = out;
            }
        }
        if let Some(f) = observe.as_deref_mut() {
            let mut full = vec![n];
            full.extend_from_slice(&shape);
            f(&full, &x);
        }
    }
    Ok((x, caches))
}

struct ChunkGrad<T> {
    grads: ModelParams<T>,
    loss_sum: T,
    correct: usize,
}

#[allow(clippy::too_many_arguments)]
fn backward_chunk<T: Scalar>(
    config: &ModelConfig,
    params: &ModelParams<T>,
    input: Vec<T>,
    targets: &[T],
    n: usize,
    weights: &ClassWeights,
    batch_total: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ChunkGrad<T>, NnError> {
    let k = config.num_classes();
    let (probs, caches) = forward_chunk(config, params, input, n, Some(rng), true, None)?;
    let loss_sum = sum_weighted_ce(&probs, targets, weights, k);
    let correct = probs.chunks_exact(k).zip(targets.chunks_exact(k)).filter(|(p, t)| argmax(p) == argmax(t)).count();

    let mut grads = params.zeros_like();
    // Gradient with respect to the final softmax logits.
    let mut grad = ce_logit_grad(&probs, targets, weights, k, batch_total);
    for (i, (layer, cache)) in config.layers.iter().zip(caches).enumerate().rev() {
        let first = i == 0;
        match (layer, cache) {
            (Layer::Dense { activation, .. }, Cache::Dense { input, out, f_in, f_out }) => {
                if *activation == Activation::Relu {
                    ops::relu_backward_in_place(&out, &mut grad);
                }
                let w = params.layers[i].as_ref().expect("dense params");
                let (gx, gw, gb) = ops::dense_backward(&input, w.weights.data(), &grad, n, f_in, f_out, !first);
                let slot = grads.layers[i].as_mut().expect("dense grads");
                slot.weights.data_mut().copy_from_slice(&gw);
                slot.bias.data_mut().copy_from_slice(&gb);
                if let Some(gx) = gx {
                    grad = gx;
                }
            }
            (Layer::Conv2d { filters, .. }, Cache::Conv { cols, in_dims, out }) => {
                ops::relu_backward_in_place(&out, &mut grad);
                let w = params.layers[i].as_ref().expect("conv params");
                let (gx, gk, gb) =
                    ops::conv_backward_from_cols(&cols, w.weights.data(), &grad, *filters, (!first).then_some(in_dims));
                let slot = grads.layers[i].as_mut().expect("conv grads");
                slot.weights.data_mut().copy_from_slice(&gk);
                slot.bias.data_mut().copy_from_slice(&gb);
                if let Some(gx) = gx {
                    grad = gx;
                }
            }
            (Layer::MaxPool2x2, Cache::Pool { idx, in_len }) => {
                grad = ops::maxpool_backward(&grad, &idx, in_len);
            }
            (Layer::Dropout { .. }, Cache::Dropout { mask }) => {
                for (g, m) in grad.iter_mut().zip(&mask) {
                    *g = *g * *m;
                }
            }
            (Layer::Flatten, Cache::Flatten) => {}
            _ => unreachable!("cache does not match layer"),
        }
    }
    Ok(ChunkGrad { grads, loss_sum, correct })
}

fn check_batch<T: Scalar>(config: &ModelConfig, batch: &Tensor<T>) -> Result<usize, NnError> {
    let want = config.input_shape;
    if batch.rank() != 4 || batch.shape()[1..] != want {
        return Err(NnError::shape(
            "model",
            format!("batch must be [N,{},{},{}], got {:?}", want[0], want[1], want[2], batch.shape()),
        ));
    }
    Ok(batch.dim(0))
}

/// Gradient of the mean weighted cross-entropy plus summary statistics.
pub struct BatchGradient<T> {
    pub grads: ModelParams<T>,
    pub loss: T,
    /// Samples whose predicted argmax matches the target argmax.
    pub correct: usize,
}

/// Exact gradients of the weighted cross-entropy for one minibatch.
///
/// Dropout masks are drawn once here and reused by the backward pass.
pub fn backward<T: Scalar, R: RngCore + ?Sized>(
    config: &ModelConfig,
    params: &ModelParams<T>,
    batch: &Tensor<T>,
    targets: &Tensor<T>,
    weights: &ClassWeights,
    rng: &mut R,
) -> Result<BatchGradient<T>, NnError> {
    let n = check_batch(config, batch)?;
    let k = config.num_classes();
    if targets.shape() != [n, k] {
        return Err(NnError::shape("backward", format!("targets must be [{n},{k}], got {:?}", targets.shape())));
    }
    if weights.len() != k {
        return Err(NnError::shape("backward", format!("{} class weights for {k} classes", weights.len())));
    }
    if n == 0 {
        return Err(NnError::EmptyDataset);
    }
    let base_seed = rng.next_u64();
    let per = config.input_len();
    let starts: Vec<usize> = (0..n).step_by(CHUNK).collect();
    let parts: Vec<Result<ChunkGrad<T>, NnError>> = starts
        .par_iter()
        .enumerate()
        .map(|(ci, &s)| {
            let e = (s + CHUNK).min(n);
            let mut chunk_rng = ChaCha8Rng::seed_from_u64(base_seed);
            chunk_rng.set_stream(ci as u64);
            backward_chunk(
                config,
                params,
                batch.data()[s * per..e * per].to_vec(),
                &targets.data()[s * k..e * k],
                e - s,
                weights,
                n,
                &mut chunk_rng,
            )
        })
        .collect();
    let mut total: Option<ChunkGrad<T>> = None;
    for part in parts {
        let part = part?;
        match total.as_mut() {
            None => total = Some(part),
            Some(t) => {
                t.grads.add_assign(&part.grads);
                t.loss_sum = t.loss_sum + part.loss_sum;
                t.correct += part.correct;
            }
        }
    }
    let total = total.expect("at least one chunk");
    Ok(BatchGradient { grads: total.grads, loss: total.loss_sum / T::lit(n as f64), correct: total.correct })
}

/// Inference-mode class probabilities (dropout inactive).
pub fn forward<T: Scalar>(
    config: &ModelConfig,
    params: &ModelParams<T>,
    batch: &Tensor<T>,
) -> Result<Tensor<T>, NnError> {
    let n = check_batch(config, batch)?;
    let (probs, _) = forward_chunk(config, params, batch.data().to_vec(), n, None, false, None)?;
    Tensor::new(vec![n, config.num_classes()], probs)
}

/// Every layer's output for an inference pass, in order (after activation).
pub fn layer_outputs<T: Scalar>(
    config: &ModelConfig,
    params: &ModelParams<T>,
    batch: &Tensor<T>,
) -> Result<Vec<Tensor<T>>, NnError> {
    let n = check_batch(config, batch)?;
    let mut outputs = Vec::new();
    let mut record = |s: &[usize], data: &[T]| {
        outputs.push(Tensor::new(s.to_vec(), data.to_vec()));
    };
    forward_chunk(config, params, batch.data().to_vec(), n, None, false, Some(&mut record))?;
    outputs.into_iter().collect()
}

/// Batched inference; output rows are softmax vectors.
pub fn predict<T: Scalar>(
    config: &ModelConfig,
    params: &ModelParams<T>,
    images: &Tensor<T>,
    batch_size: usize,
) -> Result<Tensor<T>, NnError> {
    let n = check_batch(config, images)?;
    if batch_size == 0 {
        return Err(NnError::InvalidArgument("batch size must be positive".into()));
    }
    params.check_against(config)?;
    let per = config.input_len();
    let k = config.num_classes();
    let chunks: Vec<Result<Vec<T>, NnError>> = images
        .data()
        .par_chunks(batch_size * per)
        .map(|chunk| {
            forward_chunk(config, params, chunk.to_vec(), chunk.len() / per, None, false, None).map(|(p, _)| p)
        })
        .collect();
    let mut out = Vec::with_capacity(n * k);
    for c in chunks {
        out.extend(c?);
    }
    Tensor::new(vec![n, k], out)
}

/// Draws one uniform value per element, used by tests to build random inputs.
pub fn random_tensor<T: Scalar, R: Rng + ?Sized>(shape: Vec<usize>, lo: f64, hi: f64, rng: &mut R) -> Tensor<T> {
    let len = shape.iter().product();
    let data = (0..len).map(|_| T::lit(rng.random_range(lo..hi))).collect();
    Tensor::new(shape, data).expect("random tensor shape")
}
