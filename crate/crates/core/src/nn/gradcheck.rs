//! Finite-difference gradient checking on the scaled-down network.
//!
//! The analytic side is [`backward`] in precision `T`; the oracle is a
//! central difference of the loss evaluated in `f64` at the same
//! (`T`-rounded) parameter point.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::{layer_outputs, random_tensor};
use super::ops::maxpool2x2_forward;
use super::{
    backward, forward, one_hot, weighted_cross_entropy, ClassWeights, Layer, ModelConfig, ModelParams, Scalar, Tensor,
};

struct Problem<T> {
    config: ModelConfig,
    params: ModelParams<T>,
    batch: Tensor<T>,
    targets: Tensor<T>,
    weights: ClassWeights,
}

fn problem<T: Scalar>(seed: u64) -> Problem<T> {
    let config = ModelConfig::downscaled();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = ModelParams::<f64>::glorot(&config, &mut rng).unwrap();
    let mut params = params.cast::<T>();
    // Non-zero biases so ReLU boundaries are not all at the origin.
    for i in 0..params.num_params() {
        if params.get_flat(i) == T::zero() {
            params.set_flat(i, T::lit(rng.random_range(-0.1..0.1)));
        }
    }
    let batch = random_tensor::<T, _>(vec![4, 8, 8, 1], 0.0, 1.0, &mut rng);
    let targets = one_hot::<T>(&[0, 1, 2, 3], 4);
    let weights = ClassWeights::new(vec![1.0, 2.0, 0.5, 1.5]).unwrap();
    Problem { config, params, batch, targets, weights }
}

fn loss_at<T: Scalar>(p: &Problem<T>, params: &ModelParams<T>) -> f64 {
    let probs = forward(&p.config, params, &p.batch).unwrap();
    weighted_cross_entropy(&probs, &p.targets, &p.weights).unwrap().to_f64().unwrap()
}

/// Central difference of the loss, evaluated in `f64` at the given point.
fn numeric_grad(p64: &Problem<f64>, params: &ModelParams<f64>, index: usize, h: f64) -> f64 {
    let mut plus = params.clone();
    plus.set_flat(index, params.get_flat(index) + h);
    let mut minus = params.clone();
    minus.set_flat(index, params.get_flat(index) - h);
    (loss_at(p64, &plus) - loss_at(p64, &minus)) / (2.0 * h)
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// ReLU on/off bits and max-pool winners for every layer.
///
/// The loss is smooth in a parameter only while this pattern is unchanged,
/// so a central difference straddling a change is not a valid oracle.
fn activation_pattern(p: &Problem<f64>, params: &ModelParams<f64>) -> Vec<u32> {
    let outs = layer_outputs(&p.config, params, &p.batch).unwrap();
    let mut pattern = Vec::new();
    for (i, layer) in p.config.layers.iter().enumerate() {
        match layer {
            Layer::Conv2d { .. } | Layer::Dense { .. } if i + 1 < p.config.layers.len() => {
                pattern.extend(outs[i].data().iter().map(|&v| (v > 0.0) as u32));
            }
            Layer::MaxPool2x2 => {
                let (_, idx) = maxpool2x2_forward(&outs[i - 1]).unwrap();
                pattern.extend(idx);
            }
            _ => {}
        }
    }
    pattern
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    /// Largest relative error over the checked parameters.
    pub worst: f64,
    /// Parameters actually compared; below `count` only if kinks were everywhere.
    pub checked: usize,
    /// Probes redrawn because `+-h` crossed a ReLU or max-pool switch.
    pub skipped: usize,
}

/// Worst relative error over `count` random parameters.
///
/// The analytic side runs in `T`; the finite differences evaluate the loss
/// in `f64` at the same (`T`-rounded) parameter point. Probes whose `+-h`
/// step changes the activation pattern are redrawn.
pub fn gradient_check<T: Scalar>(seed: u64, h: f64, count: usize) -> GradCheck {
    let p = problem::<T>(seed);
    let g =
        backward(&p.config, &p.params, &p.batch, &p.targets, &p.weights, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let p64 = Problem {
        config: p.config.clone(),
        params: p.params.cast::<f64>(),
        batch: p.batch.cast::<f64>(),
        targets: p.targets.cast::<f64>(),
        weights: p.weights.clone(),
    };
    let base = activation_pattern(&p64, &p64.params);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let n = p.params.num_params();
    let (mut worst, mut checked, mut skipped) = (0.0f64, 0, 0);
    while checked < count {
        let i = rng.random_range(0..n);
        let crosses_kink = [h, -h].iter().any(|&d| {
            let mut q = p64.params.clone();
            q.set_flat(i, q.get_flat(i) + d);
            activation_pattern(&p64, &q) != base
        });
        if crosses_kink {
            skipped += 1;
            if skipped >= 10 * count {
                break;
            }
            continue;
        }
        let analytic = g.grads.get_flat(i).to_f64().unwrap();
        worst = worst.max(rel_err(analytic, numeric_grad(&p64, &p64.params, i, h)));
        checked += 1;
    }
    GradCheck { worst, checked, skipped }
}
