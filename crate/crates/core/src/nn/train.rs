use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::error::NnError;
use super::loss::{argmax, one_hot, weighted_cross_entropy, ClassWeights};
use super::model::{backward, predict};
use super::optim::{AdadeltaConfig, AdadeltaState};
use super::params::ModelParams;
use super::scalar::Scalar;
use super::tensor::Tensor;

const INIT_STREAM: u64 = 0;
const SHUFFLE_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdadeltaConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 12, batch_size: 128, optimizer: AdadeltaConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean weighted training loss over the epoch.
    pub loss: f64,
    /// Fraction of training samples whose predicted class matched the
    /// argmax of their target during the epoch.
    pub accuracy: f64,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Glorot initialisation drawn from the seed's init stream.
pub fn init_params<T: Scalar>(config: &ModelConfig, seed: u64) -> Result<ModelParams<T>, NnError> {
    ModelParams::glorot(config, &mut stream_rng(seed, INIT_STREAM))
}

/// Minibatch Adadelta training against `targets` (one-hot or soft rows).
///
/// Initialisation, shuffling and dropout each use their own stream of the
/// seed, so a fixed seed reproduces the run bit for bit.
pub fn train<T: Scalar>(
    config: &ModelConfig,
    inputs: &Tensor<T>,
    targets: &Tensor<T>,
    train_cfg: &TrainConfig,
    weights: &ClassWeights,
    seed: u64,
    on_epoch: Option<&mut dyn FnMut(&EpochRecord)>,
) -> Result<(ModelParams<T>, Vec<EpochRecord>), NnError> {
    let params = init_params(config, seed)?;
    train_from(config, params, inputs, targets, train_cfg, weights, seed, on_epoch)
}

/// Like [`train`], starting from given parameters.
#[allow(clippy::too_many_arguments)]
pub fn train_from<T: Scalar>(
    config: &ModelConfig,
    mut params: ModelParams<T>,
    inputs: &Tensor<T>,
    targets: &Tensor<T>,
    train_cfg: &TrainConfig,
    weights: &ClassWeights,
    seed: u64,
    mut on_epoch: Option<&mut dyn FnMut(&EpochRecord)>,
) -> Result<(ModelParams<T>, Vec<EpochRecord>), NnError> {
    config.shape_chain()?;
    params.check_against(config)?;
    let n = inputs.shape().first().copied().unwrap_or(0);
    if n == 0 {
        return Err(NnError::EmptyDataset);
    }
    if targets.shape() != [n, config.num_classes()] {
        return Err(NnError::shape(
            "train",
            format!("targets must be [{n},{}], got {:?}", config.num_classes(), targets.shape()),
        ));
    }
    if train_cfg.batch_size == 0 {
        return Err(NnError::InvalidArgument("batch size must be positive".into()));
    }
    let mut optimizer = AdadeltaState::new(train_cfg.optimizer, &params);
    let mut shuffle_rng = stream_rng(seed, SHUFFLE_STREAM);
    let mut dropout_rng = stream_rng(seed, DROPOUT_STREAM);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(train_cfg.epochs);
    for epoch in 0..train_cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for idx in order.chunks(train_cfg.batch_size) {
            let batch = inputs.gather_rows(idx);
            let batch_targets = targets.gather_rows(idx);
            let g = backward(config, &params, &batch, &batch_targets, weights, &mut dropout_rng)?;
            if !g.grads.is_finite() {
                return Err(NnError::InvalidArgument(format!("non-finite gradient in epoch {}", epoch + 1)));
            }
            optimizer.step(&mut params, &g.grads);
            loss_sum += g.loss.to_f64().unwrap_or(f64::NAN) * idx.len() as f64;
            correct += g.correct;
        }
        let record = EpochRecord { epoch: epoch + 1, loss: loss_sum / n as f64, accuracy: correct as f64 / n as f64 };
        if let Some(cb) = on_epoch.as_deref_mut() {
            cb(&record);
        }
        history.push(record);
    }
    Ok((params, history))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    /// Mean unweighted cross-entropy against the true labels.
    pub loss: f64,
    pub predictions: Vec<u8>,
}

/// Accuracy and loss of `params` on a labelled set.
pub fn evaluate<T: Scalar>(
    config: &ModelConfig,
    params: &ModelParams<T>,
    images: &Tensor<T>,
    labels: &[u8],
    batch_size: usize,
) -> Result<Evaluation, NnError> {
    if images.dim(0) != labels.len() {
        return Err(NnError::shape("evaluate", format!("{} images vs {} labels", images.dim(0), labels.len())));
    }
    if labels.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    let k = config.num_classes();
    let probs = predict(config, params, images, batch_size)?;
    let predictions: Vec<u8> = probs.data().chunks_exact(k).map(|r| argmax(r) as u8).collect();
    let correct = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    let loss = weighted_cross_entropy(&probs, &one_hot(labels, k), &ClassWeights::uniform(k))?;
    Ok(Evaluation {
        accuracy: correct as f64 / labels.len() as f64,
        loss: loss.to_f64().unwrap_or(f64::NAN),
        predictions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::model::random_tensor;

    fn toy(n: usize) -> (Tensor<f32>, Vec<u8>) {
        // Class 0: bright left half; class 1: bright right half.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut x = random_tensor::<f32, _>(vec![n, 8, 8, 1], 0.0, 0.3, &mut rng);
        let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        for (i, &l) in labels.iter().enumerate() {
            for r in 0..8 {
                for c in 0..4 {
                    let col = if l == 0 { c } else { c + 4 };
                    x.data_mut()[i * 64 + r * 8 + col] += 0.7;
                }
            }
        }
        (x, labels)
    }

    #[test]
    fn zero_epochs_returns_initialisation() {
        let cfg = ModelConfig::downscaled();
        let (x, y) = toy(8);
        let cfg_train = TrainConfig { epochs: 0, batch_size: 4, ..TrainConfig::default() };
        let (p, h) = train(&cfg, &x, &one_hot(&y, 4), &cfg_train, &ClassWeights::uniform(4), 5, None).unwrap();
        assert!(h.is_empty());
        assert_eq!(p, init_params::<f32>(&cfg, 5).unwrap());
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let cfg = ModelConfig::downscaled();
        let x = Tensor::<f32>::zeros(vec![0, 8, 8, 1]);
        let t = Tensor::<f32>::zeros(vec![0, 4]);
        let err = train(&cfg, &x, &t, &TrainConfig::default(), &ClassWeights::uniform(4), 0, None).unwrap_err();
        assert!(matches!(err, NnError::EmptyDataset));
    }

    #[test]
    fn fits_two_class_toy_set() {
        let cfg = ModelConfig::downscaled();
        let (x, y) = toy(200);
        let tc = TrainConfig { epochs: 20, batch_size: 16, ..TrainConfig::default() };
        let (p, history) = train(&cfg, &x, &one_hot(&y, 4), &tc, &ClassWeights::uniform(4), 1, None).unwrap();
        assert_eq!(history.len(), 20);
        let eval = evaluate(&cfg, &p, &x, &y, 64).unwrap();
        assert!(eval.accuracy >= 0.95, "accuracy {}", eval.accuracy);
        assert!(history.last().unwrap().loss < history[0].loss);
    }

    #[test]
    fn same_seed_same_params() {
        let cfg = ModelConfig::table1(true);
        let x = random_tensor::<f32, _>(vec![40, 28, 28, 1], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(3));
        let y: Vec<u8> = (0..40).map(|i| (i % 10) as u8).collect();
        let tc = TrainConfig { epochs: 2, batch_size: 16, ..TrainConfig::default() };
        let run = || train(&cfg, &x, &one_hot(&y, 10), &tc, &ClassWeights::uniform(10), 77, None).unwrap();
        let (a, ha) = run();
        let (b, hb) = run();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
        let (c, _) = train(&cfg, &x, &one_hot(&y, 10), &tc, &ClassWeights::uniform(10), 78, None).unwrap();
        assert_ne!(a, c);
    }
}
