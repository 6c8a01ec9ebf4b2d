use rand::Rng;

use super::config::{Layer, ModelConfig};
use super::error::NnError;
use super::scalar::Scalar;
use super::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T = f32> {
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Learned weights, indexed like `ModelConfig::layers` (`None` for layers
/// without parameters).
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T = f32> {
    pub layers: Vec<Option<LayerParams<T>>>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn zeros(config: &ModelConfig) -> Result<Self, NnError> {
        Ok(Self {
            layers: config
                .param_shapes()?
                .into_iter()
                .map(|s| s.map(|(w, b)| LayerParams { weights: Tensor::zeros(w), bias: Tensor::zeros(b) }))
                .collect(),
        })
    }

    /// Glorot-uniform weights, zero biases.
    ///
    /// Fan sizes follow the Keras convention: for a `[3,3,c_in,c_out]`
    /// kernel, `fan_in = 9 c_in` and `fan_out = 9 c_out`.
    pub fn glorot<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Self, NnError> {
        let mut params = Self::zeros(config)?;
        for (layer, p) in config.layers.iter().zip(params.layers.iter_mut()) {
            let Some(p) = p else { continue };
            let shape = p.weights.shape().to_vec();
            let (fan_in, fan_out) = match layer {
                Layer::Conv2d { .. } => (shape[0] * shape[1] * shape[2], shape[0] * shape[1] * shape[3]),
                _ => (shape[0], shape[1]),
            };
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in p.weights.data_mut() {
                *w = T::lit(rng.random_range(-limit..limit));
            }
        }
        Ok(params)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| {
                    l.as_ref().map(|p| LayerParams {
                        weights: Tensor::zeros(p.weights.shape().to_vec()),
                        bias: Tensor::zeros(p.bias.shape().to_vec()),
                    })
                })
                .collect(),
        }
    }

    /// All parameter slices in a fixed order (per layer: weights then bias).
    pub fn slices(&self) -> impl Iterator<Item = &[T]> {
        self.layers.iter().flatten().flat_map(|p| [p.weights.data(), p.bias.data()])
    }

    pub fn slices_mut(&mut self) -> impl Iterator<Item = &mut [T]> {
        self.layers.iter_mut().flatten().flat_map(|p| [p.weights.data_mut(), p.bias.data_mut()])
    }

    pub fn num_params(&self) -> usize {
        self.slices().map(|s| s.len()).sum()
    }

    /// Parameter at a flat position in `slices()` order.
    pub fn get_flat(&self, index: usize) -> T {
        let mut i = index;
        for s in self.slices() {
            if i < s.len() {
                return s[i];
            }
            i -= s.len();
        }
        panic!("parameter index {index} out of range");
    }

    pub fn set_flat(&mut self, index: usize, value: T) {
        let mut i = index;
        for s in self.slices_mut() {
            if i < s.len() {
                s[i] = value;
                return;
            }
            i -= s.len();
        }
        panic!("parameter index {index} out of range");
    }

    /// `self += other`, elementwise.
    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.slices_mut().zip(other.slices()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x = *x + *y;
            }
        }
    }

    pub fn scale(&mut self, factor: T) {
        for s in self.slices_mut() {
            for x in s {
                *x = *x * factor;
            }
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.slices()
            .flat_map(|s| s.iter())
            .map(|x| {
                let v = x.to_f64().unwrap_or(f64::NAN);
                v * v
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.slices().all(|s| s.iter().all(|x| x.is_finite()))
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            layers: self
                .layers
                .iter()
                .map(|l| l.as_ref().map(|p| LayerParams { weights: p.weights.cast(), bias: p.bias.cast() }))
                .collect(),
        }
    }

    /// Checks that every tensor has the shape `config` requires.
    pub fn check_against(&self, config: &ModelConfig) -> Result<(), NnError> {
        let shapes = config.param_shapes()?;
        if shapes.len() != self.layers.len() {
            return Err(NnError::shape(
                "params",
                format!("{} layers in params, {} in config", self.layers.len(), shapes.len()),
            ));
        }
        for (i, (want, got)) in shapes.iter().zip(&self.layers).enumerate() {
            let ok = match (want, got) {
                (None, None) => true,
                (Some((w, b)), Some(p)) => p.weights.shape() == w.as_slice() && p.bias.shape() == b.as_slice(),
                _ => false,
            };
            if !ok {
                return Err(NnError::shape("params", format!("layer {i} does not match config")));
            }
        }
        Ok(())
    }
}
