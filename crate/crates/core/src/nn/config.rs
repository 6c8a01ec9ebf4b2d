use serde::{Deserialize, Serialize};

use super::error::NnError;
use super::ops::KERNEL;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Softmax,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Layer {
    /// 3x3, stride 1, valid padding.
    Conv2d {
        filters: usize,
        activation: Activation,
    },
    MaxPool2x2,
    Dropout {
        rate: f32,
    },
    Flatten,
    Dense {
        units: usize,
        activation: Activation,
    },
}

impl Layer {
    pub fn has_params(&self) -> bool {
        matches!(self, Layer::Conv2d { .. } | Layer::Dense { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Per-sample input shape `[H, W, C]`.
    pub input_shape: [usize; 3],
    pub layers: Vec<Layer>,
    pub include_dropout: bool,
}

/// `(weight shape, bias shape)` of one layer.
pub type ParamShape = (Vec<usize>, Vec<usize>);

impl ModelConfig {
    /// The Keras MNIST example network:
    /// Conv(32) Conv(64) MaxPool [Dropout .25] Flatten Dense(128) [Dropout .5] Dense(10).
    pub fn table1(include_dropout: bool) -> Self {
        let mut layers = vec![
            Layer::Conv2d { filters: 32, activation: Activation::Relu },
            Layer::Conv2d { filters: 64, activation: Activation::Relu },
            Layer::MaxPool2x2,
            Layer::Dropout { rate: 0.25 },
            Layer::Flatten,
            Layer::Dense { units: 128, activation: Activation::Relu },
            Layer::Dropout { rate: 0.5 },
            Layer::Dense { units: 10, activation: Activation::Softmax },
        ];
        if !include_dropout {
            layers.retain(|l| !matches!(l, Layer::Dropout { .. }));
        }
        Self { input_shape: [28, 28, 1], layers, include_dropout }
    }

    /// Scaled-down variant used for gradient checks: 8x8 input,
    /// Conv(2) Conv(3) MaxPool Flatten Dense(8) Dense(4).
    pub fn downscaled() -> Self {
        Self {
            input_shape: [8, 8, 1],
            layers: vec![
                Layer::Conv2d { filters: 2, activation: Activation::Relu },
                Layer::Conv2d { filters: 3, activation: Activation::Relu },
                Layer::MaxPool2x2,
                Layer::Flatten,
                Layer::Dense { units: 8, activation: Activation::Relu },
                Layer::Dense { units: 4, activation: Activation::Softmax },
            ],
            include_dropout: false,
        }
    }

    /// Same network with every dropout layer removed.
    pub fn without_dropout(&self) -> Self {
        Self {
            input_shape: self.input_shape,
            layers: self.layers.iter().filter(|l| !matches!(l, Layer::Dropout { .. })).cloned().collect(),
            include_dropout: false,
        }
    }

    pub fn num_classes(&self) -> usize {
        match self.layers.last() {
            Some(Layer::Dense { units, .. }) => *units,
            _ => 0,
        }
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    /// Per-sample output shape of every layer, validating the stack on the way.
    pub fn shape_chain(&self) -> Result<Vec<Vec<usize>>, NnError> {
        let mut shape = self.input_shape.to_vec();
        let mut chain = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let bad = |detail: String| NnError::shape("model_config", format!("layer {i}: {detail}"));
            shape = match layer {
                Layer::Conv2d { filters, activation } => {
                    if shape.len() != 3 || shape[0] < KERNEL || shape[1] < KERNEL {
                        return Err(bad(format!("conv needs [H>=3,W>=3,C], got {shape:?}")));
                    }
                    if *activation != Activation::Relu || *filters == 0 {
                        return Err(bad("conv must have ReLU and >0 filters".into()));
                    }
                    vec![shape[0] - 2, shape[1] - 2, *filters]
                }
                Layer::MaxPool2x2 => {
                    if shape.len() != 3 || !shape[0].is_multiple_of(2) || !shape[1].is_multiple_of(2) {
                        return Err(bad(format!("pool needs even [H,W,C], got {shape:?}")));
                    }
                    vec![shape[0] / 2, shape[1] / 2, shape[2]]
                }
                Layer::Dropout { rate } => {
                    if !(0.0..1.0).contains(rate) {
                        return Err(bad(format!("dropout rate {rate} outside [0,1)")));
                    }
                    shape
                }
                Layer::Flatten => vec![shape.iter().product()],
                Layer::Dense { units, activation } => {
                    if shape.len() != 1 {
                        return Err(bad(format!("dense needs a flat input, got {shape:?}")));
                    }
                    let last = i + 1 == self.layers.len();
                    if (*activation == Activation::Softmax) != last || *units == 0 {
                        return Err(bad("softmax must be exactly the final dense layer".into()));
                    }
                    vec![*units]
                }
            };
            chain.push(shape.clone());
        }
        if !matches!(self.layers.last(), Some(Layer::Dense { activation: Activation::Softmax, .. })) {
            return Err(NnError::shape("model_config", "network must end in a softmax dense layer"));
        }
        let has_dropout = self.layers.iter().any(|l| matches!(l, Layer::Dropout { .. }));
        if has_dropout != self.include_dropout {
            return Err(NnError::shape(
                "model_config",
                format!("include_dropout={} but dropout layers present={has_dropout}", self.include_dropout),
            ));
        }
        Ok(chain)
    }

    /// `(weight shape, bias shape)` for every parameterised layer, by layer index.
    pub fn param_shapes(&self) -> Result<Vec<Option<ParamShape>>, NnError> {
        let chain = self.shape_chain()?;
        let mut prev = self.input_shape.to_vec();
        let mut out = Vec::with_capacity(self.layers.len());
        for (layer, shape) in self.layers.iter().zip(&chain) {
            out.push(match layer {
                Layer::Conv2d { filters, .. } => Some((vec![KERNEL, KERNEL, prev[2], *filters], vec![*filters])),
                Layer::Dense { units, .. } => Some((vec![prev[0], *units], vec![*units])),
                _ => None,
            });
            prev = shape.clone();
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table1_shape_chain() {
        let chain = ModelConfig::table1(true).shape_chain().unwrap();
        let expected: Vec<Vec<usize>> = vec![
            vec![26, 26, 32],
            vec![24, 24, 64],
            vec![12, 12, 64],
            vec![12, 12, 64],
            vec![9216],
            vec![128],
            vec![128],
            vec![10],
        ];
        assert_eq!(chain, expected);
    }

    #[test]
    fn dropout_removal_is_the_only_difference() {
        let with = ModelConfig::table1(true);
        let without = ModelConfig::table1(false);
        assert_eq!(with.without_dropout(), without);
        assert_eq!(without.layers.len(), with.layers.len() - 2);
        assert_eq!(without.num_classes(), 10);
        assert_eq!(with.num_classes(), 10);
        let kept: Vec<_> = with.layers.iter().filter(|l| !matches!(l, Layer::Dropout { .. })).collect();
        assert_eq!(kept, without.layers.iter().collect::<Vec<_>>());
    }

    #[test]
    fn dense_fan_in_is_9216() {
        let shapes = ModelConfig::table1(false).param_shapes().unwrap();
        let dense1 = shapes.iter().flatten().nth(2).unwrap();
        assert_eq!(dense1.0, vec![9216, 128]);
    }

    #[test]
    fn downscaled_is_valid() {
        let chain = ModelConfig::downscaled().shape_chain().unwrap();
        assert_eq!(chain.last().unwrap(), &vec![4]);
        assert_eq!(chain[3], vec![12]);
    }

    #[test]
    fn inconsistent_dropout_flag_is_rejected() {
        let mut cfg = ModelConfig::table1(true);
        cfg.include_dropout = false;
        assert!(cfg.shape_chain().is_err());
    }
}
