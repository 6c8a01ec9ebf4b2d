//! `XLAB` model checkpoints: magic, version, layer descriptor, tensors.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::config::{Activation, Layer, ModelConfig};
use super::error::NnError;
use super::params::{LayerParams, ModelParams};
use crate::container::*;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"XLAB";
pub const CHECKPOINT_VERSION: u32 = 1;

const TAG_CONV: u8 = 0;
const TAG_POOL: u8 = 1;
const TAG_DROPOUT: u8 = 2;
const TAG_FLATTEN: u8 = 3;
const TAG_DENSE: u8 = 4;

fn activation_code(a: Activation) -> u8 {
    match a {
        Activation::Relu => 0,
        Activation::Softmax => 1,
    }
}

fn activation_from(code: u8) -> Result<Activation, NnError> {
    match code {
        0 => Ok(Activation::Relu),
        1 => Ok(Activation::Softmax),
        c => Err(NnError::Checkpoint(format!("unknown activation code {c}"))),
    }
}

pub fn write_checkpoint<W: Write>(w: &mut W, config: &ModelConfig, params: &ModelParams<f32>) -> Result<(), NnError> {
    params.check_against(config)?;
    write_header(w, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
    for &d in &config.input_shape {
        write_u32(w, d as u32)?;
    }
    write_u8(w, config.include_dropout as u8)?;
    write_u32(w, config.layers.len() as u32)?;
    for layer in &config.layers {
        match layer {
            Layer::Conv2d { filters, activation } => {
                write_u8(w, TAG_CONV)?;
                write_u32(w, *filters as u32)?;
                write_u32(w, 3)?;
                write_u8(w, activation_code(*activation))?;
            }
            Layer::MaxPool2x2 => {
                write_u8(w, TAG_POOL)?;
                write_u32(w, 2)?;
            }
            Layer::Dropout { rate } => {
                write_u8(w, TAG_DROPOUT)?;
                write_f32(w, *rate)?;
            }
            Layer::Flatten => write_u8(w, TAG_FLATTEN)?,
            Layer::Dense { units, activation } => {
                write_u8(w, TAG_DENSE)?;
                write_u32(w, *units as u32)?;
                write_u8(w, activation_code(*activation))?;
            }
        }
    }
    let tensors: Vec<_> = params.layers.iter().flatten().flat_map(|p| [&p.weights, &p.bias]).collect();
    write_u32(w, tensors.len() as u32)?;
    for t in tensors {
        write_tensor(w, t)?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<(ModelConfig, ModelParams<f32>), NnError> {
    let version = read_header(r, CHECKPOINT_MAGIC).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    if version != CHECKPOINT_VERSION {
        return Err(NnError::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let mut input_shape = [0usize; 3];
    for d in &mut input_shape {
        *d = read_u32(r)? as usize;
    }
    let include_dropout = match read_u8(r)? {
        0 => false,
        1 => true,
        b => return Err(NnError::Checkpoint(format!("bad include_dropout byte {b}"))),
    };
    let count = read_u32(r)? as usize;
    if count > 64 {
        return Err(NnError::Checkpoint(format!("implausible layer count {count}")));
    }
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        layers.push(match read_u8(r)? {
            TAG_CONV => {
                let filters = read_u32(r)? as usize;
                let kernel = read_u32(r)?;
                if kernel != 3 {
                    return Err(NnError::Checkpoint(format!("unsupported kernel size {kernel}")));
                }
                Layer::Conv2d { filters, activation: activation_from(read_u8(r)?)? }
            }
            TAG_POOL => {
                let size = read_u32(r)?;
                if size != 2 {
                    return Err(NnError::Checkpoint(format!("unsupported pool size {size}")));
                }
                Layer::MaxPool2x2
            }
            TAG_DROPOUT => Layer::Dropout { rate: read_f32(r)? },
            TAG_FLATTEN => Layer::Flatten,
            TAG_DENSE => Layer::Dense { units: read_u32(r)? as usize, activation: activation_from(read_u8(r)?)? },
            t => return Err(NnError::Checkpoint(format!("unknown layer tag {t}"))),
        });
    }
    let config = ModelConfig { input_shape, layers, include_dropout };
    let shapes = config.param_shapes()?;
    let n_tensors = read_u32(r)? as usize;
    let expected = shapes.iter().flatten().count() * 2;
    if n_tensors != expected {
        return Err(NnError::Checkpoint(format!("{n_tensors} tensors stored, config needs {expected}")));
    }
    let mut param_layers = Vec::with_capacity(shapes.len());
    for s in &shapes {
        param_layers.push(match s {
            None => None,
            Some(_) => Some(LayerParams {
                weights: read_tensor(r).map_err(|e| NnError::Checkpoint(e.to_string()))?,
                bias: read_tensor(r).map_err(|e| NnError::Checkpoint(e.to_string()))?,
            }),
        });
    }
    let params = ModelParams { layers: param_layers };
    params.check_against(&config)?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(NnError::Checkpoint("trailing bytes after last tensor".into()));
    }
    Ok((config, params))
}

pub fn save_checkpoint(path: &Path, config: &ModelConfig, params: &ModelParams<f32>) -> Result<(), NnError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, config, params)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, ModelParams<f32>), NnError> {
    let mut r = BufReader::new(File::open(path)?);
    read_checkpoint(&mut r)
}
