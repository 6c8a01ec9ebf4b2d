//! Noise-stimulus model extraction laboratory.
//!
//! A victim CNN is trained on an MNIST-family dataset, queried with
//! procedurally generated noise, and a clone is trained on the resulting
//! stimulus/response pairs. The crate is split into:
//!
//! - [`nn`]: the CNN engine (layers, backprop, Adadelta, checkpoints)
//! - [`datasets`]: IDX loading and the dataset registry
//! - [`noise`]: Bernoulli, i.i.d. and Ising stimulus generators
//! - [`extraction`]: the end-to-end pipeline and its experiments
//! - [`reporting`]: confusion matrices, class histograms, JSON/CSV output

pub(crate) mod container;
pub mod datasets;
pub mod extraction;
pub mod nn;
pub mod noise;
pub mod reporting;
