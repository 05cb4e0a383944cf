//! Variational auto-encoders with a Householder-flow posterior.
//!
//! The crate is self-contained: a small reverse-mode autodiff engine
//! ([`autodiff`]) carries the encoder, decoder, flow and objective
//! ([`model`]); [`optim`] trains them and [`data`] prepares MNIST-style and
//! image-patch datasets.

pub mod autodiff;
pub mod data;
pub mod distributions;
pub mod error;
pub mod flows;
pub mod model;
pub mod optim;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Shape, TensorValue};
