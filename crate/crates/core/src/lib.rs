//! Variational autoencoders trained with a short-time Fourier reconstruction
//! loss that weights local phase above amplitude, plus the tensors, reverse-mode
//! autodiff, spectral transforms and data tooling they are built on.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod experiments;
pub mod filter;
pub mod losses;
pub mod optim;
pub mod spectral;
pub mod tensor;
pub mod vae;

pub use error::{Error, Result};
pub use tensor::{ComplexTensor, Float, Tensor};
