//! Saccadic spike self-attention (SSSA) engine.
//!
//! The crate is generic over the scalar type through [`Scalar`]; the aliases
//! below fix it to `f64`, which is what every study and the CLI use.

pub mod analysis;
pub mod attention;
pub mod autodiff;
pub mod blocks;
pub mod checkpoint;
pub mod counter;
pub mod error;
pub mod neurons;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod train;
pub mod verify;

pub use counter::OpCounter;
pub use error::{Error, Result};
pub use rng::RngState;
pub use scalar::Scalar;
pub use tensor::{SpikeTensor, Tensor};

pub type RealTensor = Tensor<f64>;
pub type SaccadicParams = neurons::SaccadicParams<f64>;
pub type LifParams = neurons::LifParams<f64>;
pub type Model = blocks::SnnVit<f64>;
pub type Tape = autodiff::Tape<f64>;
