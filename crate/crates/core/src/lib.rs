// `Float` is f32 under the `f32` feature, so widening casts are not always no-ops.
#![allow(clippy::unnecessary_cast)]

pub mod autodiff;
pub mod checkpoint;
pub mod classifier;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod text;
pub mod train;

pub use autodiff::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::{Float, Tensor};
