//! Numerical core: tensors, differentiable kernels, reverse-mode gradients
//! and the Adam optimizer.

mod adam;
pub mod kernels;
mod real;
pub mod recurrent;
mod tape;
mod tensor;

pub use adam::{Adam, ADAM_EPS};
pub use kernels::{
    affine, batchnorm, dropout, embedding_lookup, temporal_downsample, BatchNormState, BatchStats,
    Mode, BN_EPS,
};
pub use real::{sigmoid, Real};
pub use recurrent::{recurrent_forward, Cell, Direction, RecurrentWeights};
pub use tape::{Gradients, RecurrentIds, Tape, ValueId};
pub use tensor::{Segments, Tensor};
