//! Dense tensors with tape-based reverse-mode automatic differentiation.
//!
//! Values live on a [`Tape`]; every operation appends a node and returns a
//! [`Var`] handle. [`Tape::backward`] replays the nodes in reverse and
//! accumulates gradients into the leaves.
//!
//! ```
//! use xint_tensor::{Tape, Tensor};
//!
//! let mut tape = Tape::<f64>::new();
//! let x = tape.leaf(Tensor::from_vec(&[2], vec![1.0, 2.0]));
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum(sq);
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 4.0]);
//! ```

mod error;
pub mod gradcheck;
mod ops;
mod rng;
mod scalar;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use ops::activation::{sigmoid, softmax_row, Activation};
pub use ops::norm::{BatchNormConfig, RunningStats};
pub use rng::{Rng, RngState};
pub use scalar::{DType, Scalar};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
