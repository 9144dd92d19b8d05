//! Minimal dense-numeric layer: vectors, matrices, linear layers, a one-step
//! LSTM cell, softmax and the Adam optimizer.
//!
//! Everything is `f64` and every layer carries its own gradient buffers with
//! an explicit analytic backward pass. There is no autodiff graph: training
//! samples are fixed-depth computations (the recurrent core is only ever
//! unrolled one step), so hand gradients are both tractable and fast.

mod adam;
mod linear;
mod lstm;
mod ops;
mod tensor;

pub use adam::AdamState;
pub use linear::{LinearLayer, Mlp, MlpCache};
pub use lstm::{LstmCache, LstmCell};
pub use ops::{argmax_tie_lowest, relu, sigmoid, softmax, softmax_in_place};
pub use tensor::{Matrix, Vector};
