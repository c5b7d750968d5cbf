//! Dense tensors, a reverse-mode tape, LSTM cells and gradient checking.

mod gradcheck;
mod graph;
mod lstm;
mod params;
mod tensor;

pub use gradcheck::{grad_check, grad_check_coords, GradCheckReport};
pub use graph::{Graph, NodeId};
pub use lstm::{lstm_cell, LayerState, LstmLayer, LstmState};
pub use params::{Gradients, ParamId, ParamStore};
pub use tensor::{sigmoid, softmax, softmax_slice, Tensor};
