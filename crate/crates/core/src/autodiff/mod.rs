//! Dense-tensor numeric core with reverse-mode automatic differentiation.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{finite_difference_check, GradCheckReport};
pub use graph::{matmul_raw, Graph, NodeId};
pub use tensor::Tensor;
