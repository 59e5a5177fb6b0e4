//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] is rebuilt for every forward pass. Leaves are registered with
//! [`Tape::leaf`] (tracked) or [`Tape::constant`] (untracked); every op
//! appends a node, and [`Tape::backward`] sweeps the nodes in reverse from a
//! scalar output. Nodes that do not depend on a tracked leaf are skipped
//! during the sweep, so sampling passes that only need `∂E/∂Y` never pay for
//! parameter gradients.
//!
//! Broadcasting is limited to a right-hand operand whose shape is a trailing
//! suffix of the left-hand operand (bias add, per-row weights).

mod tape;
mod tensor;

pub use tape::{sigmoid, sort_desc_columns, Gradients, Reduce, Tape, Var};
pub use tensor::Tensor;
