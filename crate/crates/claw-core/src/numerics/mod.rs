//! Differentiable-computation substrate: parameters, the reverse-mode graph,
//! dense and recurrent blocks, the Adam optimizer, finite-difference checks,
//! special functions and the checkpoint container.

pub mod adam;
pub mod checkpoint;
pub mod dense;
pub mod fd;
pub mod graph;
pub mod gru;
pub mod param;
pub mod scalar;
pub mod special;

pub use adam::Adam;
pub use dense::{mlp_widths, Activation, DenseBlock, DenseVars};
pub use fd::{fd_check, FdReport};
pub use graph::{Graph, Var};
pub use gru::{GruVars, RecurrentCell};
pub use param::{ParamId, ParamStore, Parameter};
pub use scalar::{Dtype, Scalar};
