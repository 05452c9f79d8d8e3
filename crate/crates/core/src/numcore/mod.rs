//! Dense tensors, reverse-mode differentiation, Adam and gradient checking.

mod adam;
mod checkpoint;
mod gradcheck;
mod graph;
pub mod linalg;
mod params;
mod real;
mod seed;
mod tensor;

pub use adam::{adam_step, Adam, AdamConfig, AdamState};
pub use checkpoint::{config_hash, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use gradcheck::{check_graph_fn, grad_check, GradCheckReport};
pub use graph::{Conv2dSpec, Gradients, Graph, Var};
pub(crate) use graph::as_points;
pub use params::{ParamId, ParamStore, Parameter};
pub use real::{DType, Real};
pub use seed::mix_seed;
pub use tensor::Tensor;
