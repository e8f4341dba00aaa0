//! Dense arrays, a define-by-run tape, and the optimizer.

pub mod array;
pub mod gradcheck;
pub mod graph;
pub mod optim;
pub mod params;
pub mod rng;

pub use array::Array;
pub use graph::{softmax_array, Gradients, Graph, Precision, Var};
pub use optim::{adam_step, clip_global_norm, global_norm, Adam, AdamConfig, Moments};
pub use params::{ParamId, ParamStore};
pub use rng::RngStream;
