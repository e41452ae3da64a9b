//! Parameter storage and the small layer vocabulary shared by the models.

mod layers;
mod params;

pub use layers::{init_mlp2, linear, mlp2};
pub use params::{init_head, init_linear, uniform_tensor, Bound, ParamStore, HEAD_GAIN};
