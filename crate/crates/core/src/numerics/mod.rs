//! Minimal dense numerics: parameters, a gradient tape, GRU and MLP layers,
//! RMSProp and finite-difference gradient checking. Everything is f64.

pub mod gradcheck;
pub mod kernels;
pub mod layers;
pub mod params;
pub mod rmsprop;
pub mod tape;

pub use gradcheck::{finite_diff_check, GradCheck};
pub use kernels::{log_softmax, log_sum_exp, masked_softmax};
pub use layers::{Activation, GruCell, Mlp};
pub use params::{Gradients, Param, ParamId, ParameterStore};
pub use rmsprop::{rmsprop_step, RmsPropState};
pub use tape::{backward, NodeId, Tape};
