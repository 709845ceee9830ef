//! The layer-combined network: an MLP with a readout at every hidden layer,
//! mixed per output coordinate by a nonnegative weight matrix Ω.

mod arch;
mod checkpoint;
mod forward;
mod params;

pub use arch::{Activation, Architecture, Parameterization};
pub use checkpoint::{Checkpoint, FORMAT_TAG};
pub use forward::{
    backward, combine, forward, forward_batch, mlp_output, predict, BatchTrace, ForwardTrace,
    Gradients,
};
pub(crate) use forward::{assemble_theta_grad, backprop_deltas, hidden_pass};
pub use params::{init_params, InitScheme, OmegaMatrix, ParamSet, Theta};
