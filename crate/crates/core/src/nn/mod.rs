//! Small dense-network toolkit: parameters, forward/backward, Adam.

mod adam;
mod arch;
mod embed;
mod network;
mod params;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use arch::{Activation, ArchDescriptor, NetKind, DEFAULT_TIME_DIM};
pub use embed::time_embed;
pub use network::{loss_and_output_grad, ForwardCache, LossSpec, Mode, NetInput, Network, BN_EPS};
pub use params::{Param, ParamKind, ParamSet, Tensor};
