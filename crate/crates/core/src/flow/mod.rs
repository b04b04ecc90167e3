//! Conditional normalizing flow over voxel features.

mod checkpoint;
mod coupling;
mod model;
mod positional;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use coupling::{CouplingLayer, Subnet, SubnetNodes};
pub use model::{FlowConfig, FlowModel, FlowNodes};
pub use positional::{positional_encoding, positional_grid};
