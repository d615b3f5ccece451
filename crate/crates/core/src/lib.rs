//! From-scratch convolutional network engine for land-structure scene
//! classification: tensors and im2col convolution, layers with hand-written
//! backward passes, SGD/Adam/RMSProp, a seeded image pipeline, early-stopped
//! training, classification metrics, and an experiment grid runner.

pub mod arch;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod layers;
pub mod metrics;
pub mod network;
pub mod optim;
pub mod runner;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use network::{ArchDescriptor, Network};
pub use tensor::{Scalar, Tensor};
