//! Completion network: a U-Net generator that shares features across the
//! views of one shape through a pooled shape memory, a patch discriminator,
//! the adversarial and reconstruction objectives, and Adam training.

pub mod adam;
pub mod checkpoint;
pub mod config;
pub mod discriminator;
pub mod generator;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod memory;
pub mod tensor;
pub mod train;

pub use adam::{Adam, AdamConfig, Module};
pub use config::{MemoryReset, NetConfig, PoolPosition, TrainConfig};
pub use discriminator::Discriminator;
pub use generator::{Descriptor, Generator};
pub use memory::{view_pool, Pooling, ShapeMemory};
pub use tensor::Tensor;
pub use train::{complete_shape, Batch, Completion, StepMetrics, TrainState, TrainingShape};
