//! Desk-scale manifold-aware synthesis: deterministic phantoms and a small
//! trainable generator/discriminator pair exercising the full loss stack.

pub mod layers;
pub mod nets;
pub mod phantom;
pub mod train;

pub use nets::{Discriminator, Generator, OutputActivation};
pub use phantom::{phantom_gen, DiffusionModel, Geometry, Phantom, PhantomSpec};
pub use train::{
    evaluate, generate_volume, trace_csv, train_toy, EpochRecord, EvalMetrics, TrainConfig,
    TrainOutput, TRACE_HEADER,
};
