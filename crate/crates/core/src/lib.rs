//! Adaptive image restoration with hypernetwork-generated kernels.
//!
//! A [`HyperRestoreModel`] holds one `(w, b)` meta block per residual-block
//! convolution. For a degradation level mapped to `c ∈ [0, 1]` the kernels
//! are `c·w + b`; the head and tail of the network are shared by all levels.

pub mod checkpoint;
pub mod datasets;
pub mod degrade;
pub mod error;
pub mod estimator;
pub mod eval;
pub mod hypernet;
pub mod metrics;
pub mod model;
pub mod net;
pub mod optim;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use checkpoint::{read_header, Checkpoint, CheckpointHeader};
pub use degrade::{degrade, DegradationSpec, LevelRange, Task};
pub use error::{CheckpointError, Error, Result};
pub use hypernet::{HyperNetwork, KernelShape, MetaBlock};
pub use model::HyperRestoreModel;
pub use net::{ArchConfig, ParamBreakdown};
pub use tape::{Tape, Var};
pub use tensor::{Scalar, Tensor};
pub use trainer::{train, train_step, TrainConfig, TrainState};
