//! Feed-forward classifiers with hand-written reverse-mode gradients.

mod io;
mod model;
mod train;

pub use io::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub(crate) use model::Network;
pub use model::{Activation, LayerLayout, ModelCheckpoint, ModelSpec, ProbVector, Provenance};
pub use train::{
    accuracy, fine_tune, init_params, train, train_with_stream, FineTuneConfig, FineTuneReport, Optimizer,
    TrainConfig,
};
