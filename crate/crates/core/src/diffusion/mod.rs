//! Gaussian diffusion over interaction rows with an x0-predicting MLP.

pub mod checkpoint;
pub mod denoiser;
pub mod infer;
pub mod model;
pub mod optim;
pub mod schedule;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use denoiser::{timestep_embedding, Denoiser, DenoiserGrads, DenoiserShape};
pub use infer::{infer, infer_batch, AggregationPlacement, InferenceConfig};
pub use model::{
    prepare_batch, AccessCounters, AccessSnapshot, AggregationSettings, CDiffModel, ModelGrads, NeighborContext,
    PreparedBatch, QuerySlot,
};
pub use optim::{AdamW, AdamWConfig};
pub use schedule::{
    forward_sample, forward_sample_into, loss_weight_from, make_schedule, posterior_mean, posterior_mean_coefficients,
    posterior_variance_from, reconstruction_loss, DiffusionSchedule, ScheduleParams,
};
pub use train::{train, EpochRecord, TrainConfig, TrainHistory, TrainOutcome};
