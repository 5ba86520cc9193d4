//! Training loop, schedules, checkpoints, configuration and experiment
//! sweeps.

mod checkpoint;
mod config;
mod experiment;
mod optim;
mod schedule;
mod train;

pub use checkpoint::{Checkpoint, RngState, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{Config, DataConfig, IMAGE_MEAN, IMAGE_STD};
pub use experiment::{run_experiment, ExperimentOptions, ExperimentReport, RunRecord, VariantSummary, EXPERIMENTS};
pub use optim::Sgd;
pub use schedule::{lr_at, TrainSchedule};
pub use train::{
    checkpoint_name, read_metrics, write_metrics, Dataset, MetricRow, RunOptions, RunResult, Sample, StepLoss, Trainer, METRICS_HEADER,
};
