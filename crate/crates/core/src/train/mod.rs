//! Mini-batch training loops in sequence-first and node-first order.

mod config;
mod data;
mod epoch;
mod optim;

pub use config::{CachePolicy, TrainConfig};
pub use data::{make_batches, sample_neighborhoods, BatchData, TrainData};
pub use epoch::{
    cache_capacity, canonical_mean, epoch_csv, input_sources, new_cache, node_first_epoch,
    sample_maes, seq_first_epoch, write_epoch_csv, BoxedInputs, EpochReport, SampleResult, Trainer,
    EPOCH_CSV_HEADER,
};
pub use optim::{Optimizer, OptimizerKind, OptimizerSettings};
