//! Simulated multi-worker training: snapshot and node placement, byte
//! accounting per traffic category, and ordered gradient synchronization.

mod ledger;
mod plan;
mod run;

pub use ledger::{allreduce_sim, ordered_mean, ring_allreduce_bytes, CommBytes, CommLedger};
pub use plan::{
    balanced_range, chunk_count, plan, Assignment, DistConfig, OverlapMode, Scheme, WorkerPlan,
};
pub use run::{run_distributed_epoch, DistEpoch, DistTrainer};

#[cfg(test)]
mod tests;
