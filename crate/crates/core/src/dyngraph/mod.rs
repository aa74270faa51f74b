//! Discrete dynamic graphs: snapshots, deltas, windows and sampled neighborhoods.

pub mod delta;
pub mod io;
pub mod khop;
pub mod snapshot;
pub mod synth;
pub mod window;

pub use delta::{change_ratio, extract_delta, DeltaEdge, DeltaGraph};
pub use io::{read_dataset, write_dataset, Manifest};
pub use khop::{khop, khop_delta, CgUpdate, ComputationalGraph, Fanout, HopBlock};
pub use snapshot::{DynamicGraph, Snapshot, Topology};
pub use synth::{synthesize, ChangeRatio, SynthParams};
pub use window::{schedule, sliding_windows, IterationOrder, SequenceWindow};
