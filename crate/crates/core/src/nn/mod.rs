//! Neural substrate: dense layers, graph convolutions, recurrent cells and
//! the stacked and integrated dynamic-GNN models, with hand-written
//! backward passes.

mod cell;
mod exec;
mod gcn;
pub mod gradcheck;
mod loss;
mod model;
mod params;

pub use cell::{CellGrads, CellKind, CellOut, CellTape, RnnCell};
pub use exec::{
    AggCache, AggSource, ExecEnv, ExecStats, IncrementalInputs, InputSource, ScratchInputs,
};
pub use gcn::{Activation, GcnLayer, Normalization};
pub use gradcheck::{finite_difference_check, FdReport};
pub use loss::loss_mae;
pub use model::{Arch, DgnnModel, ForwardPass, ModelConfig, Sample};
pub use params::{Grads, Linear, Params};
