//! `dgnn`: dataset synthesis, training and benchmarks.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use dgnn_core::aggregate::AggrKind;
use dgnn_core::cache::Policy;
use dgnn_core::distsim::{OverlapMode, Scheme};
use dgnn_core::dyngraph::{ChangeRatio, IterationOrder};
use dgnn_core::nn::Arch;
use dgnn_core::train::{CachePolicy, OptimizerKind};

use config::{Precision, RunConfig};

#[derive(Parser)]
#[command(
    name = "dgnn",
    version,
    about = "Dynamic GNN training with incremental aggregation and reuse caching"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dynamic graph dataset.
    Synth {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        graph: GraphFlags,
    },
    /// Train a model on a dataset and write per-epoch metrics.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelFlags,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Sweep cache capacity and policy over a simulated lookup trace.
    CacheBench {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelFlags,
        #[arg(long, value_delimiter = ',')]
        capacities: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        policies: Option<Vec<Policy>>,
        #[arg(long)]
        iteration: Option<IterationOrder>,
        /// Mini-batches in the simulated trace.
        #[arg(long)]
        batches: Option<usize>,
        /// Snapshots in the simulated trace.
        #[arg(long)]
        snapshots: Option<usize>,
    },
    /// Count the bytes each placement scheme sends in one epoch.
    CommBench {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelFlags,
        #[command(flatten)]
        graph: GraphFlags,
        /// Dataset to use instead of a synthesized graph.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        schemes: Option<Vec<Scheme>>,
        #[arg(long, value_delimiter = ',')]
        workers: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        feature_dims: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        hidden_dims: Option<Vec<usize>>,
        #[arg(long)]
        batch_size: Option<usize>,
    },
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct GraphFlags {
    #[arg(long)]
    nodes: Option<usize>,
    /// Average out-degree.
    #[arg(long)]
    deg: Option<f64>,
    /// Feature dimension.
    #[arg(long)]
    dim: Option<usize>,
    /// Number of snapshots.
    #[arg(long = "T")]
    snapshots: Option<usize>,
    /// Fraction of edges changed per step, or `uniform`.
    #[arg(long)]
    edge_change: Option<ChangeRatio>,
    /// Fraction of feature rows changed per step, or `uniform`.
    #[arg(long)]
    feat_change: Option<ChangeRatio>,
}

#[derive(Args)]
struct ModelFlags {
    #[arg(long)]
    arch: Option<Arch>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    seq_len: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    aggr: Option<AggrKind>,
    #[arg(long)]
    teacher_forcing: Option<bool>,
}

#[derive(Args)]
struct TrainFlags {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    optimizer: Option<OptimizerKind>,
    #[arg(long)]
    iteration: Option<IterationOrder>,
    #[arg(long)]
    stride: Option<usize>,
    /// Cache policy, or `off`.
    #[arg(long)]
    cache: Option<CachePolicy>,
    /// Cache capacity as a fraction of one window's input aggregations.
    #[arg(long)]
    capacity: Option<f64>,
    #[arg(long)]
    incremental: Option<bool>,
    #[arg(long)]
    evaluate: Option<bool>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    scheme: Option<Scheme>,
    #[arg(long)]
    overlap: Option<OverlapMode>,
    #[arg(long)]
    precision: Option<Precision>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(self.config.as_deref())?;
        if let Some(out) = &self.out {
            cfg.out = Some(out.clone());
        }
        if let Some(seed) = self.seed {
            cfg.set_seed(seed);
        }
        Ok(cfg)
    }
}

impl GraphFlags {
    fn apply(self, cfg: &mut RunConfig) {
        let s = &mut cfg.synth;
        set(&mut s.nodes, self.nodes);
        set(&mut s.avg_degree, self.deg);
        set(&mut s.feature_dim, self.dim);
        set(&mut s.snapshots, self.snapshots);
        set(&mut s.edge_change, self.edge_change);
        set(&mut s.feature_change, self.feat_change);
    }
}

impl ModelFlags {
    fn apply(self, cfg: &mut RunConfig) {
        let m = &mut cfg.model;
        set(&mut m.arch, self.arch);
        set(&mut m.layers, self.layers);
        set(&mut m.hidden_dim, self.hidden);
        set(&mut m.seq_len, self.seq_len);
        set(&mut m.horizon, self.horizon);
        set(&mut m.aggr, self.aggr);
        set(&mut m.teacher_forcing, self.teacher_forcing);
    }
}

impl TrainFlags {
    fn apply(self, cfg: &mut RunConfig) {
        if let Some(d) = self.dataset {
            cfg.dataset = Some(d);
        }
        let t = &mut cfg.train;
        set(&mut t.epochs, self.epochs);
        set(&mut t.batch_size, self.batch_size);
        set(&mut t.lr, self.lr);
        set(&mut t.optimizer, self.optimizer);
        set(&mut t.iteration, self.iteration);
        set(&mut t.stride, self.stride);
        set(&mut t.cache_policy, self.cache);
        set(&mut t.cache_capacity_frac, self.capacity);
        set(&mut t.incremental, self.incremental);
        set(&mut t.evaluate, self.evaluate);
        set(&mut cfg.dist.workers, self.workers);
        set(&mut cfg.dist.scheme, self.scheme);
        set(&mut cfg.dist.overlap, self.overlap);
        set(&mut cfg.precision, self.precision);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { common, graph } => {
            let mut cfg = common.load()?;
            graph.apply(&mut cfg);
            commands::synth(&cfg)
        }
        Command::Train {
            common,
            model,
            train,
        } => {
            let mut cfg = common.load()?;
            model.apply(&mut cfg);
            train.apply(&mut cfg);
            commands::train(&cfg)
        }
        Command::CacheBench {
            common,
            model,
            capacities,
            policies,
            iteration,
            batches,
            snapshots,
        } => {
            let mut cfg = common.load()?;
            model.apply(&mut cfg);
            set(&mut cfg.bench.capacities, capacities);
            set(&mut cfg.bench.policies, policies);
            set(&mut cfg.train.iteration, iteration);
            set(&mut cfg.bench.trace_batches, batches);
            set(&mut cfg.bench.trace_snapshots, snapshots);
            commands::cache_bench(&cfg)
        }
        Command::CommBench {
            common,
            model,
            graph,
            dataset,
            schemes,
            workers,
            feature_dims,
            hidden_dims,
            batch_size,
        } => {
            let mut cfg = common.load()?;
            model.apply(&mut cfg);
            graph.apply(&mut cfg);
            if dataset.is_some() {
                cfg.dataset = dataset;
            }
            set(&mut cfg.bench.schemes, schemes);
            set(&mut cfg.bench.workers, workers);
            set(&mut cfg.bench.feature_dims, feature_dims);
            set(&mut cfg.bench.hidden_dims, hidden_dims);
            set(&mut cfg.train.batch_size, batch_size);
            commands::comm_bench(&cfg)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
