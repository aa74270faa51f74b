//! Run configuration: a TOML file merged with command-line overrides.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dgnn_core::cache::trace::{TraceArch, TraceConfig};
use dgnn_core::cache::Policy;
use dgnn_core::distsim::{DistConfig, Scheme};
use dgnn_core::dyngraph::{ChangeRatio, IterationOrder, SynthParams};
use dgnn_core::nn::ModelConfig;
use dgnn_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

pub const RESOLVED_CONFIG: &str = "resolved_config.toml";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub nodes: usize,
    pub avg_degree: f64,
    pub feature_dim: usize,
    pub snapshots: usize,
    pub edge_change: ChangeRatio,
    pub feature_change: ChangeRatio,
    pub seed: u64,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            nodes: 1000,
            avg_degree: 8.0,
            feature_dim: 16,
            snapshots: 100,
            edge_change: ChangeRatio::Fixed(0.04),
            feature_change: ChangeRatio::Fixed(0.04),
            seed: 0,
        }
    }
}

impl SynthSection {
    pub fn params(&self) -> SynthParams {
        SynthParams {
            num_nodes: self.nodes,
            avg_degree: self.avg_degree,
            feature_dim: self.feature_dim,
            num_snapshots: self.snapshots,
            edge_change: self.edge_change,
            feature_change: self.feature_change,
            seed: self.seed,
        }
    }
}

/// Sweep settings of the cache and communication benchmarks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub capacities: Vec<f64>,
    pub policies: Vec<Policy>,
    /// Mini-batches and snapshots of the simulated cache trace.
    pub trace_batches: usize,
    pub trace_snapshots: usize,
    /// Elements of one aggregation in the simulated trace.
    pub trace_units: u64,
    pub schemes: Vec<Scheme>,
    pub workers: Vec<usize>,
    pub feature_dims: Vec<usize>,
    pub hidden_dims: Vec<usize>,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            capacities: (1..=10).map(|i| f64::from(i) / 10.0).collect(),
            policies: vec![Policy::Reinc, Policy::Lru, Policy::Lfu],
            trace_batches: 4,
            trace_snapshots: 24,
            trace_units: 1600,
            schemes: Scheme::ALL.to_vec(),
            workers: vec![1, 2, 4],
            feature_dims: vec![16, 128],
            hidden_dims: vec![16, 64],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub precision: Precision,
    pub synth: SynthSection,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub dist: DistConfig,
    pub bench: BenchSection,
}

impl RunConfig {
    /// Defaults, overlaid by `path` when given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.synth.seed = seed;
        self.train.seed = seed;
    }

    pub fn out_dir(&self) -> Result<&Path> {
        match &self.out {
            Some(p) => Ok(p),
            None => bail!("no output directory: pass --out or set `out` in the config"),
        }
    }

    pub fn dataset_dir(&self) -> Result<&Path> {
        match &self.dataset {
            Some(p) => Ok(p),
            None => bail!("no dataset: pass --dataset or set `dataset` in the config"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.dist.workers == 0 {
            bail!("dist.workers must be at least 1");
        }
        Ok(())
    }

    /// Creates the output directory and records this configuration in it.
    pub fn write_resolved(&self) -> Result<PathBuf> {
        let out = self.out_dir()?.to_path_buf();
        fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        let text = toml::to_string(self).context("serializing the resolved config")?;
        fs::write(out.join(RESOLVED_CONFIG), text)?;
        Ok(out)
    }

    /// The lookup trace of the configured model.
    pub fn trace_config(&self, order: IterationOrder) -> TraceConfig {
        let m = &self.model;
        TraceConfig {
            arch: if m.arch.is_integrated() {
                TraceArch::Integrated
            } else {
                TraceArch::Stacked
            },
            layers: m.layers,
            gates: m.arch.cell_kind().gates(),
            seq_len: m.seq_len,
            stride: self.train.stride,
            horizon: m.horizon,
            teacher_forcing: m.teacher_forcing,
            num_snapshots: self.bench.trace_snapshots,
            num_batches: self.bench.trace_batches,
            order,
            input_units: self.bench.trace_units,
            hidden_units: self.bench.trace_units,
        }
    }
}
