use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use dgnn_core::cache::trace::{generate, hit_rate_at, max_hit_rate};
use dgnn_core::distsim::{DistConfig, DistTrainer};
use dgnn_core::dyngraph::{read_dataset, synthesize, write_dataset, DynamicGraph, Snapshot};
use dgnn_core::nn::{DgnnModel, ModelConfig, Params};
use dgnn_core::train::{write_epoch_csv, EpochReport, TrainData, Trainer};
use dgnn_core::{Matrix, Scalar};
use serde::Serialize;

use crate::config::{Precision, RunConfig};

pub const CACHE_BENCH_HEADER: &str = "policy,capacity_frac,hit_rate,hits,misses,evictions,expirations,rejections,oracle_max_hit_rate";
pub const COMM_BENCH_HEADER: &str =
    "scheme,M,feature_dim,hidden_dim,remote_feature_bytes,redistribution_bytes,grad_sync_bytes";
pub const LEDGER_HEADER: &str =
    "epoch,worker,remote_features,intermediate_redistribution,gradient_sync,snapshot_fetch";

pub fn synth(cfg: &RunConfig) -> Result<()> {
    let out = cfg.out_dir()?;
    let graph = synthesize::<f32>(&cfg.synth.params())?;
    write_dataset(&graph, out).with_context(|| format!("writing dataset to {}", out.display()))?;
    cfg.write_resolved()?;
    let deltas: usize = graph
        .snapshots()
        .windows(2)
        .filter(|w| w[0].edge_pairs() != w[1].edge_pairs())
        .count();
    println!(
        "dataset {}: nodes={} feature_dim={} T={} edges_t0={} snapshots_with_edge_changes={}",
        out.display(),
        graph.num_nodes(),
        graph.feature_dim(),
        graph.len(),
        graph.snapshot(0).num_edges(),
        deltas
    );
    Ok(())
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    match cfg.precision {
        Precision::F32 => train_as::<f32>(cfg),
        Precision::F64 => train_as::<f64>(cfg),
    }
}

fn log_epoch(r: &EpochReport) {
    let mae = r.mae.map(|m| format!(" mae={m:.6}")).unwrap_or_default();
    eprintln!(
        "epoch {}: loss={:.6}{mae} hit_rate={:.4} kernels={} comm_bytes={} samples/s={:.1}",
        r.epoch,
        r.loss,
        r.cache.hit_rate(),
        r.exec.kernel_invocations,
        r.comm_bytes,
        r.samples_per_sec()
    );
}

#[derive(Serialize)]
struct Tensor<'a> {
    name: &'a str,
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

fn write_params<T: Scalar>(params: &Params<T>, path: &Path) -> Result<()> {
    let tensors: Vec<Tensor<'_>> = (0..params.len())
        .map(|i| {
            let m = params.get(i);
            Tensor {
                name: params.name(i),
                rows: m.rows(),
                cols: m.cols(),
                values: m.as_slice().iter().map(|v| v.as_f64()).collect(),
            }
        })
        .collect();
    fs::write(path, serde_json::to_string(&tensors)?)?;
    Ok(())
}

fn train_as<T: Scalar>(cfg: &RunConfig) -> Result<()> {
    let dataset = cfg.dataset_dir()?;
    let graph = read_dataset::<T>(dataset)
        .with_context(|| format!("loading dataset {}", dataset.display()))?;
    let out = cfg.write_resolved()?;
    let reports = if cfg.dist.workers == 1 {
        let (tc, mc) = (&cfg.train, &cfg.model);
        let data = TrainData::prepare(
            &graph,
            mc,
            tc.batch_size,
            tc.stride,
            tc.seed,
            0..graph.len(),
            None,
        )?;
        let model = DgnnModel::new(mc.clone(), graph.feature_dim(), tc.seed)?;
        let mut trainer = Trainer::new(model, tc.clone(), data.data_units())?;
        let reports = trainer.fit(&data, log_epoch)?;
        write_params(&trainer.model.params, &out.join("params.json"))?;
        reports
    } else {
        let mut trainer = DistTrainer::new(&graph, cfg.model.clone(), cfg.train.clone(), cfg.dist)?;
        let epochs = trainer.fit(|e| log_epoch(&e.merged))?;
        let mut ledger = String::from(LEDGER_HEADER);
        ledger.push('\n');
        for e in &epochs {
            for (w, c) in e.ledger.per_worker.iter().enumerate() {
                let _ = writeln!(
                    ledger,
                    "{},{w},{},{},{},{}",
                    e.merged.epoch,
                    c.remote_features,
                    c.intermediate_redistribution,
                    c.gradient_sync,
                    c.snapshot_fetch
                );
            }
        }
        fs::write(out.join("comm_ledger.csv"), ledger)?;
        write_params(&trainer.model(0).params, &out.join("params.json"))?;
        epochs.into_iter().map(|e| e.merged).collect()
    };
    let metrics = out.join("epoch_metrics.csv");
    write_epoch_csv(&metrics, &reports)?;
    println!("{}", metrics.display());
    Ok(())
}

pub fn cache_bench(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let out = cfg.write_resolved()?;
    let tc = cfg.trace_config(cfg.train.iteration);
    let trace = generate(&tc);
    let oracle = max_hit_rate(&trace);
    let mut csv = String::from(CACHE_BENCH_HEADER);
    csv.push('\n');
    for &policy in &cfg.bench.policies {
        for &frac in &cfg.bench.capacities {
            let s = hit_rate_at(&tc, &trace, policy, frac)?;
            let _ = writeln!(
                csv,
                "{policy},{frac},{},{},{},{},{},{},{oracle}",
                s.hit_rate(),
                s.hits,
                s.misses,
                s.evictions,
                s.expirations,
                s.rejections
            );
        }
    }
    let path = out.join("cache_bench.csv");
    fs::write(&path, csv)?;
    println!("{}", path.display());
    Ok(())
}

/// `graph` restricted to its first `d` feature columns.
fn narrow<T: Scalar>(graph: &DynamicGraph<T>, d: usize) -> Result<DynamicGraph<T>> {
    let snaps = graph
        .snapshots()
        .iter()
        .map(|s| {
            s.with_features(Matrix::from_fn(s.num_nodes(), d, |r, c| {
                s.features()[(r, c)]
            }))
        })
        .collect::<dgnn_core::Result<Vec<Snapshot<T>>>>()?;
    Ok(DynamicGraph::new(snaps)?)
}

pub fn comm_bench(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    match cfg.precision {
        Precision::F32 => comm_bench_as::<f32>(cfg),
        Precision::F64 => comm_bench_as::<f64>(cfg),
    }
}

/// Every feature width reads the same structure: the widest graph is
/// synthesized (or loaded) once and narrowed.
fn comm_bench_as<T: Scalar>(cfg: &RunConfig) -> Result<()> {
    let widest = cfg.bench.feature_dims.iter().copied().max().unwrap_or(1);
    let base: DynamicGraph<T> = match &cfg.dataset {
        Some(dir) => {
            read_dataset(dir).with_context(|| format!("loading dataset {}", dir.display()))?
        }
        None => synthesize(&dgnn_core::dyngraph::SynthParams {
            feature_dim: widest,
            ..cfg.synth.params()
        })?,
    };
    anyhow::ensure!(
        widest <= base.feature_dim(),
        "feature width {widest} exceeds the dataset's {}",
        base.feature_dim()
    );
    let out = cfg.write_resolved()?;
    let mut csv = String::from(COMM_BENCH_HEADER);
    csv.push('\n');
    for &d in &cfg.bench.feature_dims {
        let graph = narrow(&base, d)?;
        for &hidden in &cfg.bench.hidden_dims {
            let model = ModelConfig {
                hidden_dim: hidden,
                ..cfg.model.clone()
            };
            for &scheme in &cfg.bench.schemes {
                for &workers in &cfg.bench.workers {
                    let dist = DistConfig {
                        workers,
                        scheme,
                        ..cfg.dist
                    };
                    let trainer = DistTrainer::new(&graph, model.clone(), cfg.train.clone(), dist)
                        .with_context(|| format!("{scheme} with {workers} workers"))?;
                    let c = trainer.account_epoch().total();
                    let _ = writeln!(
                        csv,
                        "{scheme},{workers},{d},{hidden},{},{},{}",
                        c.remote_features, c.intermediate_redistribution, c.gradient_sync
                    );
                }
            }
        }
    }
    let path = out.join("comm_bench.csv");
    fs::write(&path, csv)?;
    println!("{}", path.display());
    Ok(())
}
