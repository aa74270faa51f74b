use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::data::TrainData;
use super::optim::Optimizer;
use crate::aggregate::AggrFn;
use crate::cache::CacheStats;
use crate::dyngraph::{schedule, IterationOrder};
use crate::error::Result;
use crate::nn::{
    loss_mae, AggCache, DgnnModel, ExecEnv, ExecStats, Grads, IncrementalInputs, InputSource,
    Sample, ScratchInputs,
};
use crate::scalar::Scalar;

/// Counters and losses of one training epoch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    /// Mean training loss over the epoch's samples.
    pub loss: f64,
    /// Cache-free evaluation MAE after the epoch, when enabled.
    pub mae: Option<f64>,
    /// Training loss per sample in visiting order.
    pub losses: Vec<f64>,
    /// `(batch, window)` pairs in visiting order.
    pub visits: Vec<(usize, usize)>,
    pub skipped_steps: u64,
    pub cache: CacheStats,
    pub exec: ExecStats,
    pub comm_bytes: u64,
    pub seconds: f64,
}

pub const EPOCH_CSV_HEADER: &str = "epoch,loss,mae,hit_rate,kernel_invocations,comm_bytes,seconds";

impl EpochReport {
    pub fn samples(&self) -> usize {
        self.visits.len()
    }

    pub fn samples_per_sec(&self) -> f64 {
        if self.seconds > 0.0 {
            self.samples() as f64 / self.seconds
        } else {
            0.0
        }
    }

    pub fn csv_row(&self) -> String {
        let mae = self.mae.map(|m| m.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{}",
            self.epoch,
            self.loss,
            mae,
            self.cache.hit_rate(),
            self.exec.kernel_invocations,
            self.comm_bytes,
            self.seconds
        )
    }
}

pub fn epoch_csv(reports: &[EpochReport]) -> String {
    let mut out = String::from(EPOCH_CSV_HEADER);
    out.push('\n');
    for r in reports {
        let _ = writeln!(out, "{}", r.csv_row());
    }
    out
}

pub fn write_epoch_csv(path: &Path, reports: &[EpochReport]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(epoch_csv(reports).as_bytes())?;
    Ok(())
}

/// Loss and parameter gradients of one sample.
pub struct SampleResult<T> {
    pub loss: f64,
    pub grads: Grads<T>,
    pub stats: ExecStats,
}

/// Mean of `values` listed in `(batch, window)` order, so that the result
/// does not depend on the visiting order.
pub fn canonical_mean(visits: &[(usize, usize)], values: &[f64]) -> f64 {
    let mut pairs: Vec<_> = visits.iter().zip(values).collect();
    pairs.sort_by_key(|(v, _)| **v);
    if pairs.is_empty() {
        0.0
    } else {
        pairs.iter().map(|(_, &l)| l).sum::<f64>() / pairs.len() as f64
    }
}

pub type BoxedInputs<'d, T> = Box<dyn InputSource<T> + Send + 'd>;

/// Cache capacity in size units for `data_units`, or `None` when caching
/// is off or the capacity rounds to zero.
pub fn cache_capacity(cfg: &TrainConfig, data_units: u64) -> Option<u64> {
    let capacity = (cfg.cache_capacity_frac * data_units as f64).floor() as u64;
    (cfg.cache_policy.policy().is_some() && capacity > 0).then_some(capacity)
}

pub fn new_cache<T: Scalar>(
    cfg: &TrainConfig,
    capacity_units: Option<u64>,
) -> Result<Option<AggCache<T>>> {
    match (cfg.cache_policy.policy(), capacity_units) {
        (Some(policy), Some(cap)) => Ok(Some(AggCache::new(policy, cap)?)),
        _ => Ok(None),
    }
}

/// One input source per mini-batch of `data`.
pub fn input_sources<'d, T: Scalar>(
    cfg: &TrainConfig,
    aggr: AggrFn,
    data: &'d TrainData<T>,
) -> Vec<BoxedInputs<'d, T>> {
    data.batches
        .iter()
        .map(|b| -> BoxedInputs<'d, T> {
            if cfg.incremental {
                Box::new(IncrementalInputs::new(
                    &b.snapshots,
                    &b.deltas,
                    aggr,
                    cfg.incremental_options(),
                ))
            } else {
                Box::new(ScratchInputs::new(&b.snapshots, aggr))
            }
        })
        .collect()
}

/// Cache-free MAE of every sample of `data`, in `(batch, window)` order.
pub fn sample_maes<T: Scalar>(model: &DgnnModel<T>, data: &TrainData<T>) -> Result<Vec<f64>> {
    let aggr = AggrFn::from(model.cfg.aggr);
    let mut values = Vec::with_capacity(data.batches.len() * data.windows.len());
    for (b, batch) in data.batches.iter().enumerate() {
        let mut inputs = ScratchInputs::new(&batch.snapshots, aggr);
        for &window in &data.windows {
            let sample = Sample {
                window,
                snapshots: &batch.snapshots,
            };
            let mut env = ExecEnv::new(None, &mut inputs, b, 0);
            let fwd = model.forward(&sample, &mut env)?;
            values.push(loss_mae(&fwd.predictions, &sample.targets(), &batch.seed_rows)?.0);
        }
    }
    Ok(values)
}

/// Single-worker training state: model, optimizer and cache settings.
pub struct Trainer<T: Scalar> {
    pub model: DgnnModel<T>,
    pub cfg: TrainConfig,
    pub optimizer: Optimizer<T>,
    capacity_units: Option<u64>,
    epochs_run: usize,
}

impl<T: Scalar> Trainer<T> {
    /// `data_units` is the size the capacity fraction refers to.
    pub fn new(model: DgnnModel<T>, cfg: TrainConfig, data_units: u64) -> Result<Self> {
        cfg.validate()?;
        let optimizer = Optimizer::new(cfg.optimizer_settings(), &model.params);
        let capacity_units = cache_capacity(&cfg, data_units);
        Ok(Self {
            model,
            cfg,
            optimizer,
            capacity_units,
            epochs_run: 0,
        })
    }

    pub fn capacity_units(&self) -> Option<u64> {
        self.capacity_units
    }

    /// A fresh cache per the configuration, or `None` when caching is off.
    pub fn new_cache(&self) -> Result<Option<AggCache<T>>> {
        new_cache(&self.cfg, self.capacity_units)
    }

    /// One input source per mini-batch.
    pub fn input_sources<'d>(&self, data: &'d TrainData<T>) -> Vec<BoxedInputs<'d, T>> {
        input_sources(&self.cfg, AggrFn::from(self.model.cfg.aggr), data)
    }

    /// Forward and backward pass of window `w` of mini-batch `b`.
    pub fn sample_grads(
        model: &DgnnModel<T>,
        data: &TrainData<T>,
        b: usize,
        w: usize,
        cache: Option<&mut AggCache<T>>,
        inputs: &mut dyn InputSource<T>,
    ) -> Result<SampleResult<T>> {
        let batch = &data.batches[b];
        let sample = Sample {
            window: data.windows[w],
            snapshots: &batch.snapshots,
        };
        let mut env = ExecEnv::new(cache, inputs, b, data.windows.len() - 1 - w);
        let fwd = model.forward(&sample, &mut env)?;
        let (loss, d_preds) = loss_mae(&fwd.predictions, &sample.targets(), &batch.seed_rows)?;
        let grads = model.backward(&sample, &fwd, &d_preds)?;
        Ok(SampleResult {
            loss,
            grads,
            stats: env.stats,
        })
    }

    /// Applies `grads` and invalidates weight-dependent cache entries.
    pub fn apply(&mut self, grads: &Grads<T>, cache: Option<&mut AggCache<T>>) -> Result<bool> {
        let stepped = self.optimizer.step(&mut self.model.params, grads)?;
        if let Some(c) = cache {
            c.bump_epoch();
        }
        Ok(stepped)
    }

    /// One epoch in the configured iteration order.
    pub fn run_epoch(&mut self, data: &TrainData<T>) -> Result<EpochReport> {
        self.run_epoch_in(data, self.cfg.iteration)
    }

    pub fn run_epoch_in(
        &mut self,
        data: &TrainData<T>,
        order: IterationOrder,
    ) -> Result<EpochReport> {
        let start = Instant::now();
        let mut cache = self.new_cache()?;
        let mut sources = self.input_sources(data);
        let mut report = EpochReport {
            epoch: self.epochs_run + 1,
            ..Default::default()
        };
        let skipped_before = self.optimizer.skipped;
        for (b, w) in schedule(data.batches.len(), data.windows.len(), order) {
            let r =
                Self::sample_grads(&self.model, data, b, w, cache.as_mut(), sources[b].as_mut())?;
            self.apply(&r.grads, cache.as_mut())?;
            report.exec.merge(&r.stats);
            report.losses.push(r.loss);
            report.visits.push((b, w));
        }
        drop(sources);
        report.loss = canonical_mean(&report.visits, &report.losses);
        report.skipped_steps = self.optimizer.skipped - skipped_before;
        report.cache = cache.map(|c| c.stats()).unwrap_or_default();
        if self.cfg.evaluate {
            report.mae = Some(self.evaluate(data)?);
        }
        report.seconds = start.elapsed().as_secs_f64();
        self.epochs_run += 1;
        Ok(report)
    }

    /// Mean MAE over every sample, with no cache and no updates.
    pub fn evaluate(&self, data: &TrainData<T>) -> Result<f64> {
        let maes = sample_maes(&self.model, data)?;
        Ok(maes.iter().sum::<f64>() / maes.len().max(1) as f64)
    }

    /// Runs `cfg.epochs` epochs, reporting each as it finishes.
    pub fn fit(
        &mut self,
        data: &TrainData<T>,
        mut on_epoch: impl FnMut(&EpochReport),
    ) -> Result<Vec<EpochReport>> {
        let mut reports = Vec::with_capacity(self.cfg.epochs);
        for _ in 0..self.cfg.epochs {
            let r = self.run_epoch(data)?;
            on_epoch(&r);
            reports.push(r);
        }
        Ok(reports)
    }
}

/// Every window of one mini-batch before the next mini-batch.
pub fn seq_first_epoch<T: Scalar>(
    trainer: &mut Trainer<T>,
    data: &TrainData<T>,
) -> Result<EpochReport> {
    trainer.run_epoch_in(data, IterationOrder::SeqFirst)
}

/// Every mini-batch of one window before the next window.
pub fn node_first_epoch<T: Scalar>(
    trainer: &mut Trainer<T>,
    data: &TrainData<T>,
) -> Result<EpochReport> {
    trainer.run_epoch_in(data, IterationOrder::NodeFirst)
}
