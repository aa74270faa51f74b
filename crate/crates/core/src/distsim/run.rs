use std::thread;
use std::time::Instant;

use super::ledger::{ordered_mean, ring_allreduce_bytes, CommBytes, CommLedger};
use super::plan::{balanced_range, plan, DistConfig, OverlapMode, Scheme, WorkerPlan};
use crate::aggregate::AggrFn;
use crate::dyngraph::{schedule, DynamicGraph, IterationOrder};
use crate::error::{Error, Result};
use crate::nn::{AggCache, DgnnModel, Grads, ModelConfig};
use crate::scalar::Scalar;
use crate::train::{
    cache_capacity, canonical_mean, input_sources, new_cache, sample_maes, BoxedInputs,
    EpochReport, Optimizer, SampleResult, TrainConfig, TrainData, Trainer,
};

/// A contiguous piece of training data held by one worker.
struct Unit<T> {
    data: TrainData<T>,
    /// Global index of the unit's first window.
    window_offset: usize,
    capacity_units: Option<u64>,
}

struct Replica<T> {
    model: DgnnModel<T>,
    optimizer: Optimizer<T>,
}

/// `(unit, batch, local window)` samples of one worker in one step.
type WorkerStep = Vec<(usize, usize, usize)>;

/// Per-epoch execution state of one worker.
struct WorkerState<'d, T: Scalar> {
    caches: Vec<Option<AggCache<T>>>,
    sources: Vec<Vec<BoxedInputs<'d, T>>>,
}

/// One distributed epoch.
#[derive(Clone, Debug)]
pub struct DistEpoch {
    pub workers: Vec<EpochReport>,
    /// All workers combined, as one row of the epoch metrics.
    pub merged: EpochReport,
    pub ledger: CommLedger,
}

/// Data-parallel training of model replicas over a placement plan, one
/// synchronized optimizer step per global step.
///
/// Under consecutive placement each canonical chunk of windows trains as
/// its own unit, and every step sums one sample per unit in chunk order.
/// Worker counts that cut the same chunks thus produce the same
/// parameters bit for bit. Under sequence partitioning the workers
/// cooperate on each sample; the arithmetic equals one worker running it,
/// so worker 0 runs it and the ledger carries the exchange.
pub struct DistTrainer<T: Scalar> {
    pub plan: WorkerPlan,
    pub cfg: TrainConfig,
    pub dist: DistConfig,
    replicas: Vec<Replica<T>>,
    units: Vec<Vec<Unit<T>>>,
    /// Bytes per stored snapshot, for remote fetches.
    snapshot_bytes: Vec<u64>,
    epochs_run: usize,
}

impl<T: Scalar> DistTrainer<T> {
    pub fn new(
        graph: &DynamicGraph<T>,
        model_cfg: ModelConfig,
        cfg: TrainConfig,
        dist: DistConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let plan = plan(
            &dist,
            graph.len(),
            graph.num_nodes(),
            &model_cfg,
            cfg.stride,
        )?;
        let model = DgnnModel::new(model_cfg.clone(), graph.feature_dim(), cfg.seed)?;
        let replicas = (0..dist.workers)
            .map(|_| Replica {
                model: model.clone(),
                optimizer: Optimizer::new(cfg.optimizer_settings(), &model.params),
            })
            .collect();
        let unit = |data: TrainData<T>, window_offset| {
            let capacity_units = cache_capacity(&cfg, data.data_units());
            Unit {
                data,
                window_offset,
                capacity_units,
            }
        };
        let prepare = |time, nodes: Option<&[u32]>| {
            TrainData::prepare(
                graph,
                &model_cfg,
                cfg.batch_size,
                cfg.stride,
                cfg.seed,
                time,
                nodes,
            )
        };
        let mut units: Vec<Vec<Unit<T>>> = Vec::with_capacity(dist.workers);
        for a in &plan.assignments {
            let mut mine = Vec::new();
            let wrap = |e| Error::Worker {
                worker: a.worker,
                source: Box::new(e),
            };
            match plan.scheme {
                Scheme::ConsecutiveBlock => {
                    for c in a.chunks.clone() {
                        let windows = plan.chunks[c].clone();
                        if windows.is_empty() {
                            continue;
                        }
                        let data = prepare(plan.chunk_time(c), None).map_err(wrap)?;
                        debug_assert_eq!(data.windows.len(), windows.len());
                        mine.push(unit(data, windows.start));
                    }
                }
                Scheme::NodePartition => {
                    let nodes: Vec<u32> = a.nodes.clone().collect();
                    mine.push(unit(
                        prepare(0..graph.len(), Some(&nodes)).map_err(wrap)?,
                        0,
                    ));
                }
                Scheme::SequencePartition => {
                    if a.worker == 0 {
                        mine.push(unit(prepare(0..graph.len(), None).map_err(wrap)?, 0));
                    }
                }
            }
            units.push(mine);
        }
        let snapshot_bytes = graph
            .snapshots()
            .iter()
            .map(|s| {
                (s.num_nodes() * s.feature_dim() * T::BYTES
                    + s.num_edges() * 2 * std::mem::size_of::<u32>()) as u64
            })
            .collect();
        Ok(Self {
            plan,
            cfg,
            dist,
            replicas,
            units,
            snapshot_bytes,
            epochs_run: 0,
        })
    }

    pub fn workers(&self) -> usize {
        self.dist.workers
    }

    /// The model of worker `m`; every replica holds the same parameters.
    pub fn model(&self, m: usize) -> &DgnnModel<T> {
        &self.replicas[m].model
    }

    fn order(&self) -> IterationOrder {
        self.cfg.iteration
    }

    /// Samples of every worker, step by step.
    fn steps(&self) -> Vec<Vec<WorkerStep>> {
        let m = self.workers();
        match self.plan.scheme {
            Scheme::ConsecutiveBlock => {
                let batches = self
                    .units
                    .iter()
                    .flatten()
                    .map(|u| u.data.batches.len())
                    .max()
                    .unwrap_or(0);
                let windows = self
                    .units
                    .iter()
                    .flatten()
                    .map(|u| u.data.windows.len())
                    .max()
                    .unwrap_or(0);
                schedule(batches, windows, self.order())
                    .into_iter()
                    .map(|(b, k)| {
                        self.units
                            .iter()
                            .map(|us| {
                                (0..us.len())
                                    .filter(|&u| {
                                        b < us[u].data.batches.len() && k < us[u].data.windows.len()
                                    })
                                    .map(|u| (u, b, k))
                                    .collect()
                            })
                            .collect()
                    })
                    .collect()
            }
            Scheme::NodePartition | Scheme::SequencePartition => {
                let per: Vec<Vec<(usize, usize)>> = self
                    .units
                    .iter()
                    .map(|us| {
                        us.first().map_or_else(Vec::new, |u| {
                            schedule(u.data.batches.len(), u.data.windows.len(), self.order())
                        })
                    })
                    .collect();
                let n = per.iter().map(Vec::len).max().unwrap_or(0);
                (0..n)
                    .map(|i| {
                        (0..m)
                            .map(|w| {
                                per[w]
                                    .get(i)
                                    .map(|&(b, k)| vec![(0, b, k)])
                                    .unwrap_or_default()
                            })
                            .collect()
                    })
                    .collect()
            }
        }
    }

    /// Traffic of one sample, charged to the workers that send it.
    fn charge_sample(
        &self,
        worker: usize,
        (u, b, k): (usize, usize, usize),
        ledger: &mut CommLedger,
    ) {
        let unit = &self.units[worker][u];
        let model = &self.replicas[worker].model.cfg;
        let reads = if model.arch.is_integrated() {
            model.seq_len + model.horizon - 1
        } else {
            model.seq_len
        };
        let window = unit.data.windows[k];
        let batch = &unit.data.batches[b];
        match self.plan.scheme {
            Scheme::ConsecutiveBlock => {}
            Scheme::NodePartition => {
                let own = &self.plan.assignments[worker];
                let d = unit.data.feature_dim;
                let remote: usize = (window.start..window.start + reads)
                    .map(|t| {
                        batch.cgs[t]
                            .nodes()
                            .into_iter()
                            .filter(|&v| !own.owns_node(v))
                            .count()
                    })
                    .sum();
                ledger.charge(
                    worker,
                    CommBytes {
                        remote_features: (remote * d * T::BYTES) as u64,
                        ..Default::default()
                    },
                );
            }
            Scheme::SequencePartition => {
                let m = self.workers();
                let n = batch.num_nodes();
                for pos in 0..reads {
                    let sender = pos % m;
                    let moved = n - balanced_range(n, m, sender).len();
                    let bytes = moved * model.hidden_dim * model.layers * T::BYTES;
                    ledger.charge(
                        sender,
                        CommBytes {
                            intermediate_redistribution: bytes as u64,
                            ..Default::default()
                        },
                    );
                }
            }
        }
    }

    fn charge_sync(&self, ledger: &mut CommLedger) {
        let elements = self.replicas[0].model.params.num_elements();
        for (w, bytes) in ring_allreduce_bytes(elements, self.workers(), T::BYTES)
            .into_iter()
            .enumerate()
        {
            ledger.charge(
                w,
                CommBytes {
                    gradient_sync: bytes,
                    ..Default::default()
                },
            );
        }
    }

    fn charge_fetches(&self, ledger: &mut CommLedger) {
        if self.plan.scheme != Scheme::ConsecutiveBlock
            || self.plan.overlap != OverlapMode::RemoteFetch
        {
            return;
        }
        for a in &self.plan.assignments {
            let bytes = a
                .overlap_snapshots()
                .iter()
                .map(|&t| self.snapshot_bytes[t])
                .sum();
            ledger.charge(
                a.worker,
                CommBytes {
                    snapshot_fetch: bytes,
                    ..Default::default()
                },
            );
        }
    }

    /// The ledger of one epoch, without training.
    pub fn account_epoch(&self) -> CommLedger {
        let mut ledger = CommLedger::new(self.workers());
        self.charge_fetches(&mut ledger);
        for step in self.steps() {
            for (w, samples) in step.iter().enumerate() {
                for &s in samples {
                    self.charge_sample(w, s, &mut ledger);
                }
            }
            if step.iter().any(|s| !s.is_empty()) {
                self.charge_sync(&mut ledger);
            }
        }
        ledger
    }

    pub fn run_epoch(&mut self) -> Result<DistEpoch> {
        let start = Instant::now();
        let m = self.workers();
        let aggr = AggrFn::from(self.replicas[0].model.cfg.aggr);
        let steps = self.steps();
        let mut ledger = CommLedger::new(m);
        self.charge_fetches(&mut ledger);

        let mut states = Vec::with_capacity(m);
        for units in &self.units {
            let caches = units
                .iter()
                .map(|u| new_cache(&self.cfg, u.capacity_units))
                .collect::<Result<Vec<_>>>()?;
            let sources = units
                .iter()
                .map(|u| input_sources(&self.cfg, aggr, &u.data))
                .collect();
            states.push(WorkerState { caches, sources });
        }
        let epoch = self.epochs_run + 1;
        let mut reports: Vec<EpochReport> = (0..m)
            .map(|_| EpochReport {
                epoch,
                ..Default::default()
            })
            .collect();
        let skipped_before: Vec<u64> = self.replicas.iter().map(|r| r.optimizer.skipped).collect();

        for step in &steps {
            let results = self.run_step(step, &mut states)?;
            let mut contributions: Vec<&Grads<T>> = Vec::new();
            for (w, (samples, rs)) in step.iter().zip(&results).enumerate() {
                for (&(u, b, k), r) in samples.iter().zip(rs) {
                    self.charge_sample(w, (u, b, k), &mut ledger);
                    let report = &mut reports[w];
                    report.exec.merge(&r.stats);
                    report.losses.push(r.loss);
                    report.visits.push((b, self.units[w][u].window_offset + k));
                    contributions.push(&r.grads);
                }
            }
            if contributions.is_empty() {
                continue;
            }
            let mean = ordered_mean(&contributions, contributions.len())?;
            self.charge_sync(&mut ledger);
            for (w, (replica, state)) in self.replicas.iter_mut().zip(&mut states).enumerate() {
                replica
                    .optimizer
                    .step(&mut replica.model.params, &mean)
                    .map_err(|e| Error::Worker {
                        worker: w,
                        source: Box::new(e),
                    })?;
                for c in state.caches.iter_mut().flatten() {
                    c.bump_epoch();
                }
            }
        }

        let mut maes: Vec<Vec<f64>> = vec![Vec::new(); m];
        for (w, report) in reports.iter_mut().enumerate() {
            report.loss = canonical_mean(&report.visits, &report.losses);
            report.skipped_steps = self.replicas[w].optimizer.skipped - skipped_before[w];
            for c in states[w].caches.iter().flatten() {
                report.cache.merge(&c.stats());
            }
            report.comm_bytes = ledger.per_worker[w].total();
            if self.cfg.evaluate && !self.units[w].is_empty() {
                for u in &self.units[w] {
                    maes[w].extend(sample_maes(&self.replicas[w].model, &u.data)?);
                }
                report.mae = Some(mean(&maes[w]));
            }
        }
        drop(states);
        let seconds = start.elapsed().as_secs_f64();
        let mut merged = EpochReport {
            epoch,
            ..Default::default()
        };
        for r in &mut reports {
            r.seconds = seconds;
            merged.losses.extend_from_slice(&r.losses);
            merged.visits.extend_from_slice(&r.visits);
            merged.exec.merge(&r.exec);
            merged.cache.merge(&r.cache);
            merged.skipped_steps = merged.skipped_steps.max(r.skipped_steps);
        }
        merged.loss = canonical_mean(&merged.visits, &merged.losses);
        if self.cfg.evaluate {
            merged.mae = Some(mean(&maes.concat()));
        }
        merged.comm_bytes = ledger.total().total();
        merged.seconds = seconds;
        self.epochs_run += 1;
        Ok(DistEpoch {
            workers: reports,
            merged,
            ledger,
        })
    }

    /// Forward and backward passes of every worker's samples of one step,
    /// on threads when configured.
    fn run_step(
        &self,
        step: &[WorkerStep],
        states: &mut [WorkerState<'_, T>],
    ) -> Result<Vec<Vec<SampleResult<T>>>> {
        let work = |w: usize,
                    samples: &WorkerStep,
                    state: &mut WorkerState<'_, T>|
         -> Result<Vec<SampleResult<T>>> {
            let model = &self.replicas[w].model;
            samples
                .iter()
                .map(|&(u, b, k)| {
                    let data = &self.units[w][u].data;
                    Trainer::sample_grads(
                        model,
                        data,
                        b,
                        k,
                        state.caches[u].as_mut(),
                        state.sources[u][b].as_mut(),
                    )
                })
                .collect::<Result<Vec<_>>>()
                .map_err(|e| Error::Worker {
                    worker: w,
                    source: Box::new(e),
                })
        };
        if !self.dist.parallel || self.workers() == 1 {
            return step
                .iter()
                .zip(states.iter_mut())
                .enumerate()
                .map(|(w, (s, st))| work(w, s, st))
                .collect();
        }
        thread::scope(|scope| {
            let handles: Vec<_> = step
                .iter()
                .zip(states.iter_mut())
                .enumerate()
                .map(|(w, (s, st))| scope.spawn(move || work(w, s, st)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("worker thread panicked"))
                .collect()
        })
    }

    pub fn fit(&mut self, mut on_epoch: impl FnMut(&DistEpoch)) -> Result<Vec<DistEpoch>> {
        let mut out = Vec::with_capacity(self.cfg.epochs);
        for _ in 0..self.cfg.epochs {
            let e = self.run_epoch()?;
            on_epoch(&e);
            out.push(e);
        }
        Ok(out)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// One epoch of `trainer`: per-worker reports and the communication ledger.
pub fn run_distributed_epoch<T: Scalar>(
    trainer: &mut DistTrainer<T>,
) -> Result<(Vec<EpochReport>, CommLedger)> {
    let e = trainer.run_epoch()?;
    Ok((e.workers, e.ledger))
}
