//! Aggregation lookup traces of a training epoch, generated without running
//! the model, and their replay against a [`CacheStore`].
//!
//! The lookup order mirrors the models in [`crate::nn`]: every gate of a
//! GraphRNN cell looks up its input aggregation and then its hidden
//! aggregation, and a miss is followed by an insertion.

use serde::{Deserialize, Serialize};

use super::{AggKey, CacheStats, CacheStore, ExecContext, KeyKind, Part, Policy};
use crate::dyngraph::{schedule, sliding_windows, IterationOrder};
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceArch {
    /// GraphRNN encoder-decoder: every layer aggregates inputs and hidden state.
    Integrated,
    /// GNN per timestep feeding a plain RNN: only first-layer input aggregations.
    Stacked,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceConfig {
    pub arch: TraceArch,
    pub layers: usize,
    pub gates: usize,
    pub seq_len: usize,
    pub stride: usize,
    pub horizon: usize,
    pub teacher_forcing: bool,
    pub num_snapshots: usize,
    pub num_batches: usize,
    pub order: IterationOrder,
    /// Elements of one input-feature aggregation of one mini-batch.
    pub input_units: u64,
    /// Elements of one hidden-state aggregation of one mini-batch.
    pub hidden_units: u64,
}

impl TraceConfig {
    /// The reference configuration: two-layer LSTM encoder-decoder, `L = 8`,
    /// `S = 1`, `H = 2`, teacher forcing, four mini-batches.
    pub fn reference() -> Self {
        Self {
            arch: TraceArch::Integrated,
            layers: 2,
            gates: 4,
            seq_len: 8,
            stride: 1,
            horizon: 2,
            teacher_forcing: true,
            num_snapshots: 24,
            num_batches: 4,
            order: IterationOrder::SeqFirst,
            input_units: 1600,
            hidden_units: 1600,
        }
    }

    /// Elements of all first-layer input aggregations of one mini-batch
    /// across one window; cache capacity fractions are relative to this.
    pub fn data_units(&self) -> u64 {
        let steps = match self.arch {
            TraceArch::Integrated => self.seq_len + self.horizon,
            TraceArch::Stacked => self.seq_len,
        };
        steps as u64 * self.input_units
    }

    pub fn units(&self, kind: KeyKind) -> u64 {
        match kind {
            KeyKind::Input | KeyKind::GoInput | KeyKind::Feedback => self.input_units,
            KeyKind::HiddenPrevT | KeyKind::HiddenPrevLayer => self.hidden_units,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum TraceEvent {
    Lookup {
        key: AggKey,
        ctx: ExecContext,
        units: u64,
    },
    /// End of one `(batch, window)` sample, where the optimizer steps.
    SampleEnd,
}

/// The keys one timestep of a GraphRNN layer looks up, in gate order.
pub struct StepKeys {
    pub input: AggKey,
    pub hidden: AggKey,
}

/// Keys of layer `layer` at encoder position or decoder step `idx` of the
/// window starting at `start`.
pub fn integrated_step_keys(
    batch: usize,
    start: usize,
    seq_len: usize,
    part: Part,
    idx: usize,
    layer: usize,
    teacher_forcing: bool,
) -> StepKeys {
    let graph_t = match part {
        Part::Encoder => start + idx,
        Part::Decoder => start + seq_len + idx - 1,
    };
    let input = if layer > 1 {
        AggKey::local(batch, layer, KeyKind::HiddenPrevLayer, graph_t, start, part)
    } else {
        match (part, idx) {
            (Part::Encoder, _) => AggKey::input(batch, graph_t),
            (Part::Decoder, 0) => AggKey::go(batch, graph_t),
            (Part::Decoder, _) if teacher_forcing => AggKey::input(batch, graph_t),
            (Part::Decoder, _) => AggKey::local(batch, 1, KeyKind::Feedback, graph_t, start, part),
        }
    };
    StepKeys {
        input,
        hidden: AggKey::local(batch, layer, KeyKind::HiddenPrevT, graph_t, start, part),
    }
}

/// Generates the lookup trace of one epoch.
pub fn generate(cfg: &TraceConfig) -> Vec<TraceEvent> {
    let windows = sliding_windows(cfg.num_snapshots, cfg.seq_len, cfg.stride, cfg.horizon);
    let mut out = Vec::new();
    for (batch, w) in schedule(cfg.num_batches, windows.len(), cfg.order) {
        let start = windows[w].start;
        let base = ExecContext {
            layers: cfg.layers,
            gates: cfg.gates,
            gate: 1,
            seq_len: cfg.seq_len,
            stride: cfg.stride,
            horizon: cfg.horizon,
            idx: 0,
            part: Part::Encoder,
            layer: 1,
            teacher_forcing: cfg.teacher_forcing,
            windows_ahead: windows.len() - 1 - w,
        };
        match cfg.arch {
            TraceArch::Stacked => {
                for idx in 0..cfg.seq_len {
                    let ctx = ExecContext {
                        layers: 1,
                        gates: 1,
                        horizon: 0,
                        teacher_forcing: false,
                        idx,
                        ..base
                    };
                    let key = AggKey::input(batch, start + idx);
                    out.push(TraceEvent::Lookup {
                        key,
                        ctx,
                        units: cfg.units(key.kind),
                    });
                }
            }
            TraceArch::Integrated => {
                let steps = (0..cfg.seq_len)
                    .map(|i| (Part::Encoder, i))
                    .chain((0..cfg.horizon).map(|j| (Part::Decoder, j)));
                for (part, idx) in steps {
                    for layer in 1..=cfg.layers {
                        let keys = integrated_step_keys(
                            batch,
                            start,
                            cfg.seq_len,
                            part,
                            idx,
                            layer,
                            cfg.teacher_forcing,
                        );
                        for gate in 1..=cfg.gates {
                            let ctx = ExecContext {
                                gate,
                                idx,
                                part,
                                layer,
                                ..base
                            };
                            for key in [keys.input, keys.hidden] {
                                out.push(TraceEvent::Lookup {
                                    key,
                                    ctx,
                                    units: cfg.units(key.kind),
                                });
                            }
                        }
                    }
                }
            }
        }
        out.push(TraceEvent::SampleEnd);
    }
    out
}

/// For every lookup, the number of later lookups of the same key.
pub fn brute_force_future_counts(trace: &[TraceEvent]) -> Vec<u32> {
    let mut remaining = std::collections::HashMap::new();
    let mut out = vec![0; trace.len()];
    for (i, ev) in trace.iter().enumerate().rev() {
        if let TraceEvent::Lookup { key, .. } = ev {
            let n = remaining.entry(*key).or_insert(0u32);
            out[i] = *n;
            *n += 1;
        }
    }
    out
}

/// Replays `trace` against `store`: a miss is followed by an insertion, and
/// every sample end bumps the store's epoch.
pub fn replay(trace: &[TraceEvent], store: &mut CacheStore<()>) -> Result<CacheStats> {
    for ev in trace {
        match ev {
            TraceEvent::Lookup { key, ctx, units } => {
                if store.get(key).is_none() {
                    store.put(*key, (), *units, ctx)?;
                }
            }
            TraceEvent::SampleEnd => store.bump_epoch(),
        }
    }
    Ok(store.stats())
}

/// Hit rate of `policy` at `capacity_frac` of the configuration's data size.
pub fn hit_rate_at(
    cfg: &TraceConfig,
    trace: &[TraceEvent],
    policy: Policy,
    capacity_frac: f64,
) -> Result<CacheStats> {
    let capacity = (capacity_frac * cfg.data_units() as f64).floor().max(1.0) as u64;
    let mut store = CacheStore::new(policy, capacity)?;
    replay(trace, &mut store)
}

/// Fraction of lookups that can hit at all: every lookup except each key's first.
pub fn max_hit_rate(trace: &[TraceEvent]) -> f64 {
    let mut seen = std::collections::HashSet::new();
    let mut lookups = 0u64;
    let mut repeats = 0u64;
    for ev in trace {
        if let TraceEvent::Lookup { key, .. } = ev {
            lookups += 1;
            if !seen.insert(*key) {
                repeats += 1;
            }
        }
    }
    if lookups == 0 {
        0.0
    } else {
        repeats as f64 / lookups as f64
    }
}
