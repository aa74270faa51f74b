//! Two-level store for aggregation results with execution-aware scoring.
//!
//! Global entries hold input-feature aggregations shared across windows of
//! one mini-batch; local entries hold per-layer aggregations of hidden states
//! that live for a single timestep of a single window.

mod store;
pub mod trace;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

pub use store::{CacheStats, CacheStore, Policy, PutOutcome};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Level {
    Global,
    Local { layer: u16 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum KeyKind {
    /// Aggregation of a snapshot's input features.
    Input,
    /// Aggregation of the decoder's all-zero start token over one graph.
    GoInput,
    /// Aggregation of the previous timestep's hidden state.
    HiddenPrevT,
    /// Aggregation of the previous layer's output at the same timestep.
    HiddenPrevLayer,
    /// Aggregation of the decoder's own previous prediction.
    Feedback,
}

impl KeyKind {
    /// True when the aggregated tensor depends on learnable parameters.
    pub fn weight_dependent(self) -> bool {
        !matches!(self, Self::Input | Self::GoInput)
    }
}

#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
pub enum Part {
    #[default]
    Encoder,
    Decoder,
}

/// Identity of a cached aggregation.
///
/// Local keys are scoped to one window (by its start timestep) and model part,
/// since hidden states differ between windows that share a snapshot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AggKey {
    pub batch: u32,
    pub t: u32,
    pub kind: KeyKind,
    pub level: Level,
    pub scope: Option<(u32, Part)>,
}

impl AggKey {
    pub fn input(batch: usize, t: usize) -> Self {
        Self {
            batch: batch as u32,
            t: t as u32,
            kind: KeyKind::Input,
            level: Level::Global,
            scope: None,
        }
    }

    pub fn go(batch: usize, t: usize) -> Self {
        Self {
            batch: batch as u32,
            t: t as u32,
            kind: KeyKind::GoInput,
            level: Level::Global,
            scope: None,
        }
    }

    pub fn local(
        batch: usize,
        layer: usize,
        kind: KeyKind,
        t: usize,
        window_start: usize,
        part: Part,
    ) -> Self {
        Self {
            batch: batch as u32,
            t: t as u32,
            kind,
            level: Level::Local {
                layer: layer as u16,
            },
            scope: Some((window_start as u32, part)),
        }
    }
}

/// Where in the execution an aggregation is being inserted.
///
/// `gate` and `layer` are 1-based, `idx` is the 0-based position within the
/// encoder (or decoder step for the decoder). `windows_ahead` counts windows
/// of the same mini-batch still to run after the current one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExecContext {
    pub layers: usize,
    pub gates: usize,
    pub gate: usize,
    pub seq_len: usize,
    pub stride: usize,
    pub horizon: usize,
    pub idx: usize,
    pub part: Part,
    pub layer: usize,
    pub teacher_forcing: bool,
    pub windows_ahead: usize,
}

impl ExecContext {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            (1..=self.gates).contains(&self.gate),
            InvalidArgument,
            "gate {} outside 1..={}",
            self.gate,
            self.gates
        );
        ensure!(
            (1..=self.layers).contains(&self.layer),
            InvalidArgument,
            "layer {} outside 1..={}",
            self.layer,
            self.layers
        );
        ensure!(
            self.seq_len >= 1 && self.stride >= 1,
            InvalidArgument,
            "L and S must be positive"
        );
        let bound = match self.part {
            Part::Encoder => self.seq_len,
            Part::Decoder => self.horizon,
        };
        ensure!(
            self.idx < bound,
            InvalidArgument,
            "idx {} outside the {:?} of length {bound}",
            self.idx,
            self.part
        );
        Ok(())
    }

    /// Position of the current snapshot relative to the window start.
    fn offset(&self) -> i64 {
        match self.part {
            Part::Encoder => self.idx as i64,
            Part::Decoder => (self.seq_len + self.idx) as i64 - 1,
        }
    }

    /// Number of later windows `k = 1..=windows_ahead` whose start offset
    /// `k * S` lies in `[lo, hi]`.
    fn windows_in(&self, lo: i64, hi: i64) -> u64 {
        let s = self.stride as i64;
        let first = lo.max(s).div_euclid(s) + i64::from(lo.max(s).rem_euclid(s) != 0);
        let last = hi.div_euclid(s).min(self.windows_ahead as i64);
        (last - first + 1).max(0) as u64
    }
}

/// Remaining lookups of an aggregation inserted at `ctx`, counting the
/// current gate's own lookup as done.
///
/// Input aggregations are looked up `K` times by every later window that
/// reads the same snapshot, as an encoder input or, under teacher forcing,
/// as a decoder input. Everything else lives for the remaining gates only.
pub fn future_access_count(ctx: &ExecContext, kind: KeyKind) -> u32 {
    let k = ctx.gates as u64;
    let here = k.saturating_sub(ctx.gate as u64);
    if kind != KeyKind::Input || ctx.layer != 1 {
        return here as u32;
    }
    if ctx.part == Part::Decoder && ctx.idx == 0 {
        return here as u32;
    }
    let u = ctx.offset();
    let l = ctx.seq_len as i64;
    let h = ctx.horizon as i64;
    // window at offset s reads snapshot u in its encoder iff s <= u <= s + L - 1
    let mut later = ctx.windows_in(u - l + 1, u);
    if ctx.teacher_forcing && h >= 2 {
        // and as decoder input j in 1..H iff u = s + L + j - 1
        later += ctx.windows_in(u - l - h + 2, u - l);
    }
    (here + k * later) as u32
}

/// Timesteps until an entry is next needed: zero for local entries; for
/// global ones `L - S` when created in the encoder and `L - 1` in the decoder.
pub fn imminence(ctx: &ExecContext, level: Level) -> u32 {
    match (level, ctx.part) {
        (Level::Local { .. }, _) => 0,
        (Level::Global, Part::Encoder) => ctx.seq_len.saturating_sub(ctx.stride) as u32,
        (Level::Global, Part::Decoder) => ctx.seq_len.saturating_sub(1) as u32,
    }
}
