use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `L` consecutive input snapshots starting at `start`, followed by `H`
/// prediction snapshots.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SequenceWindow {
    pub start: usize,
    pub len: usize,
    pub stride: usize,
    pub horizon: usize,
}

impl SequenceWindow {
    /// Timesteps fed to the encoder.
    pub fn inputs(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }

    /// Timesteps predicted.
    pub fn targets(&self) -> std::ops::Range<usize> {
        self.start + self.len..self.start + self.len + self.horizon
    }

    /// One past the last timestep this window touches.
    pub fn end(&self) -> usize {
        self.start + self.len + self.horizon
    }
}

/// Windows with starts `0, S, 2S, ...` while `start + L + H <= T`.
///
/// # Panics
/// If `len` or `stride` is zero.
pub fn sliding_windows(
    num_snapshots: usize,
    len: usize,
    stride: usize,
    horizon: usize,
) -> Vec<SequenceWindow> {
    assert!(
        len >= 1 && stride >= 1,
        "window length and stride must be positive"
    );
    (0..)
        .map(|k| k * stride)
        .take_while(|&s| s + len + horizon <= num_snapshots)
        .map(|start| SequenceWindow {
            start,
            len,
            stride,
            horizon,
        })
        .collect()
}

/// Order in which `(mini-batch, window)` samples are visited in one epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IterationOrder {
    /// Every window of one mini-batch before the next mini-batch.
    #[default]
    SeqFirst,
    /// Every mini-batch of one window before the next window.
    NodeFirst,
}

impl FromStr for IterationOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "seq_first" => Ok(Self::SeqFirst),
            "node_first" => Ok(Self::NodeFirst),
            _ => Err(Error::InvalidArgument(format!(
                "unknown iteration order {s:?}"
            ))),
        }
    }
}

impl fmt::Display for IterationOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::SeqFirst => "seq_first",
            Self::NodeFirst => "node_first",
        })
    }
}

/// `(batch, window position)` pairs in visiting order.
pub fn schedule(
    num_batches: usize,
    num_windows: usize,
    order: IterationOrder,
) -> Vec<(usize, usize)> {
    match order {
        IterationOrder::SeqFirst => (0..num_batches)
            .flat_map(|b| (0..num_windows).map(move |w| (b, w)))
            .collect(),
        IterationOrder::NodeFirst => (0..num_windows)
            .flat_map(|w| (0..num_batches).map(move |b| (b, w)))
            .collect(),
    }
}
