use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::optim::{OptimizerKind, OptimizerSettings};
use crate::aggregate::IncrementalOptions;
use crate::cache::Policy;
use crate::dyngraph::IterationOrder;
use crate::error::{ensure, Error, Result};

/// Cache setting of a run: a policy or no cache at all.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CachePolicy {
    Off,
    #[default]
    Reinc,
    Lru,
    Lfu,
}

impl CachePolicy {
    pub fn policy(self) -> Option<Policy> {
        match self {
            Self::Off => None,
            Self::Reinc => Some(Policy::Reinc),
            Self::Lru => Some(Policy::Lru),
            Self::Lfu => Some(Policy::Lfu),
        }
    }
}

impl FromStr for CachePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "off" {
            return Ok(Self::Off);
        }
        Ok(match s.parse::<Policy>()? {
            Policy::Reinc => Self::Reinc,
            Policy::Lru => Self::Lru,
            Policy::Lfu => Self::Lfu,
        })
    }
}

impl fmt::Display for CachePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.policy() {
            None => f.write_str("off"),
            Some(p) => p.fmt(f),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Seed nodes per mini-batch.
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub iteration: IterationOrder,
    pub seed: u64,
    /// Window stride.
    pub stride: usize,
    /// Derive input aggregations from the previous timestep's.
    pub incremental: bool,
    pub fallback_threshold: f64,
    pub cache_policy: CachePolicy,
    /// Cache capacity as a multiple of one mini-batch window's first-layer
    /// input aggregations; zero disables the cache.
    pub cache_capacity_frac: f64,
    /// Run a cache-free evaluation pass after every epoch.
    pub evaluate: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            epochs: 10,
            lr: 0.01,
            optimizer: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            iteration: IterationOrder::SeqFirst,
            seed: 0,
            stride: 1,
            incremental: true,
            fallback_threshold: 0.5,
            cache_policy: CachePolicy::Reinc,
            cache_capacity_frac: 1.0,
            evaluate: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.batch_size >= 1,
            InvalidArgument,
            "batch_size must be at least 1"
        );
        ensure!(
            self.stride >= 1,
            InvalidArgument,
            "stride must be at least 1"
        );
        ensure!(
            self.cache_capacity_frac >= 0.0 && self.cache_capacity_frac.is_finite(),
            InvalidArgument,
            "cache_capacity_frac must be a finite non-negative number, got {}",
            self.cache_capacity_frac
        );
        ensure!(
            self.lr >= 0.0 && self.lr.is_finite(),
            InvalidArgument,
            "lr must be finite and non-negative"
        );
        ensure!(
            (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.eps > 0.0,
            InvalidArgument,
            "Adam needs beta1, beta2 in [0, 1) and eps > 0"
        );
        ensure!(
            (0.0..=1.0).contains(&self.fallback_threshold),
            InvalidArgument,
            "fallback_threshold must be in [0, 1]"
        );
        Ok(())
    }

    pub fn optimizer_settings(&self) -> OptimizerSettings {
        OptimizerSettings {
            kind: self.optimizer,
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn incremental_options(&self) -> IncrementalOptions {
        IncrementalOptions {
            fallback_threshold: self.fallback_threshold,
            ..IncrementalOptions::default()
        }
    }

    /// Every optimization disabled: no cache and no incremental aggregation.
    pub fn baseline(mut self) -> Self {
        self.incremental = false;
        self.cache_policy = CachePolicy::Off;
        self
    }
}
