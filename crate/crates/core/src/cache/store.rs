use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use ordered_float::OrderedFloat;
use serde::{Deserialize, Serialize};

use super::{future_access_count, imminence, AggKey, ExecContext};
use crate::error::{ensure, Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    /// Score `F / S - I`; entries leave as soon as their future count hits zero.
    #[default]
    Reinc,
    Lru,
    Lfu,
}

impl Policy {
    pub const ALL: [Policy; 3] = [Self::Reinc, Self::Lru, Self::Lfu];
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reinc" => Ok(Self::Reinc),
            "lru" => Ok(Self::Lru),
            "lfu" => Ok(Self::Lfu),
            _ => Err(Error::InvalidArgument(format!(
                "unknown cache policy {s:?}"
            ))),
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Reinc => "reinc",
            Self::Lru => "lru",
            Self::Lfu => "lfu",
        })
    }
}

/// Counters since construction. Sizes are in payload elements.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub evictions: u64,
    pub expirations: u64,
    /// Entries dropped by [`CacheStore::bump_epoch`].
    pub invalidations: u64,
    /// Insertions refused for size or priority.
    pub rejections: u64,
    pub peak_resident_units: u64,
}

impl CacheStats {
    pub fn lookups(&self) -> u64 {
        self.hits + self.misses
    }

    pub fn hit_rate(&self) -> f64 {
        if self.lookups() == 0 {
            0.0
        } else {
            self.hits as f64 / self.lookups() as f64
        }
    }

    pub fn merge(&mut self, other: &CacheStats) {
        self.hits += other.hits;
        self.misses += other.misses;
        self.evictions += other.evictions;
        self.expirations += other.expirations;
        self.invalidations += other.invalidations;
        self.rejections += other.rejections;
        self.peak_resident_units = self.peak_resident_units.max(other.peak_resident_units);
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PutOutcome {
    Stored {
        evicted: Vec<AggKey>,
    },
    /// No future lookups were predicted.
    ExpiredOnArrival,
    TooLarge,
    /// Every resident entry that would have to go outranks the newcomer.
    LowPriority,
}

impl PutOutcome {
    pub fn stored(&self) -> bool {
        matches!(self, Self::Stored { .. })
    }
}

/// Eviction order: the smallest rank leaves first.
type Rank = (OrderedFloat<f64>, u64, u64);

#[derive(Clone, Debug)]
struct Entry<V> {
    payload: V,
    size: u64,
    future: u32,
    imminence: u32,
    freq: u64,
    last_use: u64,
    seq: u64,
    rank: Rank,
}

/// A single worker's aggregation cache with one shared capacity across the
/// global and local levels.
#[derive(Clone, Debug)]
pub struct CacheStore<V> {
    policy: Policy,
    capacity: u64,
    used: u64,
    entries: HashMap<AggKey, Entry<V>>,
    order: BTreeMap<Rank, AggKey>,
    clock: u64,
    epoch: u64,
    stats: CacheStats,
    log: Option<Vec<(AggKey, bool)>>,
}

impl<V: Clone> CacheStore<V> {
    pub fn new(policy: Policy, capacity_units: u64) -> Result<Self> {
        if capacity_units == 0 {
            return Err(Error::ZeroCapacity);
        }
        Ok(Self {
            policy,
            capacity: capacity_units,
            used: 0,
            entries: HashMap::new(),
            order: BTreeMap::new(),
            clock: 0,
            epoch: 0,
            stats: CacheStats::default(),
            log: None,
        })
    }

    /// Records every lookup as `(key, hit)` from now on.
    pub fn record_lookups(&mut self) {
        self.log.get_or_insert_with(Vec::new);
    }

    pub fn lookup_log(&self) -> &[(AggKey, bool)] {
        self.log.as_deref().unwrap_or(&[])
    }

    pub fn policy(&self) -> Policy {
        self.policy
    }

    pub fn capacity_units(&self) -> u64 {
        self.capacity
    }

    pub fn resident_units(&self) -> u64 {
        self.used
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, key: &AggKey) -> bool {
        self.entries.contains_key(key)
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Remaining predicted lookups of a resident entry.
    pub fn future_count(&self, key: &AggKey) -> Option<u32> {
        self.entries.get(key).map(|e| e.future)
    }

    pub fn priority(&self, key: &AggKey) -> Option<f64> {
        self.entries.get(key).map(|e| e.rank.0.into_inner())
    }

    pub fn keys(&self) -> impl Iterator<Item = &AggKey> {
        self.entries.keys()
    }

    pub fn stats(&self) -> CacheStats {
        self.stats
    }

    fn rank(&self, key: &AggKey, e: &Entry<V>) -> Rank {
        match self.policy {
            Policy::Reinc => {
                let p = e.future as f64 / e.size as f64 - e.imminence as f64;
                (OrderedFloat(p), key.t as u64, e.seq)
            }
            Policy::Lru => (OrderedFloat(e.last_use as f64), 0, e.seq),
            Policy::Lfu => (OrderedFloat(e.freq as f64), 0, e.seq),
        }
    }

    /// Inserts `payload` scored from `ctx`, evicting as needed.
    pub fn put(
        &mut self,
        key: AggKey,
        payload: V,
        size_units: u64,
        ctx: &ExecContext,
    ) -> Result<PutOutcome> {
        ensure!(size_units > 0, InvalidArgument, "empty payload for {key:?}");
        ctx.validate()?;
        self.clock += 1;
        self.remove(&key);
        let future = future_access_count(ctx, key.kind);
        if self.policy == Policy::Reinc && future == 0 {
            self.stats.expirations += 1;
            return Ok(PutOutcome::ExpiredOnArrival);
        }
        if size_units > self.capacity {
            self.stats.rejections += 1;
            return Ok(PutOutcome::TooLarge);
        }
        let mut entry = Entry {
            payload,
            size: size_units,
            future,
            imminence: imminence(ctx, key.level),
            freq: 1,
            last_use: self.clock,
            seq: self.clock,
            rank: (OrderedFloat(0.0), 0, 0),
        };
        entry.rank = self.rank(&key, &entry);

        let mut victims = Vec::new();
        let mut freed = 0;
        for (rank, k) in &self.order {
            if self.used - freed + size_units <= self.capacity {
                break;
            }
            if self.policy == Policy::Reinc && *rank > entry.rank {
                self.stats.rejections += 1;
                return Ok(PutOutcome::LowPriority);
            }
            victims.push(*k);
            freed += self.entries[k].size;
        }
        for k in &victims {
            self.remove(k);
        }
        self.stats.evictions += victims.len() as u64;
        self.order.insert(entry.rank, key);
        self.used += size_units;
        self.entries.insert(key, entry);
        self.stats.peak_resident_units = self.stats.peak_resident_units.max(self.used);
        Ok(PutOutcome::Stored { evicted: victims })
    }

    /// Looks `key` up, consuming one predicted access on a hit.
    pub fn get(&mut self, key: &AggKey) -> Option<V> {
        self.clock += 1;
        let hit = self.entries.contains_key(key);
        if let Some(log) = &mut self.log {
            log.push((*key, hit));
        }
        if !hit {
            self.stats.misses += 1;
            return None;
        }
        self.stats.hits += 1;
        let mut e = self.entries.remove(key).expect("checked above");
        self.order.remove(&e.rank);
        e.future = e.future.saturating_sub(1);
        e.freq += 1;
        e.last_use = self.clock;
        if self.policy == Policy::Reinc && e.future == 0 {
            self.used -= e.size;
            self.stats.expirations += 1;
            return Some(e.payload);
        }
        e.rank = self.rank(key, &e);
        let payload = e.payload.clone();
        self.order.insert(e.rank, *key);
        self.entries.insert(*key, e);
        Some(payload)
    }

    fn remove(&mut self, key: &AggKey) -> bool {
        match self.entries.remove(key) {
            Some(e) => {
                self.order.remove(&e.rank);
                self.used -= e.size;
                true
            }
            None => false,
        }
    }

    /// Drops every entry whose payload depends on learnable parameters.
    pub fn bump_epoch(&mut self) {
        self.epoch += 1;
        let stale: Vec<AggKey> = self
            .entries
            .keys()
            .filter(|k| k.kind.weight_dependent())
            .copied()
            .collect();
        for k in &stale {
            self.remove(k);
        }
        self.stats.invalidations += stale.len() as u64;
    }

    /// Drops everything, keeping counters.
    pub fn clear(&mut self) {
        self.entries.clear();
        self.order.clear();
        self.used = 0;
    }
}
