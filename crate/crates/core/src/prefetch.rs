//! Prefetchers driven by the demand access stream.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::hash::Hash;

use crate::address::{reconstruct_address, to_block_address, AddressConfig};
use crate::error::Result;
use crate::infer::Predictor;
use crate::tensor::Scalar;

pub trait Prefetcher {
    fn name(&self) -> &str;

    /// Observes one demand access and returns byte addresses to prefetch.
    fn on_access(&mut self, pc: u64, addr: u64, was_miss: bool) -> Result<Vec<u64>>;
}

/// Issues nothing.
#[derive(Debug, Default)]
pub struct NoPrefetcher;

impl Prefetcher for NoPrefetcher {
    fn name(&self) -> &str {
        "none"
    }

    fn on_access(&mut self, _pc: u64, _addr: u64, _was_miss: bool) -> Result<Vec<u64>> {
        Ok(Vec::new())
    }
}

fn block_to_addr(block: u64, config: &AddressConfig) -> Option<u64> {
    let addr = block.checked_shl(config.block_bits)?;
    (addr >> config.block_bits == block && config.contains(addr)).then_some(addr)
}

/// Prefetches the `degree` blocks following every access.
#[derive(Debug)]
pub struct NextLine {
    pub degree: u64,
    config: AddressConfig,
}

impl NextLine {
    pub fn new(degree: u64, config: AddressConfig) -> Self {
        NextLine { degree, config }
    }
}

impl Prefetcher for NextLine {
    fn name(&self) -> &str {
        "next-line"
    }

    fn on_access(&mut self, _pc: u64, addr: u64, _was_miss: bool) -> Result<Vec<u64>> {
        let block = to_block_address(addr, &self.config);
        Ok((1..=self.degree)
            .filter_map(|d| block.checked_add(d).and_then(|b| block_to_addr(b, &self.config)))
            .collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BestOffsetConfig {
    /// Recent block addresses remembered.
    pub recent: usize,
    /// Candidate offsets are `1..=max_offset` blocks.
    pub max_offset: u64,
    /// Accesses per learning round.
    pub round: usize,
}

impl Default for BestOffsetConfig {
    fn default() -> Self {
        BestOffsetConfig {
            recent: 64,
            max_offset: 16,
            round: 256,
        }
    }
}

/// Simplified best-offset prefetcher.
///
/// Each access scores every candidate offset `d` whose `block - d` is among
/// the recent blocks. At the end of a round the highest score wins (ties go
/// to the smaller offset) and the scores reset. Before the first round ends
/// the offset is 1.
#[derive(Debug)]
pub struct BestOffset {
    config: BestOffsetConfig,
    address: AddressConfig,
    recent: VecDeque<u64>,
    scores: Vec<u32>,
    seen: usize,
    offset: u64,
}

impl BestOffset {
    pub fn new(config: BestOffsetConfig, address: AddressConfig) -> Self {
        BestOffset {
            recent: VecDeque::with_capacity(config.recent),
            scores: vec![0; config.max_offset as usize],
            seen: 0,
            offset: 1,
            config,
            address,
        }
    }

    pub fn offset(&self) -> u64 {
        self.offset
    }

    pub fn scores(&self) -> &[u32] {
        &self.scores
    }
}

impl Prefetcher for BestOffset {
    fn name(&self) -> &str {
        "best-offset"
    }

    fn on_access(&mut self, _pc: u64, addr: u64, _was_miss: bool) -> Result<Vec<u64>> {
        let block = to_block_address(addr, &self.address);
        for d in 1..=self.config.max_offset {
            if let Some(base) = block.checked_sub(d) {
                if self.recent.contains(&base) {
                    self.scores[d as usize - 1] += 1;
                }
            }
        }
        if self.config.recent > 0 {
            if self.recent.len() == self.config.recent {
                self.recent.pop_front();
            }
            self.recent.push_back(block);
        }
        self.seen += 1;
        if self.seen == self.config.round {
            let mut best = 0;
            for (i, &s) in self.scores.iter().enumerate() {
                if s > self.scores[best] {
                    best = i;
                }
            }
            self.offset = best as u64 + 1;
            self.scores.iter_mut().for_each(|s| *s = 0);
            self.seen = 0;
        }
        Ok(block
            .checked_add(self.offset)
            .and_then(|b| block_to_addr(b, &self.address))
            .into_iter()
            .collect())
    }
}

/// Fixed-capacity map evicting the least recently used key.
#[derive(Debug)]
pub struct LruMap<K, V> {
    capacity: usize,
    clock: u64,
    entries: HashMap<K, (V, u64)>,
    order: BTreeMap<u64, K>,
}

impl<K: Hash + Eq + Clone, V> LruMap<K, V> {
    pub fn new(capacity: usize) -> Self {
        LruMap {
            capacity,
            clock: 0,
            entries: HashMap::new(),
            order: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn tick(&mut self) -> u64 {
        self.clock += 1;
        self.clock
    }

    /// Looks up `key` and marks it most recently used.
    pub fn get(&mut self, key: &K) -> Option<&V> {
        let now = self.tick();
        let (_, stamp) = self.entries.get_mut(key)?;
        self.order.remove(stamp);
        *stamp = now;
        self.order.insert(now, key.clone());
        self.entries.get(key).map(|(v, _)| v)
    }

    pub fn insert(&mut self, key: K, value: V) {
        if self.capacity == 0 {
            return;
        }
        let now = self.tick();
        if let Some((_, stamp)) = self.entries.remove(&key) {
            self.order.remove(&stamp);
        } else if self.entries.len() == self.capacity {
            if let Some((_, old)) = self.order.pop_first() {
                self.entries.remove(&old);
            }
        }
        self.order.insert(now, key.clone());
        self.entries.insert(key, (value, now));
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IsbConfig {
    pub last_entries: usize,
    pub pair_entries: usize,
}

impl Default for IsbConfig {
    fn default() -> Self {
        IsbConfig {
            last_entries: 256,
            pair_entries: 4096,
        }
    }
}

/// Simplified irregular-stream prefetcher: per PC, remembers which block
/// followed each block and prefetches that successor when a block recurs.
#[derive(Debug)]
pub struct Isb {
    address: AddressConfig,
    last: LruMap<u64, u64>,
    next: LruMap<(u64, u64), u64>,
}

impl Isb {
    pub fn new(config: IsbConfig, address: AddressConfig) -> Self {
        Isb {
            address,
            last: LruMap::new(config.last_entries),
            next: LruMap::new(config.pair_entries),
        }
    }
}

impl Prefetcher for Isb {
    fn name(&self) -> &str {
        "isb"
    }

    fn on_access(&mut self, pc: u64, addr: u64, _was_miss: bool) -> Result<Vec<u64>> {
        let block = to_block_address(addr, &self.address);
        if let Some(&prev) = self.last.get(&pc) {
            self.next.insert((pc, prev), block);
        }
        self.last.insert(pc, block);
        Ok(self
            .next
            .get(&(pc, block))
            .and_then(|&b| block_to_addr(b, &self.address))
            .into_iter()
            .collect())
    }
}

/// Replays precomputed per-access prefetch addresses, one list per access in order.
#[derive(Debug)]
pub struct Replay {
    name: String,
    lists: Vec<Vec<u64>>,
    at: usize,
}

impl Replay {
    pub fn new(name: impl Into<String>, lists: Vec<Vec<u64>>) -> Self {
        Replay {
            name: name.into(),
            lists,
            at: 0,
        }
    }
}

impl Prefetcher for Replay {
    fn name(&self) -> &str {
        &self.name
    }

    fn on_access(&mut self, _pc: u64, _addr: u64, _was_miss: bool) -> Result<Vec<u64>> {
        let out = self.lists.get(self.at).cloned().unwrap_or_default();
        self.at += 1;
        Ok(out)
    }
}

/// Runs the transformer on its own access history as the trace streams by.
pub struct ModelPrefetcher<T: Scalar = f32> {
    predictor: Predictor<T>,
    history: VecDeque<u64>,
    position: usize,
}

impl<T: Scalar> ModelPrefetcher<T> {
    pub fn new(predictor: Predictor<T>) -> Self {
        ModelPrefetcher {
            history: VecDeque::with_capacity(predictor.labels.history),
            predictor,
            position: 0,
        }
    }
}

impl<T: Scalar> Prefetcher for ModelPrefetcher<T> {
    fn name(&self) -> &str {
        "transformap"
    }

    fn on_access(&mut self, _pc: u64, addr: u64, _was_miss: bool) -> Result<Vec<u64>> {
        let address = self.predictor.address;
        if self.history.len() == self.predictor.labels.history {
            self.history.pop_front();
        }
        self.history.push_back(to_block_address(addr, &address));
        let history: Vec<u64> = self.history.iter().copied().collect();
        let prediction = self.predictor.predict(&history, self.position)?;
        self.position += 1;
        prediction
            .block_indexes
            .iter()
            .map(|&i| reconstruct_address(addr, i, &address))
            .collect()
    }
}
