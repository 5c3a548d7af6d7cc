//! Set-associative LRU cache simulation and prefetcher metrics.
//!
//! A trace is replayed twice: once without prefetching for the baseline miss
//! count, once with the prefetcher under test. Metrics:
//!
//! * accuracy: useful prefetches / prefetches issued
//! * coverage: (baseline misses - prefetch misses) / baseline misses
//! * MPKI improvement: (baseline MPKI - prefetch MPKI) / baseline MPKI
//!
//! A prefetch is issued when its block is not already resident; a request
//! for a resident block only refreshes its LRU position and is counted as
//! redundant. A prefetched line is useful the first time a demand access
//! hits it.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::address::{to_block_address, AddressConfig};
use crate::error::{Error, Result};
use crate::prefetch::Prefetcher;
use crate::trace::{InstrIds, Trace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheConfig {
    pub sets: usize,
    pub ways: usize,
}

impl Default for CacheConfig {
    fn default() -> Self {
        CacheConfig { sets: 2048, ways: 16 }
    }
}

impl CacheConfig {
    /// A 4 KiB cache of 64-byte lines, small enough to reason about by hand.
    pub fn desk() -> Self {
        CacheConfig { sets: 16, ways: 4 }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.sets.is_power_of_two() || self.ways == 0 {
            return Err(Error::Config(format!(
                "cache needs a power-of-two set count and at least one way, got {}x{}",
                self.sets, self.ways
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Line {
    block: u64,
    prefetched: bool,
    used: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub demand_accesses: u64,
    pub demand_misses: u64,
    pub prefetches_issued: u64,
    pub prefetches_redundant: u64,
    pub useful_prefetches: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Hit,
    Miss,
}

/// Block-addressed cache; each set lists lines from least to most recently used.
#[derive(Clone, Debug)]
pub struct Cache {
    config: CacheConfig,
    sets: Vec<Vec<Line>>,
    pub stats: CacheStats,
}

impl Cache {
    pub fn new(config: CacheConfig) -> Result<Self> {
        config.validate()?;
        Ok(Cache {
            config,
            sets: vec![Vec::with_capacity(config.ways); config.sets],
            stats: CacheStats::default(),
        })
    }

    fn set_of(&self, block: u64) -> usize {
        (block % self.config.sets as u64) as usize
    }

    pub fn contains(&self, block: u64) -> bool {
        self.sets[self.set_of(block)].iter().any(|l| l.block == block)
    }

    /// Resident blocks of the set holding `block`, least recently used first.
    pub fn set_contents(&self, block: u64) -> Vec<u64> {
        self.sets[self.set_of(block)].iter().map(|l| l.block).collect()
    }

    fn fill(&mut self, line: Line) {
        let ways = self.config.ways;
        let set = self.set_of(line.block);
        let lines = &mut self.sets[set];
        if lines.len() == ways {
            lines.remove(0);
        }
        lines.push(line);
    }

    pub fn demand(&mut self, block: u64) -> Outcome {
        self.stats.demand_accesses += 1;
        let set = self.set_of(block);
        let lines = &mut self.sets[set];
        if let Some(i) = lines.iter().position(|l| l.block == block) {
            let mut line = lines.remove(i);
            if line.prefetched && !line.used {
                line.used = true;
                self.stats.useful_prefetches += 1;
            }
            lines.push(line);
            return Outcome::Hit;
        }
        self.stats.demand_misses += 1;
        self.fill(Line {
            block,
            prefetched: false,
            used: false,
        });
        Outcome::Miss
    }

    /// Fills `block` as a prefetch unless it is already resident.
    pub fn prefetch(&mut self, block: u64) -> Outcome {
        let set = self.set_of(block);
        let lines = &mut self.sets[set];
        if let Some(i) = lines.iter().position(|l| l.block == block) {
            let line = lines.remove(i);
            lines.push(line);
            self.stats.prefetches_redundant += 1;
            return Outcome::Hit;
        }
        self.stats.prefetches_issued += 1;
        self.fill(Line {
            block,
            prefetched: true,
            used: false,
        });
        Outcome::Miss
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[derive(Default)]
pub struct SimConfig {
    pub cache: CacheConfig,
    /// Accesses between a prediction and its fill: requests made at access
    /// `i` land right after access `i + delay`.
    pub prefetch_delay: usize,
}


#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub prefetcher: String,
    pub accesses: u64,
    /// Instruction count behind the MPKI figures.
    pub instructions: u64,
    /// Whether `instructions` counts instructions or, lacking ids, accesses.
    pub mpki_basis: InstrIds,
    pub baseline: CacheStats,
    pub with_prefetch: CacheStats,
    pub accuracy: Option<f64>,
    pub coverage: Option<f64>,
    pub baseline_mpki: Option<f64>,
    pub prefetch_mpki: Option<f64>,
    pub mpki_improvement: Option<f64>,
    pub cache: CacheConfig,
    pub prefetch_delay: usize,
    pub definitions: String,
}

pub const DEFINITIONS: &str = "accuracy = useful / issued; coverage = (baseline misses - misses) / baseline misses; \
mpki improvement = (baseline mpki - mpki) / baseline mpki; requests for resident blocks are redundant, not issued, \
and only refresh LRU order; null marks a metric with a zero denominator; best-offset has no timeliness test \
or disable threshold; isb keeps a direct per-PC successor table without structural address translation";

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den != 0.0).then(|| num / den)
}

fn instruction_count(trace: &Trace) -> u64 {
    match (trace.instr_ids, trace.records.first(), trace.records.last()) {
        (InstrIds::Recorded, Some(first), Some(last)) => last.instr_id - first.instr_id,
        _ => trace.len() as u64,
    }
}

fn replay(
    trace: &Trace,
    prefetcher: Option<&mut dyn Prefetcher>,
    config: &SimConfig,
    address: &AddressConfig,
) -> Result<CacheStats> {
    let mut cache = Cache::new(config.cache)?;
    let Some(prefetcher) = prefetcher else {
        for r in &trace.records {
            cache.demand(to_block_address(r.addr, address));
        }
        return Ok(cache.stats);
    };
    let mut pending: std::collections::VecDeque<(usize, u64)> = Default::default();
    for (i, r) in trace.records.iter().enumerate() {
        let outcome = cache.demand(to_block_address(r.addr, address));
        for a in prefetcher.on_access(r.pc, r.addr, outcome == Outcome::Miss)? {
            if !address.contains(a) {
                return Err(Error::Contract(format!(
                    "{} requested {a:#x} outside the address space",
                    prefetcher.name()
                )));
            }
            pending.push_back((i + config.prefetch_delay, to_block_address(a, address)));
        }
        while pending.front().is_some_and(|&(due, _)| due <= i) {
            let (_, block) = pending.pop_front().expect("front checked");
            cache.prefetch(block);
        }
    }
    Ok(cache.stats)
}

/// Replays `trace` without and with `prefetcher` and derives the metrics.
pub fn simulate(
    trace: &Trace,
    prefetcher: &mut dyn Prefetcher,
    config: &SimConfig,
    address: &AddressConfig,
) -> Result<SimReport> {
    let baseline = replay(trace, None, config, address)?;
    let with_prefetch = replay(trace, Some(prefetcher), config, address)?;
    let instructions = instruction_count(trace);
    let kilo = instructions as f64 / 1000.0;
    let baseline_mpki = ratio(baseline.demand_misses as f64, kilo);
    let prefetch_mpki = ratio(with_prefetch.demand_misses as f64, kilo);
    let mpki_improvement = match (baseline_mpki, prefetch_mpki) {
        (Some(b), Some(p)) => ratio(b - p, b),
        _ => None,
    };
    Ok(SimReport {
        prefetcher: prefetcher.name().to_string(),
        accesses: trace.len() as u64,
        instructions,
        mpki_basis: trace.instr_ids,
        accuracy: ratio(with_prefetch.useful_prefetches as f64, with_prefetch.prefetches_issued as f64),
        coverage: ratio(
            baseline.demand_misses as f64 - with_prefetch.demand_misses as f64,
            baseline.demand_misses as f64,
        ),
        baseline_mpki,
        prefetch_mpki,
        mpki_improvement,
        baseline,
        with_prefetch,
        cache: config.cache,
        prefetch_delay: config.prefetch_delay,
        definitions: DEFINITIONS.to_string(),
    })
}

/// Columns of the per-run and combined CSV tables.
pub const CSV_COLUMNS: [&str; 12] = [
    "prefetcher",
    "accesses",
    "instructions",
    "baseline_misses",
    "misses",
    "issued",
    "useful",
    "redundant",
    "accuracy",
    "coverage",
    "mpki_improvement",
    "prefetch_delay",
];

/// One CSV row; undefined metrics are written as `NA`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub prefetcher: String,
    pub accesses: u64,
    pub instructions: u64,
    pub baseline_misses: u64,
    pub misses: u64,
    pub issued: u64,
    pub useful: u64,
    pub redundant: u64,
    pub accuracy: String,
    pub coverage: String,
    pub mpki_improvement: String,
    pub prefetch_delay: usize,
}

fn metric(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

impl CsvRow {
    pub fn mpki_improvement(&self) -> Option<f64> {
        self.mpki_improvement.parse().ok()
    }
}

impl From<&SimReport> for CsvRow {
    fn from(r: &SimReport) -> Self {
        CsvRow {
            prefetcher: r.prefetcher.clone(),
            accesses: r.accesses,
            instructions: r.instructions,
            baseline_misses: r.baseline.demand_misses,
            misses: r.with_prefetch.demand_misses,
            issued: r.with_prefetch.prefetches_issued,
            useful: r.with_prefetch.useful_prefetches,
            redundant: r.with_prefetch.prefetches_redundant,
            accuracy: metric(r.accuracy),
            coverage: metric(r.coverage),
            mpki_improvement: metric(r.mpki_improvement),
            prefetch_delay: r.prefetch_delay,
        }
    }
}

pub fn write_csv(sink: impl Write, rows: &[CsvRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    for row in rows {
        w.serialize(row).map_err(|e| Error::Input(format!("writing csv: {e}")))?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

/// Reads rows written by [`write_csv`], rejecting any other header.
pub fn read_csv(source: impl BufRead, name: &str) -> Result<Vec<CsvRow>> {
    let mut r = csv::Reader::from_reader(source);
    let headers = r.headers().map_err(|e| Error::Input(format!("{name}: {e}")))?.clone();
    for (i, expected) in CSV_COLUMNS.iter().enumerate() {
        match headers.get(i) {
            Some(h) if h == *expected => {}
            Some(h) => {
                return Err(Error::Input(format!(
                    "{name}: column {} is {h:?}, expected {expected:?}",
                    i + 1
                )))
            }
            None => return Err(Error::Input(format!("{name}: missing column {expected:?}"))),
        }
    }
    if let Some(extra) = headers.get(CSV_COLUMNS.len()) {
        return Err(Error::Input(format!("{name}: unexpected column {extra:?}")));
    }
    r.deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e| Error::Parse {
                line: i + 2,
                message: format!("{name}: {e}"),
            })
        })
        .collect()
}

/// Orders rows by MPKI improvement, best first; undefined values sort last.
pub fn rank_rows(rows: &mut [CsvRow]) {
    rows.sort_by(|a, b| match (a.mpki_improvement(), b.mpki_improvement()) {
        (Some(x), Some(y)) => y.total_cmp(&x),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
}
