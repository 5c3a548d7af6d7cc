//! Memory-access traces: the text format and synthetic generators.
//!
//! One record per line, whitespace separated decimal fields
//! `instr_id pc addr`. Lines starting with `#` and blank lines are skipped.
//! A file may omit the instruction column (`pc addr`); record indexes then
//! stand in for instruction ids and [`Trace::instr_ids`] says so.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::address::AddressConfig;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub instr_id: u64,
    pub pc: u64,
    pub addr: u64,
}

/// Where a trace's instruction ids came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InstrIds {
    Recorded,
    RecordIndex,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
    pub instr_ids: InstrIds,
}

impl Trace {
    pub fn new(records: Vec<TraceRecord>) -> Self {
        Trace {
            records,
            instr_ids: InstrIds::Recorded,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn addresses(&self) -> impl Iterator<Item = u64> + '_ {
        self.records.iter().map(|r| r.addr)
    }

    /// Records `range`, keeping the id provenance.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Trace {
        Trace {
            records: self.records[range].to_vec(),
            instr_ids: self.instr_ids,
        }
    }
}

pub fn parse_trace(source: impl BufRead, config: &AddressConfig) -> Result<Trace> {
    let mut records = Vec::new();
    let mut columns = None;
    for (i, line) in source.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = text.split_whitespace().collect();
        if fields.len() != 2 && fields.len() != 3 {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected 2 or 3 fields, found {}", fields.len()),
            });
        }
        match columns {
            None => columns = Some(fields.len()),
            Some(c) if c != fields.len() => {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("expected {c} fields like earlier lines, found {}", fields.len()),
                })
            }
            _ => {}
        }
        let mut values = [0u64; 3];
        for (slot, field) in values.iter_mut().zip(&fields) {
            *slot = field.parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("not an unsigned decimal integer: {field:?}"),
            })?;
        }
        let record = if fields.len() == 3 {
            TraceRecord {
                instr_id: values[0],
                pc: values[1],
                addr: values[2],
            }
        } else {
            TraceRecord {
                instr_id: records.len() as u64,
                pc: values[0],
                addr: values[1],
            }
        };
        config.check_address(record.addr).map_err(|e| e.context(format!("line {lineno}")))?;
        if let Some(prev) = records.last().map(|r: &TraceRecord| r.instr_id) {
            if record.instr_id < prev {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("instruction id {} decreases (previous {prev})", record.instr_id),
                });
            }
        }
        records.push(record);
    }
    Ok(Trace {
        records,
        instr_ids: if columns == Some(2) {
            InstrIds::RecordIndex
        } else {
            InstrIds::Recorded
        },
    })
}

pub fn write_trace(mut sink: impl Write, trace: &Trace) -> std::io::Result<()> {
    for r in &trace.records {
        match trace.instr_ids {
            InstrIds::Recorded => writeln!(sink, "{} {} {}", r.instr_id, r.pc, r.addr)?,
            InstrIds::RecordIndex => writeln!(sink, "{} {}", r.pc, r.addr)?,
        }
    }
    Ok(())
}

/// Access pattern produced by [`generate_synthetic`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SyntheticKind {
    /// `start, start + stride, start + 2·stride, …`
    ConstantStride { start: u64, stride: u64 },
    /// Visits pages of a working set in shuffled rounds; each visit touches
    /// `period` blocks of the page in one fixed seeded permutation order.
    PageLocalPermutation {
        base_page: u64,
        pages: u64,
        period: usize,
    },
    /// Repeats a sequence of `period` addresses. Uses `addresses` when given,
    /// otherwise draws block-aligned addresses from the seed.
    TemporalStream { period: usize, addresses: Vec<u64> },
    /// Independent uniform block-aligned addresses.
    Random,
}

impl SyntheticKind {
    pub fn name(&self) -> &'static str {
        match self {
            SyntheticKind::ConstantStride { .. } => "constant-stride",
            SyntheticKind::PageLocalPermutation { .. } => "page-local-permutation",
            SyntheticKind::TemporalStream { .. } => "temporal-stream",
            SyntheticKind::Random => "random",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub length: usize,
    pub seed: u64,
    /// Program counter stamped on every record.
    pub pc: u64,
    /// Instruction-id increment between consecutive records.
    pub instr_gap: u64,
}

impl SyntheticSpec {
    pub fn new(kind: SyntheticKind, length: usize, seed: u64) -> Self {
        SyntheticSpec {
            kind,
            length,
            seed,
            pc: 0x40_0000,
            instr_gap: 10,
        }
    }
}

/// The page-local benchmark: a 64-page working set with 16-block visits.
pub fn page_local_benchmark(length: usize, seed: u64) -> SyntheticSpec {
    SyntheticSpec::new(
        SyntheticKind::PageLocalPermutation {
            base_page: 0x100,
            pages: 64,
            period: 16,
        },
        length,
        seed,
    )
}

pub fn generate_synthetic(spec: &SyntheticSpec, config: &AddressConfig) -> Result<Trace> {
    if spec.length == 0 {
        return Err(Error::Config("synthetic trace length must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let block = config.block_size();
    let addrs: Vec<u64> = match &spec.kind {
        SyntheticKind::ConstantStride { start, stride } => (0..spec.length as u64)
            .map(|i| start.wrapping_add(i.wrapping_mul(*stride)))
            .collect(),
        SyntheticKind::PageLocalPermutation {
            base_page,
            pages,
            period,
        } => {
            let per_page = config.blocks_per_page();
            if *period == 0 || *period > per_page || *pages == 0 {
                return Err(Error::Config(format!(
                    "page-local-permutation needs 1 <= period <= {per_page} and pages >= 1"
                )));
            }
            let mut perm: Vec<u64> = (0..per_page as u64).collect();
            perm.shuffle(&mut rng);
            perm.truncate(*period);
            let mut order: Vec<u64> = Vec::new();
            let mut out = Vec::with_capacity(spec.length);
            'outer: loop {
                if order.is_empty() {
                    order = (0..*pages).collect();
                    order.shuffle(&mut rng);
                }
                let page = base_page + order.pop().expect("refilled");
                for &idx in &perm {
                    if out.len() == spec.length {
                        break 'outer;
                    }
                    out.push(((page << config.block_index_bits()) | idx) << config.block_bits);
                }
            }
            out
        }
        SyntheticKind::TemporalStream { period, addresses } => {
            let cycle: Vec<u64> = if addresses.is_empty() {
                if *period == 0 {
                    return Err(Error::Config("temporal-stream period must be positive".into()));
                }
                let blocks = 1u64 << config.block_address_bits().min(63);
                (0..*period).map(|_| rng.random_range(0..blocks) * block).collect()
            } else {
                addresses.clone()
            };
            (0..spec.length).map(|i| cycle[i % cycle.len()]).collect()
        }
        SyntheticKind::Random => {
            let blocks = 1u64 << config.block_address_bits().min(63);
            (0..spec.length).map(|_| rng.random_range(0..blocks) * block).collect()
        }
    };
    let records = addrs
        .into_iter()
        .enumerate()
        .map(|(i, addr)| {
            config.check_address(addr)?;
            Ok(TraceRecord {
                instr_id: i as u64 * spec.instr_gap,
                pc: spec.pc,
                addr,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Trace::new(records))
}

/// Interleaves equally sized chunks of several traces, round-robin, and
/// renumbers instruction ids so they stay monotone.
pub fn interleave_chunks(parts: &[Trace], chunk: usize) -> Trace {
    let mut records = Vec::new();
    let mut cursors = vec![0usize; parts.len()];
    let mut next_id = 0u64;
    loop {
        let mut progressed = false;
        for (part, cur) in parts.iter().zip(cursors.iter_mut()) {
            let end = (*cur + chunk).min(part.len());
            for r in &part.records[*cur..end] {
                records.push(TraceRecord {
                    instr_id: next_id,
                    ..*r
                });
                next_id += 10;
            }
            progressed |= end > *cur;
            *cur = end;
        }
        if !progressed {
            break;
        }
    }
    Trace::new(records)
}

/// Stride, temporal-stream and page-local traffic interleaved in chunks of
/// `chunk` records, `rounds` times over. Each kind has its own PC.
///
/// Needs at least 24 address bits with 4 KiB pages and 64 B blocks.
pub fn mixed_benchmark(seed: u64, chunk: usize, rounds: usize, config: &AddressConfig) -> Result<Trace> {
    let len = chunk * rounds;
    let mut stride = SyntheticSpec::new(
        SyntheticKind::ConstantStride {
            start: 0x40_0000,
            stride: config.block_size(),
        },
        len,
        seed,
    );
    stride.pc = 0x40_1000;
    let mut temporal = SyntheticSpec::new(
        SyntheticKind::TemporalStream {
            period: 200,
            addresses: Vec::new(),
        },
        len,
        seed.wrapping_add(1),
    );
    temporal.pc = 0x40_2000;
    let mut local = SyntheticSpec::new(
        SyntheticKind::PageLocalPermutation {
            base_page: 0x800,
            pages: 1024,
            period: 16,
        },
        len,
        seed.wrapping_add(2),
    );
    local.pc = 0x40_3000;
    let parts = [
        generate_synthetic(&stride, config)?,
        generate_synthetic(&temporal, config)?,
        generate_synthetic(&local, config)?,
    ];
    Ok(interleave_chunks(&parts, chunk))
}
