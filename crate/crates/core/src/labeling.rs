//! Training labels: the set of in-page block indexes touched in a lookahead
//! window, recorded in a bitmap so order and repetition are discarded.

use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::address::{flatten_history, to_block_address, AddressConfig};
use crate::error::{Error, Result};
use crate::trace::Trace;

/// Decoder vocabulary: block indexes `0..2^n`, then three sentinels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub blocks: usize,
}

impl Vocab {
    pub fn new(config: &AddressConfig) -> Self {
        Vocab {
            blocks: config.blocks_per_page(),
        }
    }

    pub fn begin(&self) -> usize {
        self.blocks
    }

    pub fn end(&self) -> usize {
        self.blocks + 1
    }

    pub fn pad(&self) -> usize {
        self.blocks + 2
    }

    pub fn size(&self) -> usize {
        self.blocks + 3
    }

    pub fn is_block(&self, token: usize) -> bool {
        token < self.blocks
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OffsetBitmap {
    bits: Vec<bool>,
}

impl OffsetBitmap {
    pub fn new(width: usize) -> Self {
        OffsetBitmap {
            bits: vec![false; width],
        }
    }

    pub fn width(&self) -> usize {
        self.bits.len()
    }

    pub fn set(&mut self, index: usize) {
        self.bits[index] = true;
    }

    pub fn get(&self, index: usize) -> bool {
        self.bits[index]
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }
}

/// Ascending block indexes; the end sentinel is implied.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabelSequence {
    pub indexes: Vec<u32>,
}

impl LabelSequence {
    /// Decoder target tokens: the indexes followed by END.
    pub fn tokens(&self, vocab: &Vocab) -> Vec<usize> {
        let mut out: Vec<usize> = self.indexes.iter().map(|&i| i as usize).collect();
        out.push(vocab.end());
        out
    }
}

impl fmt::Display for LabelSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for i in &self.indexes {
            write!(f, "{i},")?;
        }
        write!(f, "END]")
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    /// `t * (m + n)` bits, oldest history entry first.
    pub input: Vec<u8>,
    pub target: LabelSequence,
    pub position: usize,
    pub page: u64,
}

/// Labeling hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelConfig {
    /// History length `t` in block addresses.
    pub history: usize,
    /// Lookahead window in accesses.
    pub window: usize,
    /// Most indexes kept per label.
    pub k_max: usize,
}

impl Default for LabelConfig {
    fn default() -> Self {
        LabelConfig {
            history: 8,
            window: 64,
            k_max: 8,
        }
    }
}

/// Marks block indexes of accesses in `(position, position + window]` that
/// fall in the page of `blocks[position]`, except its own index.
pub fn collect_bitmap(blocks: &[u64], position: usize, window: usize, config: &AddressConfig) -> OffsetBitmap {
    let mut bitmap = OffsetBitmap::new(config.blocks_per_page());
    let current = blocks[position];
    let page = config.page_of_block(current);
    let own = config.block_index(current);
    let end = blocks.len().min(position.saturating_add(window).saturating_add(1));
    for &b in &blocks[position + 1..end] {
        if config.page_of_block(b) == page {
            let idx = config.block_index(b);
            if idx != own {
                bitmap.set(idx as usize);
            }
        }
    }
    bitmap
}

pub fn bitmap_to_label(bitmap: &OffsetBitmap, k_max: usize) -> LabelSequence {
    LabelSequence {
        indexes: bitmap.ones().take(k_max).map(|i| i as u32).collect(),
    }
}

/// One sample per position `history..len`, each with the last `history`
/// block addresses (current access included) as input.
pub fn build_dataset(trace: &Trace, config: &AddressConfig, labels: &LabelConfig) -> Result<Vec<Sample>> {
    let t = labels.history;
    if t == 0 || labels.window == 0 {
        return Err(Error::Config("history and window must be at least 1".into()));
    }
    if trace.len() < t + 1 {
        return Err(Error::Dataset(format!(
            "trace of {} records is shorter than history + 1 = {}",
            trace.len(),
            t + 1
        )));
    }
    let blocks: Vec<u64> = trace.addresses().map(|a| to_block_address(a, config)).collect();
    let samples = (t..blocks.len())
        .map(|pos| {
            let bitmap = collect_bitmap(&blocks, pos, labels.window, config);
            Sample {
                input: flatten_history(&blocks[pos + 1 - t..=pos], t, config),
                target: bitmap_to_label(&bitmap, labels.k_max),
                position: pos,
                page: config.page_of_block(blocks[pos]),
            }
        })
        .collect();
    Ok(samples)
}

/// Writes `input_bits<TAB>label_indexes`, one sample per line.
pub fn write_dataset(mut sink: impl Write, samples: &[Sample]) -> std::io::Result<()> {
    let mut line = String::new();
    for s in samples {
        line.clear();
        line.extend(s.input.iter().map(|&b| if b == 0 { '0' } else { '1' }));
        line.push('\t');
        for (i, idx) in s.target.indexes.iter().enumerate() {
            if i > 0 {
                line.push(',');
            }
            line.push_str(&idx.to_string());
        }
        writeln!(sink, "{line}")?;
    }
    Ok(())
}

/// Reads the format of [`write_dataset`]. Positions are line indexes and
/// page ids are unknown (0).
pub fn read_dataset(source: impl BufRead) -> Result<Vec<Sample>> {
    let mut out: Vec<Sample> = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let lineno = i + 1;
        let parse_err = |message: String| Error::Parse { line: lineno, message };
        let line = line.map_err(|e| parse_err(e.to_string()))?;
        if line.is_empty() {
            continue;
        }
        let (bits, labels) = line
            .split_once('\t')
            .ok_or_else(|| parse_err("missing tab separator".into()))?;
        let input = bits
            .bytes()
            .map(|b| match b {
                b'0' => Ok(0),
                b'1' => Ok(1),
                other => Err(parse_err(format!("invalid bit {:?}", other as char))),
            })
            .collect::<Result<Vec<u8>>>()?;
        if let Some(first) = out.first() {
            if first.input.len() != input.len() {
                return Err(parse_err(format!(
                    "input has {} bits, earlier lines have {}",
                    input.len(),
                    first.input.len()
                )));
            }
        }
        let indexes = if labels.is_empty() {
            Vec::new()
        } else {
            labels
                .split(',')
                .map(|f| f.parse::<u32>().map_err(|_| parse_err(format!("bad label {f:?}"))))
                .collect::<Result<Vec<_>>>()?
        };
        if indexes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(parse_err("labels must be strictly ascending".into()));
        }
        out.push(Sample {
            input,
            target: LabelSequence { indexes },
            position: out.len(),
            page: 0,
        });
    }
    Ok(out)
}
