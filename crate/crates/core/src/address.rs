//! Address geometry and the binary codec used for model input.
//!
//! A byte address splits into `page | block index | block offset`. The model
//! sees block addresses (`page | block index`, `m + n` bits) as MSB-first bit
//! vectors, and predicts block indexes (`n` bits) within the current page.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AddressConfig {
    pub address_bits: u32,
    pub page_bits: u32,
    pub block_bits: u32,
}

impl Default for AddressConfig {
    /// 64-bit addresses, 4 KiB pages, 64 B blocks.
    fn default() -> Self {
        AddressConfig {
            address_bits: 64,
            page_bits: 12,
            block_bits: 6,
        }
    }
}

impl AddressConfig {
    pub fn new(address_bits: u32, page_bits: u32, block_bits: u32) -> Result<Self> {
        let config = AddressConfig {
            address_bits,
            page_bits,
            block_bits,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.block_bits < self.page_bits && self.page_bits <= self.address_bits) {
            return Err(Error::Config(format!(
                "need block_bits < page_bits <= address_bits, got {}/{}/{}",
                self.block_bits, self.page_bits, self.address_bits
            )));
        }
        if self.address_bits > 64 {
            return Err(Error::Config(format!(
                "address_bits {} exceeds 64",
                self.address_bits
            )));
        }
        if self.page_bits - self.block_bits > 16 {
            return Err(Error::Config("more than 2^16 blocks per page".into()));
        }
        Ok(())
    }

    /// `n`: width of a block index within a page.
    pub fn block_index_bits(&self) -> u32 {
        self.page_bits - self.block_bits
    }

    /// `m`: width of the page number.
    pub fn page_number_bits(&self) -> u32 {
        self.address_bits - self.page_bits
    }

    /// `m + n`: width of a block address, and of one encoded history entry.
    pub fn block_address_bits(&self) -> u32 {
        self.address_bits - self.block_bits
    }

    /// `2^n`.
    pub fn blocks_per_page(&self) -> usize {
        1 << self.block_index_bits()
    }

    pub fn block_size(&self) -> u64 {
        1 << self.block_bits
    }

    pub fn contains(&self, addr: u64) -> bool {
        fits(addr, self.address_bits)
    }

    pub fn check_address(&self, addr: u64) -> Result<()> {
        if self.contains(addr) {
            Ok(())
        } else {
            Err(Error::Range {
                value: addr,
                bits: self.address_bits,
            })
        }
    }

    pub fn block_index(&self, block_addr: u64) -> u32 {
        (block_addr & ((1u64 << self.block_index_bits()) - 1)) as u32
    }

    pub fn page_of_block(&self, block_addr: u64) -> u64 {
        block_addr >> self.block_index_bits()
    }
}

fn fits(value: u64, bits: u32) -> bool {
    bits >= 64 || value >> bits == 0
}

pub fn to_block_address(addr: u64, config: &AddressConfig) -> u64 {
    addr >> config.block_bits
}

/// MSB-first bits of one block address.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitVector(pub Vec<u8>);

impl BitVector {
    pub fn bits(&self) -> &[u8] {
        &self.0
    }

    pub fn decode(&self) -> u64 {
        self.0.iter().fold(0u64, |acc, &b| (acc << 1) | b as u64)
    }
}

pub fn encode_binary(block_addr: u64, config: &AddressConfig) -> Result<BitVector> {
    let width = config.block_address_bits();
    if !fits(block_addr, width) {
        return Err(Error::Range {
            value: block_addr,
            bits: width,
        });
    }
    let mut bits = Vec::with_capacity(width as usize);
    push_bits(&mut bits, block_addr, width);
    Ok(BitVector(bits))
}

fn push_bits(out: &mut Vec<u8>, value: u64, width: u32) {
    out.extend((0..width).rev().map(|i| ((value >> i) & 1) as u8));
}

/// Concatenates the encoded history, oldest first, into `t * (m + n)` tokens.
///
/// A history shorter than `t` is front-padded by repeating its oldest entry.
/// Entries wider than `m + n` bits are truncated to the low bits.
pub fn flatten_history(history: &[u64], t: usize, config: &AddressConfig) -> Vec<u8> {
    let width = config.block_address_bits();
    let mut out = Vec::with_capacity(t * width as usize);
    let take = history.len().min(t);
    let recent = &history[history.len() - take..];
    if let Some(&oldest) = recent.first() {
        for _ in take..t {
            push_bits(&mut out, oldest, width);
        }
    } else {
        out.resize(t * width as usize, 0);
    }
    for &b in recent {
        push_bits(&mut out, b, width);
    }
    out
}

/// Rebuilds a prefetch byte address from the current access and a predicted
/// in-page block index: `((current >> page_bits) << n | index) << block_bits`.
pub fn reconstruct_address(current_addr: u64, block_index: u32, config: &AddressConfig) -> Result<u64> {
    let n = config.block_index_bits();
    if block_index as u64 >= 1u64 << n {
        return Err(Error::Range {
            value: block_index as u64,
            bits: n,
        });
    }
    let page = current_addr >> config.page_bits;
    Ok(((page << n) | block_index as u64) << config.block_bits)
}
