//! Feed the same accesses to next-line, best-offset and ISB and watch what
//! each one asks for.

use transformap::address::AddressConfig;
use transformap::prefetch::{BestOffset, BestOffsetConfig, Isb, IsbConfig, NextLine, Prefetcher};

fn main() -> transformap::Result<()> {
    let config = AddressConfig::new(48, 12, 6)?;
    let mut bo = BestOffset::new(BestOffsetConfig { round: 64, ..BestOffsetConfig::default() }, config);
    let mut isb = Isb::new(IsbConfig::default(), config);
    let mut nl = NextLine::new(2, config);

    // A stride of three blocks, then a repeating irregular stream on another pc.
    for i in 0..200u64 {
        bo.on_access(0x400, 0x10_0000 + i * 3 * 64, true)?;
    }
    println!("best-offset settled on offset {}", bo.offset());

    let stream = [0x9000, 0x2_4000, 0x1340, 0x7_7000];
    for round in 0..2 {
        for &a in &stream {
            let out = isb.on_access(0x500, a, true)?;
            println!("isb round {round} access {a:#x} -> {out:x?}");
        }
    }
    println!("next-line after 0x1000 -> {:x?}", nl.on_access(0x600, 0x1000, true)?);
    Ok(())
}
