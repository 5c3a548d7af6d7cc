//! Generate a synthetic trace, write it as text, and parse it back.
//!
//! `cargo run --example trace_io`

use transformap::address::AddressConfig;
use transformap::trace::{generate_synthetic, parse_trace, write_trace, SyntheticKind, SyntheticSpec};

fn main() -> transformap::Result<()> {
    let config = AddressConfig::new(48, 12, 6)?;
    let kinds = [
        SyntheticKind::ConstantStride { start: 0x40_0000, stride: 64 },
        SyntheticKind::PageLocalPermutation { base_page: 0x100, pages: 4, period: 8 },
        SyntheticKind::TemporalStream { period: 5, addresses: Vec::new() },
        SyntheticKind::Random,
    ];
    for kind in kinds {
        let name = kind.name();
        let trace = generate_synthetic(&SyntheticSpec::new(kind, 1000, 7), &config)?;
        let mut text = Vec::new();
        write_trace(&mut text, &trace).expect("in-memory write");
        let back = parse_trace(text.as_slice(), &config)?;
        assert_eq!(back, trace);
        let head: Vec<String> = trace.addresses().take(4).map(|a| format!("{a:#x}")).collect();
        println!("{name:<24} {} records, {} bytes of text, starts {}", trace.len(), text.len(), head.join(" "));
    }

    // Two-column lines have no instruction id; the record index stands in.
    let two = parse_trace("4198400 4096\n4198404 4160\n".as_bytes(), &config)?;
    println!("two-column trace: {:?}", two.records);
    Ok(())
}
