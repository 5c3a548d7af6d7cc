//! Label each access with the in-page blocks touched soon after it.

use transformap::address::AddressConfig;
use transformap::labeling::{bitmap_to_label, build_dataset, collect_bitmap, LabelConfig, Vocab};
use transformap::trace::{generate_synthetic, page_local_benchmark};

fn main() -> transformap::Result<()> {
    let config = AddressConfig::new(24, 12, 6)?;
    let labels = LabelConfig { window: 16, ..LabelConfig::default() };
    let trace = generate_synthetic(&page_local_benchmark(200, 3), &config)?;
    let blocks: Vec<u64> = trace.addresses().map(|a| a >> config.block_bits).collect();

    let bitmap = collect_bitmap(&blocks, 10, labels.window, &config);
    let bits: String = (0..bitmap.width()).map(|i| if bitmap.get(i) { '1' } else { '.' }).collect();
    println!("access 10, index {}: {bits}", config.block_index(blocks[10]));
    let label = bitmap_to_label(&bitmap, labels.k_max);
    println!("label {:?} -> tokens {:?}", label.indexes, label.tokens(&Vocab::new(&config)));

    let samples = build_dataset(&trace, &config, &labels)?;
    let empty = samples.iter().filter(|s| s.target.indexes.is_empty()).count();
    println!("{} samples, {} with an empty label, input width {}", samples.len(), empty, samples[0].input.len());
    Ok(())
}
