//! Compare prefetchers on one trace, with and without prefetch latency.

use transformap::address::AddressConfig;
use transformap::prefetch::{BestOffset, Isb, NextLine, NoPrefetcher, Prefetcher};
use transformap::sim::{simulate, CacheConfig, CsvRow, SimConfig};
use transformap::trace::mixed_benchmark;

fn main() -> transformap::Result<()> {
    let address = AddressConfig::new(24, 12, 6)?;
    let trace = mixed_benchmark(1, 500, 6, &address)?;
    println!("{} accesses", trace.len());
    for delay in [0, 10] {
        let sim = SimConfig { cache: CacheConfig::desk(), prefetch_delay: delay };
        let mut prefetchers: Vec<Box<dyn Prefetcher>> = vec![
            Box::new(NoPrefetcher),
            Box::new(NextLine::new(1, address)),
            Box::new(BestOffset::new(Default::default(), address)),
            Box::new(Isb::new(Default::default(), address)),
        ];
        for p in prefetchers.iter_mut() {
            let row = CsvRow::from(&simulate(&trace, p.as_mut(), &sim, &address)?);
            println!(
                "delay {delay:>2} {:<12} accuracy {:>8} coverage {:>9} mpki improvement {:>9}",
                row.prefetcher, row.accuracy, row.coverage, row.mpki_improvement
            );
        }
    }
    Ok(())
}
