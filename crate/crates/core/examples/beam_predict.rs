//! Beam search over a hand-written next-token table, then a model
//! predictor producing prefetch addresses.

use transformap::address::{reconstruct_address, AddressConfig};
use transformap::infer::{beam_search, BeamConfig, Predictor, StepModel};
use transformap::labeling::LabelConfig;
use transformap::model::{ModelConfig, ModelParams};

/// Tokens 0 and 1, END = 2, BEGIN = 3. Token 1 is likely first but leads nowhere good.
struct Table;

impl StepModel for Table {
    fn next_log_probs(&mut self, prefixes: &[Vec<usize>]) -> transformap::Result<Vec<Vec<f64>>> {
        Ok(prefixes
            .iter()
            .map(|p| {
                let probs: [f64; 4] = match p.as_slice() {
                    [3] => [0.45, 0.55, 0.0, 0.0],
                    [3, 0] => [0.05, 0.05, 0.9, 0.0],
                    _ => [0.3, 0.3, 0.4, 0.0],
                };
                probs.iter().map(|x| x.ln()).collect()
            })
            .collect())
    }
}

fn main() -> transformap::Result<()> {
    for width in [1, 2] {
        let best = beam_search(&mut Table, &BeamConfig { width, max_len: 3, begin: 3, end: 2 })?;
        println!("width {width}: {:?} score {:.3}", best.tokens, best.score);
    }

    // An untrained model decodes something arbitrary; the plumbing is the point.
    let address = AddressConfig::new(24, 12, 6)?;
    let labels = LabelConfig::default();
    let params = ModelParams::<f32>::seeded(ModelConfig::for_task(&address, &labels), 2)?;
    let mut predictor = Predictor::new(params, address, labels, 2)?;
    let current = 0x45_6780;
    let history: Vec<u64> = (0..8).map(|i| (current >> 6) - 7 + i).collect();
    let pred = predictor.predict(&history, 0)?;
    let addrs: Vec<String> = pred
        .block_indexes
        .iter()
        .map(|&b| reconstruct_address(current, b, &address).map(|a| format!("{a:#x}")))
        .collect::<Result<_, _>>()?;
    println!("untrained model would prefetch {addrs:?}");
    Ok(())
}
