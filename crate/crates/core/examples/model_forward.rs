//! Build an untrained model for a geometry and look at its first-step output.

use transformap::address::{flatten_history, AddressConfig};
use transformap::labeling::LabelConfig;
use transformap::model::{logits, ModelConfig, ModelParams};

fn main() -> transformap::Result<()> {
    let address = AddressConfig::new(24, 12, 6)?;
    let labels = LabelConfig::default();
    let config = ModelConfig::for_task(&address, &labels);
    let params = ModelParams::<f32>::seeded(config, 1)?;
    println!("{config:?}");
    println!("{} parameters in {} tensors", params.param_count(), params.names().len());

    let history: Vec<u64> = (0..8).map(|i| 0x4000 + i).collect();
    let input = flatten_history(&history, labels.history, &address);
    let vocab = config.vocab();
    let out = logits(&params, &input, &[vocab.begin()])?;
    let row = out.row(0);
    let best = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
    println!("{} logits for the first step, largest at token {best}", row.len());
    Ok(())
}
