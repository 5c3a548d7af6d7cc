//! Train a small model on a page-local trace and save a checkpoint.
//!
//! `cargo run --release --example train_small`

use transformap::address::AddressConfig;
use transformap::checkpoint;
use transformap::labeling::{build_dataset, LabelConfig};
use transformap::model::ModelConfig;
use transformap::trace::{generate_synthetic, page_local_benchmark};
use transformap::training::{train, TrainConfig};

fn main() -> transformap::Result<()> {
    let address = AddressConfig::new(24, 12, 6)?;
    let labels = LabelConfig::default();
    let trace = generate_synthetic(&page_local_benchmark(6000, 1), &address)?;
    let samples = build_dataset(&trace, &address, &labels)?;
    let (train_set, heldout) = samples.split_at(5000);

    let model = ModelConfig {
        d_model: 32,
        heads: 2,
        d_ff: 64,
        layers: 1,
        ..ModelConfig::for_task(&address, &labels)
    };
    let config = TrainConfig {
        epochs: 4,
        warmup_steps: 200,
        target_accuracy: Some(0.9),
        ..TrainConfig::default()
    };
    let (params, report) = train::<f32>(train_set, heldout, model, &config)?;
    for e in &report.epochs {
        println!(
            "epoch {} step {:>4} loss {:.4} held-out token acc {:.3} seq acc {:.3} ({:.1}s)",
            e.epoch, e.step, e.mean_loss, e.heldout.token_accuracy, e.heldout.sequence_accuracy, e.wall_time_secs
        );
    }
    let path = std::env::temp_dir().join("transformap-small.ckpt");
    checkpoint::save(&path, &params)?;
    println!("saved {}", path.display());
    Ok(())
}
