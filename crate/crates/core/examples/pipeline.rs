//! The whole command-line flow in one process: synth, build, train,
//! predict, simulate twice and report.
//!
//! `cargo run --release --example pipeline -- /tmp/tm-demo`

use clap::Parser;
use transformap::cli::{run, Cli};

fn main() -> transformap::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "pipeline-out".into());
    let small = ["--set", "address_bits=24", "--set", "d_model=32", "--set", "d_ff=64", "--set", "layers=1", "--set", "epochs=3"];
    let path = |f: &str| format!("{out}/{f}");
    let steps: Vec<Vec<String>> = vec![
        vec!["synth".into(), "--length".into(), "4000".into(), "--set".into(), "synth_pages=16".into()],
        vec!["build".into(), path("trace.txt")],
        vec!["train".into(), path("dataset.tsv")],
        vec!["predict".into(), path("trace.txt"), "--checkpoint".into(), path("model.ckpt")],
        vec!["simulate".into(), path("trace.txt"), "--prefetcher".into(), "transformap".into(), "--predictions".into(), path("predictions.tsv")],
        vec!["simulate".into(), path("trace.txt"), "--prefetcher".into(), "best-offset".into()],
        vec!["report".into(), path("sim-transformap.csv"), path("sim-best-offset.csv")],
    ];
    for step in steps {
        eprintln!("== {}", step[0]);
        let mut args: Vec<String> = vec!["transformap".into(), "--seed".into(), "5".into(), "--out-dir".into(), out.clone()];
        args.extend(small.iter().map(|s| s.to_string()));
        args.extend(step);
        run(&Cli::try_parse_from(args).map_err(|e| transformap::Error::Config(e.to_string()))?)?;
    }
    Ok(())
}
