//! Command-line front end. Every command writes under `--out-dir`:
//!
//! | command    | files                                              |
//! |------------|----------------------------------------------------|
//! | `synth`    | `trace.txt`                                        |
//! | `build`    | `dataset.tsv`, `dataset_summary.json`              |
//! | `train`    | `model.ckpt`, `train_report.json`                  |
//! | `predict`  | `predictions.tsv`                                  |
//! | `simulate` | `sim-<prefetcher>.json`, `sim-<prefetcher>.csv`    |
//! | `report`   | `report.csv`, `report.txt`                         |
//!
//! Each command also writes the resolved settings to `<command>.config`.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::checkpoint;
use crate::config::{PrefetcherKind, RunConfig};
use crate::error::{Error, Result};
use crate::infer::{read_predictions, write_predictions, Predictor};
use crate::labeling::{build_dataset, read_dataset, write_dataset};
use crate::prefetch::{BestOffset, Isb, ModelPrefetcher, NextLine, NoPrefetcher, Prefetcher, Replay};
use crate::sim::{rank_rows, read_csv, simulate, write_csv, CsvRow, SimReport};
use crate::trace::{generate_synthetic, mixed_benchmark, parse_trace, write_trace, Trace};
use crate::training::train;

#[derive(Debug, Parser)]
#[command(name = "transformap", version, about = "Transformer-based memory prefetching toolkit")]
pub struct Cli {
    /// Key-value config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run seed; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    /// Extra `key=value` settings, applied last.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic trace.
    Synth(SynthArgs),
    /// Turn a trace into a labeled dataset.
    Build { trace: PathBuf },
    /// Train a model on a dataset.
    Train { dataset: PathBuf },
    /// Predict prefetch addresses for every access of a trace.
    Predict {
        trace: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Replay a trace through the cache with a prefetcher.
    Simulate(SimulateArgs),
    /// Merge simulation CSVs into one ranked table.
    Report {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// constant-stride, page-local-permutation, temporal-stream, random or mixed.
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long)]
    pub length: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    pub trace: PathBuf,
    /// none, next-line, best-offset, isb or transformap.
    #[arg(long)]
    pub prefetcher: Option<String>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Predictions file to replay instead of running the model.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub prefetch_delay: Option<usize>,
}

/// Merges the config file, command flags and `--set` overrides, in that order.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let mut flags: Vec<(&str, String)> = Vec::new();
    if let Some(seed) = cli.seed {
        flags.push(("seed", seed.to_string()));
    }
    let path = |p: &Path| p.display().to_string();
    match &cli.command {
        Command::Synth(a) => {
            if let Some(k) = &a.kind {
                flags.push(("synth_kind", k.clone()));
            }
            if let Some(n) = a.length {
                flags.push(("synth_length", n.to_string()));
            }
        }
        Command::Predict {
            checkpoint: Some(c), ..
        } => flags.push(("checkpoint", path(c))),
        Command::Simulate(a) => {
            if let Some(p) = &a.prefetcher {
                flags.push(("prefetcher", p.clone()));
            }
            if let Some(c) = &a.checkpoint {
                flags.push(("checkpoint", path(c)));
            }
            if let Some(p) = &a.predictions {
                flags.push(("predictions", path(p)));
            }
            if let Some(d) = a.prefetch_delay {
                flags.push(("prefetch_delay", d.to_string()));
            }
        }
        _ => {}
    }
    for (key, value) in flags {
        config.set(key, &value)?;
    }
    for o in &cli.overrides {
        config.apply_override(o)?;
    }
    config.validate()?;
    Ok(config)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Contract(e.to_string()))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

pub fn load_trace(path: &Path, config: &RunConfig) -> Result<Trace> {
    parse_trace(open(path)?, &config.address).map_err(|e| e.context(path.display().to_string()))
}

fn existing(path: &Option<PathBuf>, key: &str) -> Result<Option<PathBuf>> {
    match path {
        Some(p) if !p.exists() => Err(Error::Config(format!("{key} {} does not exist", p.display()))),
        other => Ok(other.clone()),
    }
}

/// Runs one parsed command line.
pub fn run(cli: &Cli) -> Result<()> {
    let config = resolve_config(cli)?;
    let out = &cli.out_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let name = match &cli.command {
        Command::Synth(_) => "synth",
        Command::Build { .. } => "build",
        Command::Train { .. } => "train",
        Command::Predict { .. } => "predict",
        Command::Simulate(_) => "simulate",
        Command::Report { .. } => "report",
    };
    write_file(&out.join(format!("{name}.config")), config.render().as_bytes())?;
    match &cli.command {
        Command::Synth(_) => cmd_synth(&config, out).map(drop),
        Command::Build { trace } => cmd_build(trace, &config, out).map(drop),
        Command::Train { dataset } => cmd_train(dataset, &config, out).map(drop),
        Command::Predict { trace, .. } => cmd_predict(trace, &config, out).map(drop),
        Command::Simulate(a) => {
            let report = cmd_simulate(&a.trace, &config, out)?;
            println!("{}", summary_line(&CsvRow::from(&report)));
            Ok(())
        }
        Command::Report { csv } => {
            let table = cmd_report(csv, out)?;
            print!("{table}");
            Ok(())
        }
    }
}

pub fn cmd_synth(config: &RunConfig, out: &Path) -> Result<PathBuf> {
    let trace = match config.synthetic_spec()? {
        Some(spec) => generate_synthetic(&spec, &config.address)?,
        None => {
            let chunk = config.synth.chunk.max(1);
            mixed_benchmark(config.seed, chunk, config.synth.length.div_ceil(chunk), &config.address)?
        }
    };
    let path = out.join("trace.txt");
    let mut w = create(&path)?;
    write_trace(&mut w, &trace)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[derive(Debug, Serialize)]
pub struct DatasetSummary {
    pub samples: usize,
    pub input_bits: usize,
    /// `label_lengths[k]` samples carry exactly `k` block indexes.
    pub label_lengths: Vec<usize>,
}

pub fn cmd_build(trace_path: &Path, config: &RunConfig, out: &Path) -> Result<DatasetSummary> {
    let trace = load_trace(trace_path, config)?;
    let samples = build_dataset(&trace, &config.address, &config.labels)
        .map_err(|e| e.context(trace_path.display().to_string()))?;
    let path = out.join("dataset.tsv");
    let mut w = create(&path)?;
    write_dataset(&mut w, &samples)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(&path, e))?;
    let mut label_lengths = vec![0; config.labels.k_max + 1];
    for s in &samples {
        label_lengths[s.target.indexes.len()] += 1;
    }
    let summary = DatasetSummary {
        samples: samples.len(),
        input_bits: samples.first().map_or(0, |s| s.input.len()),
        label_lengths,
    };
    write_json(&out.join("dataset_summary.json"), &summary)?;
    Ok(summary)
}

pub fn cmd_train(dataset: &Path, config: &RunConfig, out: &Path) -> Result<crate::training::TrainReport> {
    let samples = read_dataset(open(dataset)?).map_err(|e| e.context(dataset.display().to_string()))?;
    let held = ((samples.len() as f64) * config.holdout_fraction).round() as usize;
    let (train_set, heldout) = samples.split_at(samples.len() - held);
    let mut train_config = config.train.clone();
    train_config.seed = config.seed;
    let (params, report) = train::<f32>(train_set, heldout, config.model(), &train_config)?;
    checkpoint::save(&out.join("model.ckpt"), &params)?;
    write_json(&out.join("train_report.json"), &report)?;
    Ok(report)
}

fn predictor(config: &RunConfig) -> Result<Predictor<f32>> {
    let path = existing(&config.checkpoint, "checkpoint")?
        .ok_or_else(|| Error::Config("no checkpoint given (set checkpoint or pass --checkpoint)".into()))?;
    let params = checkpoint::load(&path)?;
    Predictor::new(params, config.address, config.labels, config.beam_width)
}

pub fn cmd_predict(trace_path: &Path, config: &RunConfig, out: &Path) -> Result<PathBuf> {
    let mut predictor = predictor(config)?;
    let trace = load_trace(trace_path, config)?;
    let predictions = predictor.predict_trace(&trace)?;
    let path = out.join("predictions.tsv");
    let mut w = create(&path)?;
    write_predictions(&mut w, &trace, &predictions, &config.address)?;
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Builds the prefetcher the config selects; `trace_len` sizes replayed predictions.
pub fn make_prefetcher(config: &RunConfig, trace_len: usize) -> Result<Box<dyn Prefetcher>> {
    Ok(match config.prefetcher {
        PrefetcherKind::None => Box::new(NoPrefetcher),
        PrefetcherKind::NextLine => Box::new(NextLine::new(config.nextline_degree, config.address)),
        PrefetcherKind::BestOffset => Box::new(BestOffset::new(config.best_offset, config.address)),
        PrefetcherKind::Isb => Box::new(Isb::new(config.isb, config.address)),
        PrefetcherKind::Transformap => match existing(&config.predictions, "predictions")? {
            Some(path) => {
                let lists = read_predictions(open(&path)?, trace_len)
                    .map_err(|e| e.context(path.display().to_string()))?;
                Box::new(Replay::new("transformap", lists))
            }
            None => Box::new(ModelPrefetcher::new(predictor(config)?)),
        },
    })
}

pub fn cmd_simulate(trace_path: &Path, config: &RunConfig, out: &Path) -> Result<SimReport> {
    let trace = load_trace(trace_path, config)?;
    let mut prefetcher = make_prefetcher(config, trace.len())?;
    let report = simulate(&trace, prefetcher.as_mut(), &config.sim, &config.address)?;
    let stem = format!("sim-{}", report.prefetcher);
    write_json(&out.join(format!("{stem}.json")), &report)?;
    let path = out.join(format!("{stem}.csv"));
    write_csv(create(&path)?, &[CsvRow::from(&report)])?;
    Ok(report)
}

fn summary_line(r: &CsvRow) -> String {
    format!(
        "{:<14} {:>10} {:>10} {:>16}",
        r.prefetcher, r.accuracy, r.coverage, r.mpki_improvement
    )
}

/// Merges CSVs written by `simulate`, ranks them, and returns the text table.
pub fn cmd_report(inputs: &[PathBuf], out: &Path) -> Result<String> {
    if inputs.is_empty() {
        return Err(Error::Input("report needs at least one csv".into()));
    }
    let mut rows = Vec::new();
    for path in inputs {
        rows.extend(read_csv(open(path)?, &path.display().to_string())?);
    }
    rank_rows(&mut rows);
    let csv_path = out.join("report.csv");
    write_csv(create(&csv_path)?, &rows)?;
    let mut table = format!(
        "{:<14} {:>10} {:>10} {:>16}\n",
        "prefetcher", "accuracy", "coverage", "mpki_improvement"
    );
    for r in &rows {
        table.push_str(&summary_line(r));
        table.push('\n');
    }
    write_file(&out.join("report.txt"), table.as_bytes())?;
    Ok(table)
}
