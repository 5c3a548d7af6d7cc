//! Run configuration: flat `key = value` text, one setting per line.
//!
//! `#` starts a comment. Later lines and command-line overrides win over
//! earlier ones. Unknown keys are rejected. [`KEYS`] lists every key.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::address::AddressConfig;
use crate::error::{Error, Result};
use crate::labeling::LabelConfig;
use crate::model::ModelConfig;
use crate::prefetch::{BestOffsetConfig, IsbConfig};
use crate::sim::{CacheConfig, SimConfig};
use crate::trace::{SyntheticKind, SyntheticSpec};
use crate::training::TrainConfig;

/// Every accepted key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "run seed; every random stream derives from it"),
    ("address_bits", "virtual address width"),
    ("page_bits", "log2 page size"),
    ("block_bits", "log2 cache block size"),
    ("history", "past block addresses in each model input"),
    ("window", "lookahead accesses scanned for labels"),
    ("k_max", "most block indexes per label"),
    ("d_model", "model width"),
    ("heads", "attention heads"),
    ("d_ff", "feed-forward width"),
    ("layers", "encoder and decoder layers"),
    ("dropout", "dropout rate during training"),
    ("epochs", "training epochs"),
    ("batch_size", "samples per optimizer step"),
    ("warmup_steps", "learning-rate warmup steps"),
    ("lr_scale", "multiplier on the learning-rate schedule"),
    ("clip_norm", "global gradient-norm ceiling, or none"),
    ("target_accuracy", "stop once held-out sequence accuracy reaches this, or none"),
    ("holdout_fraction", "trailing share of the dataset held out from training"),
    ("checkpoint_dir", "directory for per-epoch checkpoints, or none"),
    ("beam_width", "beam width when decoding"),
    ("sets", "cache sets"),
    ("ways", "cache associativity"),
    ("prefetch_delay", "accesses between a prefetch request and its fill"),
    ("prefetcher", "none, next-line, best-offset, isb or transformap"),
    ("nextline_degree", "blocks fetched by the next-line prefetcher"),
    ("bo_recent", "best-offset recent-request table size"),
    ("bo_max_offset", "largest best-offset candidate"),
    ("bo_round", "accesses per best-offset learning round"),
    ("isb_last_entries", "ISB per-PC last-address table size"),
    ("isb_pair_entries", "ISB successor table size"),
    ("checkpoint", "model checkpoint for the transformap prefetcher"),
    ("predictions", "predictions file replayed by the transformap prefetcher"),
    ("synth_kind", "constant-stride, page-local-permutation, temporal-stream, random or mixed"),
    ("synth_length", "records to generate (per kind for mixed)"),
    ("synth_start", "constant-stride start address"),
    ("synth_stride", "constant-stride step in bytes"),
    ("synth_base_page", "page-local-permutation first page number"),
    ("synth_pages", "page-local-permutation working-set size"),
    ("synth_period", "blocks per page visit, or temporal-stream period"),
    ("synth_addresses", "comma-separated temporal-stream addresses"),
    ("synth_chunk", "records per chunk in the mixed benchmark"),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PrefetcherKind {
    None,
    NextLine,
    BestOffset,
    Isb,
    Transformap,
}

impl FromStr for PrefetcherKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => PrefetcherKind::None,
            "next-line" | "nextline" => PrefetcherKind::NextLine,
            "best-offset" | "bo" => PrefetcherKind::BestOffset,
            "isb" => PrefetcherKind::Isb,
            "transformap" => PrefetcherKind::Transformap,
            _ => return Err(Error::Config(format!("unknown prefetcher {s:?}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub kind: String,
    pub length: usize,
    pub start: u64,
    pub stride: u64,
    pub base_page: u64,
    pub pages: u64,
    pub period: usize,
    pub addresses: Vec<u64>,
    pub chunk: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            kind: "page-local-permutation".into(),
            length: 50_000,
            start: 0x40_0000,
            stride: 64,
            base_page: 0x100,
            pages: 64,
            period: 16,
            addresses: Vec::new(),
            chunk: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub address: AddressConfig,
    pub labels: LabelConfig,
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub layers: usize,
    pub dropout: f64,
    pub train: TrainConfig,
    pub holdout_fraction: f64,
    pub beam_width: usize,
    pub sim: SimConfig,
    pub prefetcher: PrefetcherKind,
    pub nextline_degree: u64,
    pub best_offset: BestOffsetConfig,
    pub isb: IsbConfig,
    pub checkpoint: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::for_task(&AddressConfig::default(), &LabelConfig::default());
        RunConfig {
            seed: 0,
            address: AddressConfig::default(),
            labels: LabelConfig::default(),
            d_model: model.d_model,
            heads: model.heads,
            d_ff: model.d_ff,
            layers: model.layers,
            dropout: model.dropout,
            train: TrainConfig::default(),
            holdout_fraction: 0.1,
            beam_width: 2,
            sim: SimConfig::default(),
            prefetcher: PrefetcherKind::None,
            nextline_degree: 1,
            best_offset: BestOffsetConfig::default(),
            isb: IsbConfig::default(),
            checkpoint: None,
            predictions: None,
            synth: SynthConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key} = {value:?}: {e}")))
}

fn parse_u64(key: &str, value: &str) -> Result<u64> {
    match value.strip_prefix("0x").or_else(|| value.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16).map_err(|e| Error::Config(format!("{key} = {value:?}: {e}"))),
        None => parse(key, value),
    }
}

fn optional<T: FromStr>(key: &str, value: &str) -> Result<Option<T>>
where
    T::Err: Display,
{
    if value == "none" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn optional_path(value: &str) -> Option<PathBuf> {
    (value != "none" && !value.is_empty()).then(|| PathBuf::from(value))
}

impl RunConfig {
    /// Reads a config file over the defaults.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = RunConfig::default();
        config
            .apply_text(&text)
            .map_err(|e| e.context(path.display().to_string()))?;
        Ok(config)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: format!("expected key = value, got {line:?}"),
            })?;
            self.set(key.trim(), value.trim())
                .map_err(|e| e.context(format!("line {}", i + 1)))?;
        }
        Ok(())
    }

    /// Applies one `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
        self.set(key.trim(), value.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => {
                self.seed = parse_u64(key, value)?;
                self.train.seed = self.seed;
            }
            "address_bits" => self.address.address_bits = parse(key, value)?,
            "page_bits" => self.address.page_bits = parse(key, value)?,
            "block_bits" => self.address.block_bits = parse(key, value)?,
            "history" => self.labels.history = parse(key, value)?,
            "window" => self.labels.window = parse(key, value)?,
            "k_max" => self.labels.k_max = parse(key, value)?,
            "d_model" => self.d_model = parse(key, value)?,
            "heads" => self.heads = parse(key, value)?,
            "d_ff" => self.d_ff = parse(key, value)?,
            "layers" => self.layers = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "epochs" => self.train.epochs = parse(key, value)?,
            "batch_size" => self.train.batch_size = parse(key, value)?,
            "warmup_steps" => self.train.warmup_steps = parse(key, value)?,
            "lr_scale" => self.train.lr_scale = parse(key, value)?,
            "clip_norm" => self.train.clip_norm = optional(key, value)?,
            "target_accuracy" => self.train.target_accuracy = optional(key, value)?,
            "holdout_fraction" => self.holdout_fraction = parse(key, value)?,
            "checkpoint_dir" => self.train.checkpoint_dir = optional_path(value),
            "beam_width" => self.beam_width = parse(key, value)?,
            "sets" => self.sim.cache.sets = parse(key, value)?,
            "ways" => self.sim.cache.ways = parse(key, value)?,
            "prefetch_delay" => self.sim.prefetch_delay = parse(key, value)?,
            "prefetcher" => self.prefetcher = value.parse()?,
            "nextline_degree" => self.nextline_degree = parse(key, value)?,
            "bo_recent" => self.best_offset.recent = parse(key, value)?,
            "bo_max_offset" => self.best_offset.max_offset = parse(key, value)?,
            "bo_round" => self.best_offset.round = parse(key, value)?,
            "isb_last_entries" => self.isb.last_entries = parse(key, value)?,
            "isb_pair_entries" => self.isb.pair_entries = parse(key, value)?,
            "checkpoint" => self.checkpoint = optional_path(value),
            "predictions" => self.predictions = optional_path(value),
            "synth_kind" => self.synth.kind = value.to_string(),
            "synth_length" => self.synth.length = parse(key, value)?,
            "synth_start" => self.synth.start = parse_u64(key, value)?,
            "synth_stride" => self.synth.stride = parse_u64(key, value)?,
            "synth_base_page" => self.synth.base_page = parse_u64(key, value)?,
            "synth_pages" => self.synth.pages = parse(key, value)?,
            "synth_period" => self.synth.period = parse(key, value)?,
            "synth_addresses" => {
                self.synth.addresses = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse_u64(key, s))
                    .collect::<Result<_>>()?
            }
            "synth_chunk" => self.synth.chunk = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            d_model: self.d_model,
            heads: self.heads,
            d_ff: self.d_ff,
            layers: self.layers,
            dropout: self.dropout,
            ..ModelConfig::for_task(&self.address, &self.labels)
        }
    }

    pub fn cache(&self) -> CacheConfig {
        self.sim.cache
    }

    /// Checks every section so a bad value fails before any work starts.
    // Negated comparisons so NaN is rejected too.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        self.address.validate()?;
        if self.labels.history == 0 || self.labels.window == 0 || self.labels.k_max == 0 {
            return Err(Error::Config("history, window and k_max must be positive".into()));
        }
        self.model().validate()?;
        if self.train.batch_size == 0 || self.train.warmup_steps == 0 {
            return Err(Error::Config("batch_size and warmup_steps must be positive".into()));
        }
        if !(self.train.lr_scale > 0.0) {
            return Err(Error::Config("lr_scale must be positive".into()));
        }
        if self.train.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::Config("holdout_fraction must be in [0, 1)".into()));
        }
        if self.beam_width == 0 {
            return Err(Error::Config("beam_width must be at least 1".into()));
        }
        self.sim.cache.validate()?;
        if self.best_offset.max_offset == 0 || self.best_offset.round == 0 {
            return Err(Error::Config("bo_max_offset and bo_round must be positive".into()));
        }
        Ok(())
    }

    /// The synthetic trace described by the `synth_*` keys, or `None` for `mixed`.
    pub fn synthetic_spec(&self) -> Result<Option<SyntheticSpec>> {
        let s = &self.synth;
        let kind = match s.kind.as_str() {
            "constant-stride" => SyntheticKind::ConstantStride {
                start: s.start,
                stride: s.stride,
            },
            "page-local-permutation" => SyntheticKind::PageLocalPermutation {
                base_page: s.base_page,
                pages: s.pages,
                period: s.period,
            },
            "temporal-stream" => SyntheticKind::TemporalStream {
                period: s.period,
                addresses: s.addresses.clone(),
            },
            "random" => SyntheticKind::Random,
            "mixed" => return Ok(None),
            other => return Err(Error::Config(format!("unknown synth_kind {other:?}"))),
        };
        Ok(Some(SyntheticSpec::new(kind, s.length, self.seed)))
    }

    /// Renders every key with its current value, in [`KEYS`] order.
    pub fn render(&self) -> String {
        fn opt<T: Display>(v: &Option<T>) -> String {
            v.as_ref().map_or_else(|| "none".to_string(), |x| x.to_string())
        }
        fn path(p: &Option<PathBuf>) -> String {
            p.as_ref().map_or_else(|| "none".to_string(), |x| x.display().to_string())
        }
        let prefetcher = match self.prefetcher {
            PrefetcherKind::None => "none",
            PrefetcherKind::NextLine => "next-line",
            PrefetcherKind::BestOffset => "best-offset",
            PrefetcherKind::Isb => "isb",
            PrefetcherKind::Transformap => "transformap",
        };
        let values: Vec<String> = vec![
            self.seed.to_string(),
            self.address.address_bits.to_string(),
            self.address.page_bits.to_string(),
            self.address.block_bits.to_string(),
            self.labels.history.to_string(),
            self.labels.window.to_string(),
            self.labels.k_max.to_string(),
            self.d_model.to_string(),
            self.heads.to_string(),
            self.d_ff.to_string(),
            self.layers.to_string(),
            self.dropout.to_string(),
            self.train.epochs.to_string(),
            self.train.batch_size.to_string(),
            self.train.warmup_steps.to_string(),
            self.train.lr_scale.to_string(),
            opt(&self.train.clip_norm),
            opt(&self.train.target_accuracy),
            self.holdout_fraction.to_string(),
            path(&self.train.checkpoint_dir),
            self.beam_width.to_string(),
            self.sim.cache.sets.to_string(),
            self.sim.cache.ways.to_string(),
            self.sim.prefetch_delay.to_string(),
            prefetcher.to_string(),
            self.nextline_degree.to_string(),
            self.best_offset.recent.to_string(),
            self.best_offset.max_offset.to_string(),
            self.best_offset.round.to_string(),
            self.isb.last_entries.to_string(),
            self.isb.pair_entries.to_string(),
            path(&self.checkpoint),
            path(&self.predictions),
            self.synth.kind.clone(),
            self.synth.length.to_string(),
            format!("{:#x}", self.synth.start),
            self.synth.stride.to_string(),
            format!("{:#x}", self.synth.base_page),
            self.synth.pages.to_string(),
            self.synth.period.to_string(),
            self.synth
                .addresses
                .iter()
                .map(|a| format!("{a:#x}"))
                .collect::<Vec<_>>()
                .join(","),
            self.synth.chunk.to_string(),
        ];
        KEYS.iter()
            .zip(values)
            .map(|((k, _), v)| format!("{k} = {v}\n"))
            .collect()
    }
}
