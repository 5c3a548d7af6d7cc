//! Teacher-forced training with cross-entropy, Adam and the warmup
//! learning-rate schedule.

use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::labeling::{Sample, Vocab};
use crate::model::{Forward, ModelConfig, ModelParams};
use crate::tensor::{Graph, Scalar, Tensor, Var};

/// Named sub-streams of the run seed.
pub mod streams {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const DROPOUT: u64 = 3;
}

pub fn stream_rng(seed: u64, stream: u64) -> rand_chacha::ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub warmup_steps: u64,
    /// Multiplier on the scheduled rate; 1.0 is the plain schedule.
    pub lr_scale: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Stop after the first epoch whose held-out sequence accuracy reaches this.
    pub target_accuracy: Option<f64>,
    /// Per-epoch checkpoints land here as `epoch-NNN.ckpt`.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 64,
            seed: 0,
            warmup_steps: 2000,
            lr_scale: 1.0,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            clip_norm: Some(1.0),
            target_accuracy: None,
            checkpoint_dir: None,
        }
    }
}

/// `d_model^-0.5 · min(step^-0.5, step · warmup^-1.5)`.
pub fn lr_schedule(step: u64, d_model: usize, warmup_steps: u64) -> Result<f64> {
    if step == 0 {
        return Err(Error::Contract("learning-rate step counts from 1".into()));
    }
    if warmup_steps == 0 {
        return Err(Error::Config("warmup_steps must be positive".into()));
    }
    let s = step as f64;
    let w = warmup_steps as f64;
    Ok((d_model as f64).powf(-0.5) * s.powf(-0.5).min(s * w.powf(-1.5)))
}

/// Bias-corrected Adam.
#[derive(Clone, Debug)]
pub struct Adam<T: Scalar> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
    step: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &[Tensor<T>], beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Adam {
            beta1,
            beta2,
            eps,
            first: zeros(),
            second: zeros(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn apply(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>], lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::from_f64(self.beta1), T::from_f64(self.beta2));
        let (ib1, ib2) = (T::from_f64(1.0 - self.beta1), T::from_f64(1.0 - self.beta2));
        let (c1, c2) = (T::from_f64(c1), T::from_f64(c2));
        let (lr, eps) = (T::from_f64(lr), T::from_f64(self.eps));
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = b1 * m[j] + ib1 * gj;
                v[j] = b2 * v[j] + ib2 * gj * gj;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

/// Mean token cross-entropy over unmasked rows.
pub fn cross_entropy<T: Scalar>(g: &mut Graph<T>, logits: Var, targets: &[usize], mask: &[bool]) -> Result<Var> {
    g.cross_entropy(logits, targets, mask)
}

/// Teacher-forced batch: decoder inputs are `BEGIN + labels`, targets are
/// `labels + END`, both padded with PAD to the longest sequence.
#[derive(Clone, Debug)]
pub struct Batch {
    pub inputs: Vec<Vec<u8>>,
    pub prefixes: Vec<Vec<usize>>,
    pub targets: Vec<usize>,
    pub mask: Vec<bool>,
}

impl Batch {
    pub fn new(samples: &[&Sample], vocab: &Vocab) -> Self {
        let seqs: Vec<Vec<usize>> = samples.iter().map(|s| s.target.tokens(vocab)).collect();
        let len = seqs.iter().map(Vec::len).max().unwrap_or(1);
        let mut prefixes = Vec::with_capacity(samples.len());
        let mut targets = Vec::with_capacity(samples.len() * len);
        let mut mask = Vec::with_capacity(samples.len() * len);
        for seq in &seqs {
            let mut prefix = Vec::with_capacity(len);
            prefix.push(vocab.begin());
            prefix.extend_from_slice(&seq[..seq.len() - 1]);
            prefix.resize(len, vocab.pad());
            prefixes.push(prefix);
            for j in 0..len {
                let tok = seq.get(j).copied();
                targets.push(tok.unwrap_or(vocab.pad()));
                mask.push(tok.is_some());
            }
        }
        Batch {
            inputs: samples.iter().map(|s| s.input.clone()).collect(),
            prefixes,
            targets,
            mask,
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Runs the batch through `params` on a fresh graph; returns the graph, the
/// bound parameter handles, the logits and the loss node.
pub fn batch_graph<T: Scalar>(
    params: &ModelParams<T>,
    batch: &Batch,
    trainable: bool,
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<(Graph<T>, Vec<Var>, Var, Var)> {
    let mut g = Graph::new();
    let bound = params.bind(&mut g, trainable);
    let inputs: Vec<&[u8]> = batch.inputs.iter().map(Vec::as_slice).collect();
    let prefixes: Vec<&[usize]> = batch.prefixes.iter().map(Vec::as_slice).collect();
    let mut fwd = Forward::new(&mut g, params, &bound);
    if let Some(rng) = dropout_rng {
        fwd = fwd.with_dropout(rng);
    }
    let logits = fwd.forward(&inputs, &prefixes)?;
    let loss = cross_entropy(&mut g, logits, &batch.targets, &batch.mask)?;
    Ok((g, bound.vars, logits, loss))
}

/// Loss and per-parameter gradients for one batch.
pub fn loss_and_grads<T: Scalar>(params: &ModelParams<T>, batch: &Batch) -> Result<(f64, Vec<Tensor<T>>)> {
    let (g, vars, _, loss) = batch_graph(params, batch, true, None)?;
    let grads = g.backward(loss)?;
    let loss_value = g.value(loss).item().as_f64();
    Ok((loss_value, vars.iter().map(|&v| grads.or_zeros(&g, v)).collect()))
}

/// Held-out metrics under teacher forcing.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub loss: f64,
    /// Fraction of target tokens (END included) predicted by argmax.
    pub token_accuracy: f64,
    /// Fraction of samples whose every target token is the argmax; such a
    /// sample decodes greedily to exactly its label.
    pub sequence_accuracy: f64,
}

pub fn evaluate<T: Scalar>(params: &ModelParams<T>, samples: &[Sample], batch_size: usize) -> Result<EvalStats> {
    if samples.is_empty() {
        return Ok(EvalStats::default());
    }
    let vocab = params.config().vocab();
    let (mut loss_sum, mut tokens, mut correct, mut seq_ok) = (0.0, 0usize, 0usize, 0usize);
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let batch = Batch::new(&refs, &vocab);
        let (g, _, logits, loss) = batch_graph(params, &batch, false, None)?;
        let lv = g.value(logits);
        let len = batch.prefixes[0].len();
        let n_tok = batch.mask.iter().filter(|&&m| m).count();
        loss_sum += g.value(loss).item().as_f64() * n_tok as f64;
        for s in 0..batch.len() {
            let mut all = true;
            for j in 0..len {
                let r = s * len + j;
                if !batch.mask[r] {
                    continue;
                }
                let row = lv.row(r);
                let arg = argmax(row);
                tokens += 1;
                if arg == batch.targets[r] {
                    correct += 1;
                } else {
                    all = false;
                }
            }
            seq_ok += all as usize;
        }
    }
    Ok(EvalStats {
        loss: loss_sum / tokens.max(1) as f64,
        token_accuracy: correct as f64 / tokens.max(1) as f64,
        sequence_accuracy: seq_ok as f64 / samples.len() as f64,
    })
}

/// Index of the largest entry, ties to the lowest index.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    /// Optimizer steps completed at the end of this epoch.
    pub step: u64,
    pub mean_loss: f64,
    pub heldout: EvalStats,
    #[serde(skip)]
    pub wall_time_secs: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochReport>,
    pub samples: usize,
    pub heldout_samples: usize,
    pub reached_target: bool,
}

impl TrainReport {
    pub fn wall_time_secs(&self) -> f64 {
        self.epochs.iter().map(|e| e.wall_time_secs).sum()
    }
}

fn clip_global_norm<T: Scalar>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v.as_f64() * v.as_f64())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = T::from_f64(max_norm / norm);
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v = *v * s);
        }
    }
    norm
}

/// Trains a freshly initialized model on `train`, scoring `heldout` after
/// every epoch. Deterministic for a given seed.
pub fn train<T: Scalar>(
    train: &[Sample],
    heldout: &[Sample],
    model: ModelConfig,
    config: &TrainConfig,
) -> Result<(ModelParams<T>, TrainReport)> {
    let params = ModelParams::init(model, &mut stream_rng(config.seed, streams::INIT))?;
    train_from(params, train, heldout, config)
}

/// Continues training from existing parameters.
pub fn train_from<T: Scalar>(
    mut params: ModelParams<T>,
    train: &[Sample],
    heldout: &[Sample],
    config: &TrainConfig,
) -> Result<(ModelParams<T>, TrainReport)> {
    if config.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    lr_schedule(1, 1, config.warmup_steps)?;
    let mut report = TrainReport {
        samples: train.len(),
        heldout_samples: heldout.len(),
        ..TrainReport::default()
    };
    if config.epochs == 0 {
        return Ok((params, report));
    }
    if train.is_empty() {
        return Err(Error::Dataset("no training samples".into()));
    }
    let expected = params.config().max_in_len;
    if let Some(bad) = train.iter().chain(heldout).find(|s| s.input.len() != expected) {
        return Err(Error::Dataset(format!(
            "sample input has {} bits, model expects {expected}",
            bad.input.len()
        )));
    }
    if let Some(dir) = &config.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let vocab = params.config().vocab();
    let d_model = params.config().d_model;
    let mut shuffle = stream_rng(config.seed, streams::SHUFFLE);
    let mut dropout = stream_rng(config.seed, streams::DROPOUT);
    let mut adam = Adam::new(params.tensors(), config.beta1, config.beta2, config.eps);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=config.epochs {
        let started = Instant::now();
        order.shuffle(&mut shuffle);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for idx in order.chunks(config.batch_size) {
            let refs: Vec<&Sample> = idx.iter().map(|&i| &train[i]).collect();
            let batch = Batch::new(&refs, &vocab);
            let (g, vars, _, loss) = batch_graph(&params, &batch, true, Some(&mut dropout))?;
            let loss_value = g.value(loss).item().as_f64();
            let step = adam.steps() + 1;
            if !loss_value.is_finite() {
                return Err(Error::Divergence {
                    step,
                    loss: loss_value,
                });
            }
            let grads = g.backward(loss)?;
            let mut grads: Vec<Tensor<T>> = vars.iter().map(|&v| grads.or_zeros(&g, v)).collect();
            drop(g);
            if let Some(max) = config.clip_norm {
                let norm = clip_global_norm(&mut grads, max);
                if !norm.is_finite() {
                    return Err(Error::Divergence { step, loss: norm });
                }
            }
            let lr = config.lr_scale * lr_schedule(step, d_model, config.warmup_steps)?;
            adam.apply(params.tensors_mut(), &grads, lr);
            loss_sum += loss_value;
            batches += 1;
        }
        let heldout_stats = evaluate(&params, heldout, config.batch_size)?;
        let entry = EpochReport {
            epoch,
            step: adam.steps(),
            mean_loss: loss_sum / batches as f64,
            heldout: heldout_stats,
            wall_time_secs: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: loss {:.4}, held-out token acc {:.4}, seq acc {:.4} ({:.1}s)",
            entry.mean_loss,
            heldout_stats.token_accuracy,
            heldout_stats.sequence_accuracy,
            entry.wall_time_secs
        );
        report.epochs.push(entry);
        if let Some(dir) = &config.checkpoint_dir {
            checkpoint::save(&dir.join(format!("epoch-{epoch:03}.ckpt")), &params)?;
        }
        if config
            .target_accuracy
            .is_some_and(|target| !heldout.is_empty() && heldout_stats.sequence_accuracy >= target)
        {
            report.reached_target = true;
            break;
        }
    }
    Ok((params, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_reference_points() {
        let peak = lr_schedule(2000, 512, 2000).unwrap();
        assert!((peak - 9.882e-4).abs() < 1e-7, "{peak}");
        let half = lr_schedule(1000, 512, 2000).unwrap();
        assert!((half - 4.941e-4).abs() < 1e-7, "{half}");
        assert!(lr_schedule(0, 512, 2000).is_err());
    }

    #[test]
    fn schedule_rises_then_falls() {
        let lr = |s| lr_schedule(s, 64, 50).unwrap();
        assert!((1..50).all(|s| lr(s) < lr(s + 1)));
        assert!((50..200).all(|s| lr(s) > lr(s + 1)));
    }

    #[test]
    fn adam_first_step_is_normalized_gradient() {
        let mut p = vec![Tensor::<f64>::scalar(1.5)];
        let g = vec![Tensor::<f64>::scalar(-0.25)];
        let mut adam = Adam::new(&p, 0.9, 0.98, 1e-9);
        adam.apply(&mut p, &g, 0.01);
        // m̂ = g, v̂ = g², so the step is lr · g / (|g| + ε)
        let expected = 1.5 - 0.01 * -0.25 / (0.25 + 1e-9);
        assert!((p[0].item() - expected).abs() < 1e-15);
    }

    #[test]
    fn teacher_forcing_layout() {
        let vocab = Vocab { blocks: 8 };
        let mk = |idx: Vec<u32>| Sample {
            input: vec![0, 1],
            target: crate::labeling::LabelSequence { indexes: idx },
            position: 0,
            page: 0,
        };
        let (a, b) = (mk(vec![2, 5]), mk(vec![]));
        let batch = Batch::new(&[&a, &b], &vocab);
        assert_eq!(batch.prefixes[0], vec![8, 2, 5]);
        assert_eq!(batch.prefixes[1], vec![8, 10, 10]);
        assert_eq!(batch.targets, vec![2, 5, 9, 9, 10, 10]);
        assert_eq!(batch.mask, vec![true, true, true, true, false, false]);
    }

    #[test]
    fn clipping_caps_norm() {
        let mut g = vec![Tensor::<f64>::from_rows(&[&[3.0, 4.0]])];
        let before = clip_global_norm(&mut g, 1.0);
        assert_eq!(before, 5.0);
        assert!((g[0].at(0, 0) - 0.6).abs() < 1e-12);
    }
}
