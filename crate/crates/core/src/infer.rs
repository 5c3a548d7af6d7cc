//! Beam-search decoding of prefetch candidates.

use std::io::{BufRead, Write};

use crate::address::{flatten_history, reconstruct_address, to_block_address, AddressConfig};
use crate::error::{Error, Result};
use crate::labeling::{LabelConfig, Vocab};
use crate::model::{BoundParams, Forward, ModelParams};
use crate::tensor::{Graph, Scalar, Tensor, Var};
use crate::trace::Trace;

/// Anything that scores the next token of a decoder prefix.
pub trait StepModel {
    /// Log-probabilities over the vocabulary for each prefix. All prefixes
    /// passed in one call have the same length and start with the begin token.
    fn next_log_probs(&mut self, prefixes: &[Vec<usize>]) -> Result<Vec<Vec<f64>>>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Decoded tokens after the begin token, including the end token if finished.
    pub tokens: Vec<usize>,
    /// Sum of token log-probabilities.
    pub score: f64,
    pub finished: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BeamConfig {
    pub width: usize,
    /// Tokens generated at most, the end token included.
    pub max_len: usize,
    pub begin: usize,
    pub end: usize,
}

impl BeamConfig {
    pub fn for_labels(vocab: &Vocab, labels: &LabelConfig, width: usize) -> Self {
        BeamConfig {
            width,
            max_len: labels.k_max + 1,
            begin: vocab.begin(),
            end: vocab.end(),
        }
    }
}

// Higher score first; equal scores fall back to the lexicographically smaller sequence.
fn rank(a: &Hypothesis, b: &Hypothesis) -> std::cmp::Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.tokens.cmp(&b.tokens))
}

/// Runs beam search and returns the best finished hypothesis, or the best
/// of the longest unfinished ones when nothing reached the end token.
pub fn beam_search(model: &mut impl StepModel, config: &BeamConfig) -> Result<Hypothesis> {
    if config.width == 0 {
        return Err(Error::Config("beam width must be at least 1".into()));
    }
    let mut live = vec![Hypothesis {
        tokens: Vec::new(),
        score: 0.0,
        finished: false,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for _ in 0..config.max_len {
        let prefixes: Vec<Vec<usize>> = live
            .iter()
            .map(|h| std::iter::once(config.begin).chain(h.tokens.iter().copied()).collect())
            .collect();
        let log_probs = model.next_log_probs(&prefixes)?;
        if log_probs.len() != live.len() {
            return Err(Error::Contract(format!(
                "step model returned {} rows for {} prefixes",
                log_probs.len(),
                live.len()
            )));
        }
        let mut candidates = Vec::new();
        for (h, row) in live.iter().zip(&log_probs) {
            for (token, &lp) in row.iter().enumerate() {
                if token == config.begin || lp == f64::NEG_INFINITY {
                    continue;
                }
                let mut tokens = h.tokens.clone();
                tokens.push(token);
                candidates.push(Hypothesis {
                    tokens,
                    score: h.score + lp,
                    finished: token == config.end,
                });
            }
        }
        candidates.sort_by(rank);
        candidates.truncate(config.width);
        let (done, open): (Vec<_>, Vec<_>) = candidates.into_iter().partition(|h| h.finished);
        finished.extend(done);
        live = open;
        if live.is_empty() {
            break;
        }
        // Log-probabilities are non-positive, so no live hypothesis can overtake a strictly better finished one.
        let best_done = finished.iter().map(|h| h.score).fold(f64::NEG_INFINITY, f64::max);
        if live.iter().all(|h| h.score < best_done) {
            break;
        }
    }
    finished.sort_by(rank);
    if let Some(best) = finished.into_iter().next() {
        return Ok(best);
    }
    live.sort_by(|a, b| b.tokens.len().cmp(&a.tokens.len()).then_with(|| rank(a, b)));
    live.into_iter()
        .next()
        .ok_or_else(|| Error::Contract("beam search produced no hypothesis".into()))
}

/// Keeps block-index tokens only, drops repeats, and caps the count at `k_max`.
pub fn clean_tokens(tokens: &[usize], vocab: &Vocab, k_max: usize) -> Vec<u32> {
    let mut out: Vec<u32> = Vec::new();
    for &t in tokens {
        if t == vocab.end() {
            break;
        }
        if vocab.is_block(t) && !out.contains(&(t as u32)) {
            out.push(t as u32);
        }
    }
    out.truncate(k_max);
    out
}

fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|&v| v - lse).collect()
}

/// A transformer decoder bound to one encoded input.
pub struct TransformerStep<'a, T: Scalar> {
    params: &'a ModelParams<T>,
    bound: &'a BoundParams,
    graph: &'a mut Graph<T>,
    memory: Tensor<T>,
    memory_len: usize,
}

impl<'a, T: Scalar> TransformerStep<'a, T> {
    /// Encodes `input`; `graph` must hold only the nodes of `bound`.
    pub fn new(
        params: &'a ModelParams<T>,
        bound: &'a BoundParams,
        graph: &'a mut Graph<T>,
        input: &[u8],
    ) -> Result<Self> {
        let base = graph.len();
        let memory_var: Var = Forward::new(graph, params, bound).encode(&[input])?;
        let memory = graph.value(memory_var).clone();
        graph.truncate(base);
        Ok(TransformerStep {
            params,
            bound,
            graph,
            memory,
            memory_len: input.len(),
        })
    }
}

impl<T: Scalar> StepModel for TransformerStep<'_, T> {
    fn next_log_probs(&mut self, prefixes: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
        let base = self.graph.len();
        let batch = prefixes.len();
        let mut tiled = Vec::with_capacity(batch * self.memory.len());
        for _ in 0..batch {
            tiled.extend_from_slice(self.memory.data());
        }
        let memory = self
            .graph
            .constant(Tensor::new(vec![batch * self.memory_len, self.memory.cols()], tiled)?);
        let refs: Vec<&[usize]> = prefixes.iter().map(Vec::as_slice).collect();
        let out = Forward::new(self.graph, self.params, self.bound).decode(memory, self.memory_len, &refs)?;
        let logits = self.graph.value(out);
        let len = refs.first().map_or(0, |p| p.len());
        let rows = (0..batch)
            .map(|b| {
                let row: Vec<f64> = logits.row(b * len + len - 1).iter().map(|v| v.as_f64()).collect();
                log_softmax(&row)
            })
            .collect();
        self.graph.truncate(base);
        Ok(rows)
    }
}

/// In-page block indexes predicted for the access at `position`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Prediction {
    pub position: usize,
    pub block_indexes: Vec<u32>,
}

/// Turns model output into prefetch candidates.
pub struct Predictor<T: Scalar = f32> {
    params: ModelParams<T>,
    graph: Graph<T>,
    bound: BoundParams,
    pub address: AddressConfig,
    pub labels: LabelConfig,
    pub beam_width: usize,
}

impl<T: Scalar> Predictor<T> {
    pub fn new(params: ModelParams<T>, address: AddressConfig, labels: LabelConfig, beam_width: usize) -> Result<Self> {
        let vocab = Vocab::new(&address);
        let c = params.config();
        let input_len = labels.history * address.block_address_bits() as usize;
        if c.vocab_out != vocab.size() || input_len > c.max_in_len || labels.k_max + 2 > c.max_out_len {
            return Err(Error::Config(format!(
                "model (vocab {}, max_in_len {}, max_out_len {}) does not fit the address and label settings \
                 (vocab {}, input {input_len}, k_max {})",
                c.vocab_out,
                c.max_in_len,
                c.max_out_len,
                vocab.size(),
                labels.k_max
            )));
        }
        let mut graph = Graph::new();
        let bound = params.bind(&mut graph, false);
        Ok(Predictor {
            params,
            graph,
            bound,
            address,
            labels,
            beam_width,
        })
    }

    pub fn params(&self) -> &ModelParams<T> {
        &self.params
    }

    /// Decodes the full hypothesis for a flattened input.
    pub fn decode(&mut self, input: &[u8]) -> Result<Hypothesis> {
        let vocab = Vocab::new(&self.address);
        let beam = BeamConfig::for_labels(&vocab, &self.labels, self.beam_width);
        let mut step = TransformerStep::new(&self.params, &self.bound, &mut self.graph, input)?;
        beam_search(&mut step, &beam)
    }

    /// Predicts from block addresses, oldest first, ending with the current one.
    pub fn predict(&mut self, history: &[u64], position: usize) -> Result<Prediction> {
        let input = flatten_history(history, self.labels.history, &self.address);
        let hyp = self.decode(&input)?;
        Ok(Prediction {
            position,
            block_indexes: clean_tokens(&hyp.tokens, &Vocab::new(&self.address), self.labels.k_max),
        })
    }

    /// Predicts at every position of `trace`.
    pub fn predict_trace(&mut self, trace: &Trace) -> Result<Vec<Prediction>> {
        let blocks: Vec<u64> = trace.addresses().map(|a| to_block_address(a, &self.address)).collect();
        let t = self.labels.history;
        (0..blocks.len())
            .map(|i| self.predict(&blocks[(i + 1).saturating_sub(t)..=i], i))
            .collect()
    }
}

/// Writes `position<TAB>addr,addr,...` lines with hexadecimal byte addresses.
pub fn write_predictions(
    mut sink: impl Write,
    trace: &Trace,
    predictions: &[Prediction],
    config: &AddressConfig,
) -> Result<()> {
    let io = |e| Error::Io {
        path: "<predictions>".into(),
        source: e,
    };
    writeln!(sink, "# position\tprefetch addresses").map_err(io)?;
    for p in predictions {
        let current = trace
            .records
            .get(p.position)
            .ok_or_else(|| Error::Input(format!("prediction for position {} outside the trace", p.position)))?
            .addr;
        let addrs = p
            .block_indexes
            .iter()
            .map(|&i| reconstruct_address(current, i, config).map(|a| format!("{a:#x}")))
            .collect::<Result<Vec<_>>>()?;
        writeln!(sink, "{}\t{}", p.position, addrs.join(",")).map_err(io)?;
    }
    Ok(())
}

/// Reads a predictions file into per-position address lists, sized to `len` accesses.
pub fn read_predictions(source: impl BufRead, len: usize) -> Result<Vec<Vec<u64>>> {
    let mut out = vec![Vec::new(); len];
    for (i, line) in source.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::Io {
            path: "<predictions>".into(),
            source: e,
        })?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse = |message: String| Error::Parse { line: lineno, message };
        let (pos, rest) = line.split_once('\t').unwrap_or((line, ""));
        let pos: usize = pos.trim().parse().map_err(|_| parse(format!("bad position {pos:?}")))?;
        let slot = out.get_mut(pos).ok_or_else(|| {
            Error::Input(format!("line {lineno}: position {pos} beyond trace of {len} accesses"))
        })?;
        for a in rest.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let hex = a.strip_prefix("0x").unwrap_or(a);
            slot.push(u64::from_str_radix(hex, 16).map_err(|_| parse(format!("bad address {a:?}")))?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    const BEGIN: usize = 4;
    const END: usize = 5;

    /// Next-token distributions looked up by prefix; unknown prefixes end immediately.
    struct Table {
        vocab: usize,
        rows: HashMap<Vec<usize>, Vec<f64>>,
    }

    impl Table {
        fn new(vocab: usize) -> Self {
            Table {
                vocab,
                rows: HashMap::new(),
            }
        }

        fn set(&mut self, prefix: &[usize], probs: &[(usize, f64)]) {
            let mut row = vec![f64::NEG_INFINITY; self.vocab];
            for &(t, p) in probs {
                row[t] = p.ln();
            }
            let mut key = vec![BEGIN];
            key.extend_from_slice(prefix);
            self.rows.insert(key, row);
        }
    }

    impl StepModel for Table {
        fn next_log_probs(&mut self, prefixes: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
            Ok(prefixes
                .iter()
                .map(|p| {
                    self.rows.get(p).cloned().unwrap_or_else(|| {
                        let mut r = vec![f64::NEG_INFINITY; self.vocab];
                        r[END] = 0.0;
                        r
                    })
                })
                .collect())
        }
    }

    /// Deterministic pseudo-random distribution over the full vocabulary.
    struct Hashed {
        vocab: usize,
        salt: u64,
    }

    impl StepModel for Hashed {
        fn next_log_probs(&mut self, prefixes: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
            Ok(prefixes
                .iter()
                .map(|p| {
                    let mut h = self.salt;
                    for &t in p {
                        h = h.wrapping_mul(6364136223846793005).wrapping_add(t as u64 + 1442695040888963407);
                    }
                    let logits: Vec<f64> = (0..self.vocab)
                        .map(|t| {
                            let x = h.wrapping_mul(t as u64 * 2 + 1).rotate_left(17);
                            (x % 1000) as f64 / 250.0
                        })
                        .collect();
                    log_softmax(&logits)
                })
                .collect())
        }
    }

    fn cfg(width: usize, max_len: usize) -> BeamConfig {
        BeamConfig {
            width,
            max_len,
            begin: BEGIN,
            end: END,
        }
    }

    fn greedy(model: &mut impl StepModel, max_len: usize) -> Vec<usize> {
        let mut tokens = Vec::new();
        for _ in 0..max_len {
            let mut prefix = vec![BEGIN];
            prefix.extend_from_slice(&tokens);
            let row = &model.next_log_probs(&[prefix]).unwrap()[0];
            let best = (0..row.len())
                .filter(|&t| t != BEGIN)
                .fold(None, |acc: Option<usize>, t| match acc {
                    Some(b) if row[b] >= row[t] => Some(b),
                    _ => Some(t),
                })
                .unwrap();
            tokens.push(best);
            if best == END {
                break;
            }
        }
        tokens
    }

    fn exhaustive(model: &mut impl StepModel, max_len: usize) -> (Vec<usize>, f64) {
        let mut best: Option<(Vec<usize>, f64)> = None;
        let mut frontier = vec![(Vec::new(), 0.0)];
        for _ in 0..max_len {
            let mut next = Vec::new();
            for (tokens, score) in frontier {
                let mut prefix = vec![BEGIN];
                prefix.extend_from_slice(&tokens);
                let row = model.next_log_probs(&[prefix]).unwrap().remove(0);
                for (t, &lp) in row.iter().enumerate() {
                    if t == BEGIN || lp == f64::NEG_INFINITY {
                        continue;
                    }
                    let mut seq: Vec<usize> = tokens.clone();
                    seq.push(t);
                    let s = score + lp;
                    if t == END {
                        let better = match &best {
                            None => true,
                            Some((b, bs)) => s > *bs || (s == *bs && seq < *b),
                        };
                        if better {
                            best = Some((seq, s));
                        }
                    } else {
                        next.push((seq, s));
                    }
                }
            }
            frontier = next;
        }
        best.unwrap()
    }

    #[test]
    fn width_one_matches_greedy() {
        for salt in 0..20 {
            let mut m = Hashed { vocab: 6, salt };
            let hyp = beam_search(&mut m, &cfg(1, 5)).unwrap();
            assert_eq!(hyp.tokens, greedy(&mut m, 5), "salt {salt}");
        }
    }

    #[test]
    fn wide_beam_finds_enumerated_optimum() {
        for salt in 0..10 {
            let mut m = Hashed { vocab: 6, salt };
            let (tokens, score) = exhaustive(&mut m, 3);
            let hyp = beam_search(&mut m, &cfg(1000, 3)).unwrap();
            assert!(hyp.finished);
            assert_eq!(hyp.tokens, tokens, "salt {salt}");
            assert!((hyp.score - score).abs() < 1e-12);
        }
    }

    #[test]
    fn exhaustive_width_dominates_every_narrower_width() {
        for salt in 0..10 {
            let mut m = Hashed { vocab: 6, salt };
            let top = beam_search(&mut m, &cfg(1000, 3)).unwrap();
            for w in 1..=4 {
                let h = beam_search(&mut m, &cfg(w, 3)).unwrap();
                if h.finished {
                    assert!(h.score <= top.score + 1e-12);
                }
            }
        }
    }

    #[test]
    fn immediate_end_yields_empty_prediction() {
        let mut m = Table::new(6);
        m.set(&[], &[(END, 0.9), (1, 0.1)]);
        let hyp = beam_search(&mut m, &cfg(2, 9)).unwrap();
        assert_eq!(hyp.tokens, vec![END]);
        let vocab = Vocab { blocks: 4 };
        assert!(clean_tokens(&hyp.tokens, &vocab, 8).is_empty());
    }

    #[test]
    fn wider_beam_can_lose_to_greedy() {
        // Greedy follows 0 and then ends with high probability; the two
        // hypotheses through 1 crowd out 0's continuation but end poorly.
        let mut m = Table::new(6);
        m.set(&[], &[(0, 0.5), (1, 0.45), (END, 0.05)]);
        m.set(&[0], &[(2, 0.3), (3, 0.25), (END, 0.2), (1, 0.25)]);
        m.set(&[1], &[(2, 0.5), (3, 0.45), (END, 0.05)]);
        m.set(&[0, 2], &[(END, 1.0)]);
        let tail = [(END, 0.6), (0, 0.1), (1, 0.1), (2, 0.1), (3, 0.1)];
        m.set(&[1, 2], &tail);
        m.set(&[1, 3], &tail);
        let narrow = beam_search(&mut m, &cfg(1, 3)).unwrap();
        let wide = beam_search(&mut m, &cfg(2, 3)).unwrap();
        assert_eq!(narrow.tokens, vec![0, 2, END]);
        assert!(wide.finished);
        assert_eq!(wide.tokens, vec![1, 2, END]);
        assert!(wide.score < narrow.score, "{wide:?} vs {narrow:?}");
    }

    #[test]
    fn unfinished_search_returns_longest() {
        let mut m = Table::new(6);
        m.set(&[], &[(0, 1.0)]);
        m.set(&[0], &[(1, 1.0)]);
        m.set(&[0, 1], &[(2, 1.0)]);
        let hyp = beam_search(&mut m, &cfg(2, 3)).unwrap();
        assert!(!hyp.finished);
        assert_eq!(hyp.tokens, vec![0, 1, 2]);
    }

    #[test]
    fn score_never_increases_along_a_hypothesis() {
        let mut m = Hashed { vocab: 6, salt: 3 };
        let hyp = beam_search(&mut m, &cfg(3, 5)).unwrap();
        let mut score = 0.0;
        for i in 0..hyp.tokens.len() {
            let mut prefix = vec![BEGIN];
            prefix.extend_from_slice(&hyp.tokens[..i]);
            let lp = m.next_log_probs(&[prefix]).unwrap()[0][hyp.tokens[i]];
            assert!(lp <= 0.0);
            score += lp;
        }
        assert!((score - hyp.score).abs() < 1e-12);
    }

    #[test]
    fn clean_tokens_dedups_filters_and_truncates() {
        let vocab = Vocab { blocks: 64 };
        assert_eq!(clean_tokens(&[3, 3, 7, vocab.pad(), 1, vocab.end()], &vocab, 8), vec![3, 7, 1]);
        assert_eq!(clean_tokens(&[1, 2, 3, 4], &vocab, 2), vec![1, 2]);
        assert_eq!(clean_tokens(&[1, vocab.end(), 2], &vocab, 8), vec![1]);
    }

    #[test]
    fn predictions_file_round_trip() {
        let config = AddressConfig::new(24, 12, 6).unwrap();
        let trace = Trace::new(vec![
            crate::trace::TraceRecord {
                instr_id: 0,
                pc: 1,
                addr: 0x1040,
            },
            crate::trace::TraceRecord {
                instr_id: 1,
                pc: 1,
                addr: 0x2000,
            },
        ]);
        let preds = vec![
            Prediction {
                position: 0,
                block_indexes: vec![3, 7],
            },
            Prediction {
                position: 1,
                block_indexes: vec![],
            },
        ];
        let mut buf = Vec::new();
        write_predictions(&mut buf, &trace, &preds, &config).unwrap();
        let back = read_predictions(&buf[..], 2).unwrap();
        assert_eq!(back, vec![vec![0x10c0, 0x11c0], vec![]]);
    }
}
