//! End-to-end acceptance checks. Each test prints one `criterion N: PASS|FAIL` line.

mod support;

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use support::*;
use transformap::address::{reconstruct_address, to_block_address, AddressConfig};
use transformap::cli::{run, Cli};
use transformap::infer::{beam_search, BeamConfig, Predictor, StepModel};
use transformap::labeling::{bitmap_to_label, build_dataset, collect_bitmap, LabelConfig, Sample};
use transformap::model::{positional_encoding, ModelConfig, ModelParams};
use transformap::prefetch::{BestOffset, Isb, NextLine, NoPrefetcher, Prefetcher, Replay};
use transformap::sim::{simulate, Cache, CacheConfig, Outcome, SimConfig};
use transformap::tensor::{AttentionLayout, Graph, Tensor};
use transformap::trace::{generate_synthetic, mixed_benchmark, page_local_benchmark, Trace};
use transformap::training::{loss_and_grads, lr_schedule, train, Batch, TrainConfig};

use clap::Parser;

fn report(n: usize, pass: bool, detail: impl AsRef<str>) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let line = format!("criterion {n}: {verdict} ({})\n", detail.as_ref());
    // Written straight to the stream so the line survives output capture.
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "criterion {n} failed: {}", detail.as_ref());
}

// ---------------------------------------------------------------- 1

#[test]
fn criterion_01_gradients() {
    let started = Instant::now();
    let mut r = rng(101);
    let mut t = |shape: &[usize]| random_tensor(&mut r, shape);
    let mut worst_op: f64 = 0.0;
    let mut check = |inputs: Vec<Tensor<f64>>, build: &dyn Fn(&mut Graph<f64>, &[transformap::tensor::Var]) -> transformap::Result<transformap::tensor::Var>| {
        worst_op = worst_op.max(gradient_error(&inputs, 7, build));
    };
    check(vec![t(&[3, 4]), t(&[4, 5])], &|g, v| g.matmul(v[0], v[1]));
    check(vec![t(&[3, 4]), t(&[3, 4])], &|g, v| g.add(v[0], v[1]));
    check(vec![t(&[3, 4]), t(&[4])], &|g, v| g.add_row(v[0], v[1]));
    check(vec![t(&[3, 4]), t(&[3, 4])], &|g, v| g.mul(v[0], v[1]));
    check(vec![t(&[3, 4])], &|g, v| Ok(g.scale(v[0], 1.7)));
    check(vec![t(&[3, 4])], &|g, v| Ok(g.relu(v[0])));
    check(vec![t(&[3, 4])], &|g, v| Ok(g.transpose(v[0])));
    check(vec![t(&[3, 5])], &|g, v| Ok(g.softmax(v[0])));
    check(vec![t(&[3, 5])], &|g, v| Ok(g.sum(v[0])));
    check(vec![t(&[5, 3])], &|g, v| g.embedding(v[0], &[4, 0, 2, 2]));
    check(vec![t(&[4, 6]), t(&[6]), t(&[6])], &|g, v| g.layer_norm(v[0], v[1], v[2]));
    check(vec![t(&[4, 5])], &|g, v| g.cross_entropy(v[0], &[0, 4, 2, 1], &[true, false, true, true]));
    check(vec![t(&[2, 4])], &|g, v| {
        g.dropout(v[0], vec![true, false, true, true, false, true, true, true], 0.25)
    });
    for causal in [false, true] {
        let layout = AttentionLayout {
            batch: 2,
            q_len: 3,
            kv_len: 3,
            heads: 2,
            causal,
            key_padding: Some(vec![false, false, true, false, false, false]),
        };
        check(vec![t(&[6, 4]), t(&[6, 4]), t(&[6, 4])], &|g, v| {
            g.attention(v[0], v[1], v[2], layout.clone())
        });
    }

    let config = ModelConfig {
        d_model: 8,
        heads: 2,
        d_ff: 12,
        layers: 1,
        vocab_in: 2,
        vocab_out: 7,
        max_in_len: 6,
        max_out_len: 5,
        dropout: 0.0,
    };
    let params = ModelParams::<f64>::seeded(config, 3).unwrap();
    let samples = [
        Sample {
            input: vec![1, 0, 1, 1, 0, 0],
            target: transformap::labeling::LabelSequence { indexes: vec![0, 3] },
            position: 0,
            page: 0,
        },
        Sample {
            input: vec![0, 1, 1, 0, 1, 0],
            target: transformap::labeling::LabelSequence { indexes: vec![2] },
            position: 1,
            page: 0,
        },
    ];
    let refs: Vec<&Sample> = samples.iter().collect();
    let batch = Batch::new(&refs, &config.vocab());
    let (_, analytic) = loss_and_grads(&params, &batch).unwrap();
    let (mut a, mut n) = (Vec::new(), Vec::new());
    let h = 1e-6;
    for (ti, grad) in analytic.iter().enumerate() {
        for j in 0..grad.len() {
            let mut plus = params.clone();
            plus.tensors_mut()[ti].data_mut()[j] += h;
            let mut minus = params.clone();
            minus.tensors_mut()[ti].data_mut()[j] -= h;
            a.push(grad.data()[j]);
            n.push((loss_and_grads(&plus, &batch).unwrap().0 - loss_and_grads(&minus, &batch).unwrap().0) / (2.0 * h));
        }
    }
    let end_to_end = relative_error(&a, &n);
    let secs = started.elapsed().as_secs_f64();
    report(
        1,
        worst_op < 1e-5 && end_to_end < 1e-4 && secs < 60.0,
        format!("worst op rel err {worst_op:.2e}, model rel err {end_to_end:.2e}, {secs:.1}s"),
    );
}

// ---------------------------------------------------------------- 2

#[test]
fn criterion_02_closed_forms() {
    let d = 16;
    let pe = positional_encoding::<f64>(2, d).unwrap();
    let mut pe_err: f64 = 0.0;
    for i in 0..d / 2 {
        let freq = 1.0 / 10000f64.powf(2.0 * i as f64 / d as f64);
        pe_err = pe_err
            .max(pe.at(0, 2 * i).abs())
            .max((pe.at(0, 2 * i + 1) - 1.0).abs())
            .max((pe.at(1, 2 * i) - freq.sin()).abs())
            .max((pe.at(1, 2 * i + 1) - freq.cos()).abs());
    }
    let lr = lr_schedule(2000, 512, 2000).unwrap();
    let rising = (1..2000).all(|s| lr_schedule(s, 512, 2000).unwrap() < lr_schedule(s + 1, 512, 2000).unwrap());
    let falling = (2000..6000).all(|s| lr_schedule(s, 512, 2000).unwrap() > lr_schedule(s + 1, 512, 2000).unwrap());
    let k = 11;
    let mut g = Graph::<f64>::new();
    let logits = g.constant(Tensor::zeros(&[3, k]));
    let ce = g.cross_entropy(logits, &[0, 5, 10], &[true, true, true]).unwrap();
    let ce_err = (g.value(ce).item() - (k as f64).ln()).abs();
    report(
        2,
        pe_err < 1e-12 && (lr - 9.882e-4).abs() <= 1e-7 && rising && falling && ce_err <= 1e-9,
        format!("pe err {pe_err:.1e}, lr(2000) {lr:.4e}, rise {rising} fall {falling}, ce err {ce_err:.1e}"),
    );
}

// ---------------------------------------------------------------- 3

#[test]
fn criterion_03_labeling_oracle() {
    let started = Instant::now();
    let mut r = rng(303);
    let mut mismatches = 0usize;
    let mut checked = 0usize;
    for _ in 0..1000 {
        let n = r.random_range(3..=6u32);
        let block_bits = r.random_range(2..=6u32);
        let page_bits = block_bits + n;
        let address_bits = r.random_range(page_bits + 1..=page_bits + 12);
        let config = AddressConfig::new(address_bits, page_bits, block_bits).unwrap();
        let len = r.random_range(1..=10_000usize);
        let window = r.random_range(1..=96usize);
        let k_max = r.random_range(1..=10usize);
        let trace = random_trace(&mut r, len, &config);
        let blocks = block_addresses(&trace, &config);
        let addrs: Vec<u64> = trace.addresses().collect();
        for pos in 0..len {
            let got = bitmap_to_label(&collect_bitmap(&blocks, pos, window, &config), k_max).indexes;
            checked += 1;
            if got != oracle_label(&addrs, pos, window, k_max, &config) {
                mismatches += 1;
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    report(
        3,
        mismatches == 0 && secs < 120.0,
        format!("{checked} positions over 1000 traces, {mismatches} mismatches, {secs:.1}s"),
    );
}

// ---------------------------------------------------------------- 4

#[test]
fn criterion_04_reconstruction() {
    let mut r = rng(404);
    let mut failures = 0;
    for _ in 0..100_000 {
        let block_bits = r.random_range(0..=8u32);
        let page_bits = block_bits + r.random_range(1..=8u32);
        let address_bits = r.random_range(page_bits + 1..=64u32);
        let config = AddressConfig::new(address_bits, page_bits, block_bits).unwrap();
        let addr = if address_bits == 64 {
            r.random::<u64>()
        } else {
            r.random_range(0..1u64 << address_bits)
        };
        let idx = r.random_range(0..1u32 << (page_bits - block_bits));
        let out = reconstruct_address(addr, idx, &config).unwrap();
        let block = to_block_address(addr, &config);
        let own = reconstruct_address(addr, config.block_index(block), &config).unwrap();
        let ok = out >> page_bits == addr >> page_bits
            && out & ((1u64 << block_bits) - 1) == 0
            && config.block_index(out >> block_bits) == idx
            && own == (addr >> block_bits) << block_bits;
        failures += !ok as usize;
    }
    report(4, failures == 0, format!("100000 pairs, {failures} violations"));
}

// ---------------------------------------------------------------- 5

/// Per-step distributions, optionally also keyed by the previous token.
struct Stub {
    vocab: usize,
    begin: usize,
    table: Vec<Vec<f64>>,
    by_prev: bool,
}

impl Stub {
    fn random(r: &mut impl Rng, by_prev: bool) -> Self {
        let vocab = r.random_range(3..=6usize);
        let rows = if by_prev { 3 * (vocab + 1) } else { 3 };
        let table = (0..rows)
            .map(|_| {
                let w: Vec<f64> = (0..vocab).map(|_| r.random_range(0.01..1.0)).collect();
                let s: f64 = w.iter().sum();
                w.iter().map(|x| (x / s).ln()).collect()
            })
            .collect();
        Stub {
            vocab,
            begin: vocab - 1,
            table,
            by_prev,
        }
    }

    fn row(&self, prefix: &[usize]) -> Vec<f64> {
        let step = prefix.len() - 1;
        let key = if self.by_prev {
            step * (self.vocab + 1) + prefix.last().copied().unwrap_or(self.vocab)
        } else {
            step
        };
        self.table[key].clone()
    }
}

impl StepModel for Stub {
    fn next_log_probs(&mut self, prefixes: &[Vec<usize>]) -> transformap::Result<Vec<Vec<f64>>> {
        Ok(prefixes.iter().map(|p| self.row(p)).collect())
    }
}

fn enumerate_best(stub: &Stub, end: usize, max_len: usize) -> Option<(Vec<usize>, f64)> {
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut frontier: Vec<(Vec<usize>, f64)> = vec![(vec![], 0.0)];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for (seq, score) in &frontier {
            let mut prefix = vec![stub.begin];
            prefix.extend(seq);
            for (tok, lp) in stub.row(&prefix).into_iter().enumerate() {
                if tok == stub.begin {
                    continue;
                }
                let mut s = seq.clone();
                s.push(tok);
                let total = score + lp;
                if tok == end {
                    if best.as_ref().is_none_or(|(b, bs)| total > *bs || (total == *bs && s < *b)) {
                        best = Some((s, total));
                    }
                } else {
                    next.push((s, total));
                }
            }
        }
        frontier = next;
    }
    best
}

fn greedy(stub: &Stub, end: usize, max_len: usize) -> Vec<usize> {
    let mut seq = Vec::new();
    for _ in 0..max_len {
        let mut prefix = vec![stub.begin];
        prefix.extend(&seq);
        let row = stub.row(&prefix);
        let mut arg = None;
        for (tok, &lp) in row.iter().enumerate() {
            if tok != stub.begin && arg.is_none_or(|a: usize| lp > row[a]) {
                arg = Some(tok);
            }
        }
        let tok = arg.unwrap();
        seq.push(tok);
        if tok == end {
            break;
        }
    }
    seq
}

#[test]
fn criterion_05_beam_oracle() {
    let mut r = rng(505);
    let (mut exact, mut greedy_ok, mut total) = (0, 0, 0);
    for i in 0..100 {
        let mut stub = Stub::random(&mut r, i % 2 == 1);
        let max_len = r.random_range(1..=3usize);
        let end = stub.vocab - 2;
        let (begin, vocab) = (stub.begin, stub.vocab);
        let config = |width| BeamConfig {
            width,
            max_len,
            begin,
            end,
        };
        let wide = beam_search(&mut stub, &config(vocab.pow(max_len as u32))).unwrap();
        let expected = enumerate_best(&stub, end, max_len);
        total += 1;
        if let Some((seq, score)) = expected {
            exact += (wide.finished && wide.tokens == seq && wide.score == score) as usize;
        }
        let narrow = beam_search(&mut stub, &config(1)).unwrap();
        greedy_ok += (narrow.tokens == greedy(&stub, end, max_len)) as usize;
    }
    report(
        5,
        exact == total && greedy_ok == total,
        format!("{exact}/{total} match enumeration, {greedy_ok}/{total} match greedy"),
    );
}

// ---------------------------------------------------------------- 6 to 8

/// Samples whose label window stays before `cut`, and every `step`-th sample at or after it.
fn split(samples: &[Sample], cut: usize, window: usize, step: usize) -> (Vec<Sample>, Vec<Sample>) {
    let train = samples.iter().filter(|s| s.position + window < cut).cloned().collect();
    let held = samples.iter().filter(|s| s.position >= cut).step_by(step).cloned().collect();
    (train, held)
}

fn train_model(
    train_set: &[Sample],
    heldout: &[Sample],
    address: &AddressConfig,
    labels: &LabelConfig,
    seed: u64,
    epochs: usize,
    target: f64,
) -> (ModelParams<f32>, transformap::training::TrainReport) {
    let config = TrainConfig {
        epochs,
        seed,
        target_accuracy: Some(target),
        ..TrainConfig::default()
    };
    train::<f32>(train_set, heldout, ModelConfig::for_task(address, labels), &config).unwrap()
}

/// Prefetch addresses for positions `range` of `trace`, using the full history before each.
fn predict_range(predictor: &mut Predictor<f32>, trace: &Trace, range: std::ops::Range<usize>) -> Vec<Vec<u64>> {
    let blocks = block_addresses(trace, &predictor.address);
    let t = predictor.labels.history;
    range
        .map(|i| {
            let p = predictor.predict(&blocks[(i + 1).saturating_sub(t)..=i], i).unwrap();
            p.block_indexes
                .iter()
                .map(|&b| reconstruct_address(trace.records[i].addr, b, &predictor.address).unwrap())
                .collect()
        })
        .collect()
}

#[test]
fn criterion_06_learnability() {
    let started = Instant::now();
    let (address, labels) = desk_geometry();
    let trace = generate_synthetic(&page_local_benchmark(50_000, 1), &address).unwrap();
    let samples = build_dataset(&trace, &address, &labels).unwrap();
    let (train_set, heldout) = split(&samples, 40_000, labels.window, 1);
    let monitor: Vec<Sample> = heldout.iter().step_by(10).cloned().collect();
    let (params, train_report) = train_model(&train_set, &monitor, &address, &labels, 1, 30, 0.95);
    let mut predictor = Predictor::new(params, address, labels, 2).unwrap();
    let probe: Vec<&Sample> = heldout.iter().step_by(4).collect();
    let mut exact = 0;
    for s in &probe {
        let mut got = predictor.predict(&blocks_before(&trace, &address, s.position, labels.history), s.position).unwrap().block_indexes;
        got.sort_unstable();
        exact += (got == s.target.indexes) as usize;
    }
    let accuracy = exact as f64 / probe.len() as f64;
    let secs = started.elapsed().as_secs_f64();
    report(
        6,
        accuracy >= 0.9 && secs < 900.0,
        format!(
            "exact-set accuracy {accuracy:.4} on {} held-out samples after {} epochs, {secs:.0}s",
            probe.len(),
            train_report.epochs.len()
        ),
    );
}

fn blocks_before(trace: &Trace, address: &AddressConfig, position: usize, t: usize) -> Vec<u64> {
    trace.records[(position + 1).saturating_sub(t)..=position]
        .iter()
        .map(|r| to_block_address(r.addr, address))
        .collect()
}

#[test]
fn criterion_07_relative_ordering() {
    let (address, labels) = desk_geometry();
    let sim = SimConfig {
        cache: CacheConfig::desk(),
        prefetch_delay: 0,
    };
    let mut lines = Vec::new();
    let mut all_ok = true;
    for seed in 1..=3u64 {
        let trace = mixed_benchmark(seed, 500, 10, &address).unwrap();
        let cut = 9_000;
        let samples = build_dataset(&trace, &address, &labels).unwrap();
        let (train_set, heldout) = split(&samples, cut, labels.window, 10);
        let (params, _) = train_model(&train_set, &heldout, &address, &labels, seed, 6, 0.95);
        let mut predictor = Predictor::new(params, address, labels, 2).unwrap();
        let lists = predict_range(&mut predictor, &trace, cut..trace.len());
        let test = trace.slice(cut..trace.len());
        let run = |p: &mut dyn Prefetcher| simulate(&test, p, &sim, &address).unwrap();
        let tm = run(&mut Replay::new("transformap", lists));
        let bo = run(&mut BestOffset::new(Default::default(), address));
        let isb = run(&mut Isb::new(Default::default(), address));
        let none = run(&mut NoPrefetcher);
        let cov = |r: &transformap::sim::SimReport| r.coverage.unwrap_or(f64::NAN);
        let mpki = |r: &transformap::sim::SimReport| r.mpki_improvement.unwrap_or(f64::NAN);
        let ok = cov(&tm) > cov(&bo)
            && cov(&tm) > cov(&isb)
            && mpki(&tm) > mpki(&bo)
            && mpki(&tm) > mpki(&isb)
            && [&tm, &bo, &isb].iter().all(|r| cov(r) > cov(&none) && cov(r) > 0.0);
        all_ok &= ok;
        lines.push(format!(
            "seed {seed}: tm {:.3}/{:.3} bo {:.3}/{:.3} isb {:.3}/{:.3}",
            cov(&tm),
            mpki(&tm),
            cov(&bo),
            mpki(&bo),
            cov(&isb),
            mpki(&isb)
        ));
    }
    report(7, all_ok, format!("coverage/mpki improvement; {}", lines.join("; ")));
}

#[test]
fn criterion_08_latency_robustness() {
    let (address, labels) = desk_geometry();
    let mut lines = Vec::new();
    let mut all_ok = true;
    for seed in 1..=3u64 {
        let trace = generate_synthetic(&page_local_benchmark(16_000, seed), &address).unwrap();
        let cut = 12_000;
        let samples = build_dataset(&trace, &address, &labels).unwrap();
        let (train_set, heldout) = split(&samples, cut, labels.window, 8);
        let (params, _) = train_model(&train_set, &heldout, &address, &labels, seed, 6, 0.97);
        let mut predictor = Predictor::new(params, address, labels, 2).unwrap();
        let lists = predict_range(&mut predictor, &trace, cut..trace.len());
        let test = trace.slice(cut..trace.len());
        let coverage = |p: &mut dyn Prefetcher, delay| {
            let sim = SimConfig {
                cache: CacheConfig::desk(),
                prefetch_delay: delay,
            };
            simulate(&test, p, &sim, &address).unwrap().coverage.unwrap_or(f64::NAN)
        };
        let tm = [0, 10].map(|d| coverage(&mut Replay::new("transformap", lists.clone()), d));
        let nl = [0, 10].map(|d| coverage(&mut NextLine::new(1, address), d));
        let drop = |c: [f64; 2]| if c[0] > 0.0 { (c[0] - c[1]) / c[0] } else { f64::NAN };
        let ok = drop(tm) < drop(nl);
        all_ok &= ok;
        lines.push(format!(
            "seed {seed}: tm {:.3}->{:.3} (drop {:.3}) next-line {:.3}->{:.3} (drop {:.3})",
            tm[0],
            tm[1],
            drop(tm),
            nl[0],
            nl[1],
            drop(nl)
        ));
    }
    report(8, all_ok, lines.join("; "));
}

// ---------------------------------------------------------------- 9

#[test]
fn criterion_09_simulator_oracle() {
    let one_set = CacheConfig { sets: 1, ways: 2 };
    let (a, b, c) = (10, 11, 12);
    let demand_run = |seq: &[u64]| {
        let mut cache = Cache::new(one_set).unwrap();
        seq.iter().map(|&x| cache.demand(x)).collect::<Vec<_>>()
    };
    use Outcome::{Hit, Miss};
    let first = demand_run(&[a, b, a]) == [Miss, Miss, Hit];
    let second = demand_run(&[a, b, c, a]) == [Miss, Miss, Miss, Miss];
    let mut cache = Cache::new(one_set).unwrap();
    cache.prefetch(a);
    let third = cache.demand(a) == Hit && cache.stats.useful_prefetches == 1;
    report(
        9,
        first && second && third,
        format!("A,B,A {first}; A,B,C,A {second}; prefetch-then-demand {third}"),
    );
}

// ---------------------------------------------------------------- 10

fn cli(out: &Path, args: &[&str]) {
    let mut full = vec!["transformap", "--seed", "7", "--out-dir", out.to_str().unwrap()];
    full.extend_from_slice(args);
    run(&Cli::try_parse_from(full).unwrap()).unwrap();
}

fn pipeline(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let small = [
        "--set", "address_bits=24", "--set", "d_model=16", "--set", "heads=2", "--set", "d_ff=32",
        "--set", "layers=1", "--set", "epochs=2", "--set", "batch_size=16", "--set", "warmup_steps=20",
    ];
    let with = |extra: &[&str]| -> Vec<String> { extra.iter().chain(small.iter()).map(|s| s.to_string()).collect() };
    let call = |extra: &[&str]| {
        let args = with(extra);
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        cli(dir, &refs);
    };
    call(&["synth", "--kind", "page-local-permutation", "--length", "600", "--set", "synth_pages=4"]);
    let trace = dir.join("trace.txt");
    call(&["build", trace.to_str().unwrap()]);
    call(&["train", dir.join("dataset.tsv").to_str().unwrap()]);
    call(&["simulate", trace.to_str().unwrap(), "--prefetcher", "best-offset"]);
    let ckpt = dir.join("model.ckpt");
    call(&[
        "simulate",
        trace.to_str().unwrap(),
        "--prefetcher",
        "transformap",
        "--checkpoint",
        ckpt.to_str().unwrap(),
    ]);
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn criterion_10_determinism() {
    // Same directory both times: the echoed configs record input paths.
    let dir = tempfile::tempdir().unwrap();
    let first = pipeline(dir.path());
    for entry in std::fs::read_dir(dir.path()).unwrap() {
        std::fs::remove_file(entry.unwrap().path()).unwrap();
    }
    let second = pipeline(dir.path());
    let names: Vec<&str> = first.iter().map(|(n, _)| n.as_str()).collect();
    let differing: Vec<&str> = first
        .iter()
        .zip(&second)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    let expected = [
        "dataset.tsv",
        "model.ckpt",
        "train_report.json",
        "sim-best-offset.json",
        "sim-transformap.json",
    ];
    let present = expected.iter().all(|e| names.contains(e));
    report(
        10,
        present && first.len() == second.len() && differing.is_empty(),
        format!("{} files compared, differing: {differing:?}", first.len()),
    );
}
