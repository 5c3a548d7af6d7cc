#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use transformap::address::{to_block_address, AddressConfig};
use transformap::labeling::{LabelConfig, Sample};
use transformap::tensor::{Graph, Tensor, Var};
use transformap::trace::{Trace, TraceRecord};
use transformap::Result;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform entries in `[-1, 1]`, nudged away from zero so kinks stay out of reach.
pub fn random_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(-1.0..1.0);
            if v.abs() < 0.05 {
                v.signum() * 0.05 + v
            } else {
                v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// `||a - b|| / (||a|| + ||b||)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt() + b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        0.0
    } else {
        diff / norm
    }
}

/// Compares tape gradients with central differences for every input.
///
/// `build` gets the graph and one parameter per input and returns any
/// tensor; it is reduced to a scalar with fixed random weights.
pub fn gradient_error(
    inputs: &[Tensor<f64>],
    seed: u64,
    build: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
) -> f64 {
    let weights = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
        let out = build(&mut g, &vars).unwrap();
        random_tensor(&mut rng(seed), g.shape(out))
    };
    let eval = |values: &[Tensor<f64>], want_grads: bool| -> (f64, Vec<Tensor<f64>>) {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.param(t.clone())).collect();
        let out = build(&mut g, &vars).unwrap();
        let w = g.constant(weights.clone());
        let prod = g.mul(out, w).unwrap();
        let loss = g.sum(prod);
        let value = g.value(loss).item();
        if !want_grads {
            return (value, Vec::new());
        }
        let grads = g.backward(loss).unwrap();
        (value, vars.iter().map(|&v| grads.or_zeros(&g, v)).collect())
    };
    let (_, analytic) = eval(inputs, true);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for (i, input) in inputs.iter().enumerate() {
        let mut numeric = vec![0.0; input.len()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= h;
            *slot = (eval(&plus, false).0 - eval(&minus, false).0) / (2.0 * h);
        }
        worst = worst.max(relative_error(analytic[i].data(), &numeric));
    }
    worst
}

/// Brute-force label: scan forward, keep same-page indexes other than the
/// current one, sort, dedup, truncate.
pub fn oracle_label(addrs: &[u64], pos: usize, window: usize, k_max: usize, config: &AddressConfig) -> Vec<u32> {
    let n = config.page_bits - config.block_bits;
    let here = addrs[pos] >> config.block_bits;
    let page = here >> n;
    let own = (here & ((1 << n) - 1)) as u32;
    let mut found = Vec::new();
    let mut j = pos + 1;
    while j < addrs.len() && j <= pos + window {
        let b = addrs[j] >> config.block_bits;
        if b >> n == page {
            let idx = (b & ((1 << n) - 1)) as u32;
            if idx != own && !found.contains(&idx) {
                found.push(idx);
            }
        }
        j += 1;
    }
    found.sort_unstable();
    found.truncate(k_max);
    found
}

/// Random trace that revisits a few pages so labels are rarely empty.
pub fn random_trace(rng: &mut impl Rng, len: usize, config: &AddressConfig) -> Trace {
    let pages = rng.random_range(1..6u64);
    let page_span = 1u64 << (config.address_bits - config.page_bits);
    let page_ids: Vec<u64> = (0..pages).map(|_| rng.random_range(0..page_span)).collect();
    let records = (0..len)
        .map(|i| {
            let addr = if rng.random_bool(0.1) {
                rng.random_range(0..1u64 << config.address_bits)
            } else {
                let page = page_ids[rng.random_range(0..pages as usize)];
                (page << config.page_bits) | rng.random_range(0..1u64 << config.page_bits)
            };
            TraceRecord {
                instr_id: i as u64,
                pc: 0x400 + (i as u64 % 3),
                addr,
            }
        })
        .collect();
    Trace::new(records)
}

pub fn block_addresses(trace: &Trace, config: &AddressConfig) -> Vec<u64> {
    trace.addresses().map(|a| to_block_address(a, config)).collect()
}

/// Every `step`-th sample of the tail after `from`.
pub fn subsample(samples: &[Sample], from: usize, step: usize) -> Vec<Sample> {
    samples[from..].iter().step_by(step).cloned().collect()
}

pub fn desk_geometry() -> (AddressConfig, LabelConfig) {
    (AddressConfig::new(24, 12, 6).unwrap(), LabelConfig::default())
}
