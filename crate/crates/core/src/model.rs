//! Encoder-decoder Transformer over binary address input and block-index
//! output tokens.
//!
//! Post-norm layers: every sub-layer is wrapped as `LayerNorm(x + f(x))`.
//! The encoder runs unmasked self-attention over the embedded bit sequence;
//! the decoder runs causal self-attention, then cross-attention to the
//! encoder output, then the feed-forward block. A final linear map produces
//! logits over the decoder vocabulary.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::address::AddressConfig;
use crate::error::{Error, Result};
use crate::labeling::{LabelConfig, Vocab};
use crate::tensor::init::{glorot_uniform, normal};
use crate::tensor::{AttentionLayout, Graph, Scalar, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    /// Encoder and decoder layer count.
    pub layers: usize,
    /// Input vocabulary: the two bit values.
    pub vocab_in: usize,
    /// Block indexes plus BEGIN, END and PAD.
    pub vocab_out: usize,
    pub max_in_len: usize,
    pub max_out_len: usize,
    /// Dropout rate applied to sub-layer outputs during training.
    pub dropout: f64,
}

impl ModelConfig {
    /// Default hyperparameters sized for a given address geometry and labeling.
    pub fn for_task(address: &AddressConfig, labels: &LabelConfig) -> Self {
        ModelConfig {
            d_model: 64,
            heads: 4,
            d_ff: 256,
            layers: 2,
            vocab_in: 2,
            vocab_out: Vocab::new(address).size(),
            max_in_len: labels.history * address.block_address_bits() as usize,
            max_out_len: labels.k_max + 2,
            dropout: 0.0,
        }
    }

    pub fn vocab(&self) -> Vocab {
        Vocab {
            blocks: self.vocab_out - 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.d_model,
            self.heads,
            self.d_ff,
            self.layers,
            self.max_in_len,
            self.max_out_len,
        ];
        if dims.contains(&0) {
            return Err(Error::Config("model dimensions must be at least 1".into()));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        if !self.d_model.is_multiple_of(2) {
            return Err(Error::Config("d_model must be even for sinusoidal positions".into()));
        }
        if self.vocab_in != 2 || self.vocab_out < 4 {
            return Err(Error::Config("vocabulary sizes out of range".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Closed-form parameter count:
    /// `2d + 2Vd + L(12d² + 4d·f + 2f + 12d)` for width `d`, FFN width `f`,
    /// output vocabulary `V` and `L` layers.
    pub fn param_count(&self) -> usize {
        let (d, f, v, l) = (self.d_model, self.d_ff, self.vocab_out, self.layers);
        2 * d + 2 * v * d + l * (12 * d * d + 4 * d * f + 2 * f + 12 * d)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionIdx {
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct FeedForwardIdx {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct NormIdx {
    pub gamma: usize,
    pub beta: usize,
}

#[derive(Clone, Copy, Debug)]
struct EncoderIdx {
    attn: AttentionIdx,
    norm1: NormIdx,
    ffn: FeedForwardIdx,
    norm2: NormIdx,
}

#[derive(Clone, Copy, Debug)]
struct DecoderIdx {
    self_attn: AttentionIdx,
    norm1: NormIdx,
    cross: AttentionIdx,
    norm2: NormIdx,
    ffn: FeedForwardIdx,
    norm3: NormIdx,
}

enum Init {
    Glorot,
    Normal(f64),
    Zeros,
    Ones,
}

struct Spec {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

/// Positions of every named tensor in [`ModelParams`].
#[derive(Clone, Debug)]
struct Layout {
    in_embed: usize,
    out_embed: usize,
    encoder: Vec<EncoderIdx>,
    decoder: Vec<DecoderIdx>,
    proj: usize,
}

fn plan(config: &ModelConfig) -> (Layout, Vec<Spec>) {
    let (d, f) = (config.d_model, config.d_ff);
    let mut specs: Vec<Spec> = Vec::new();
    let mut add = |name: String, shape: Vec<usize>, init: Init| {
        specs.push(Spec { name, shape, init });
        specs.len() - 1
    };
    let emb_std = (d as f64).powf(-0.5);
    let in_embed = add("embed.input".into(), vec![config.vocab_in, d], Init::Normal(emb_std));
    let out_embed = add("embed.output".into(), vec![config.vocab_out, d], Init::Normal(emb_std));

    fn attention(add: &mut impl FnMut(String, Vec<usize>, Init) -> usize, p: &str, d: usize) -> AttentionIdx {
        AttentionIdx {
            wq: add(format!("{p}.wq"), vec![d, d], Init::Glorot),
            wk: add(format!("{p}.wk"), vec![d, d], Init::Glorot),
            wv: add(format!("{p}.wv"), vec![d, d], Init::Glorot),
            wo: add(format!("{p}.wo"), vec![d, d], Init::Glorot),
        }
    }
    fn norm(add: &mut impl FnMut(String, Vec<usize>, Init) -> usize, p: &str, d: usize) -> NormIdx {
        NormIdx {
            gamma: add(format!("{p}.gamma"), vec![d], Init::Ones),
            beta: add(format!("{p}.beta"), vec![d], Init::Zeros),
        }
    }
    fn ffn(add: &mut impl FnMut(String, Vec<usize>, Init) -> usize, p: &str, d: usize, f: usize) -> FeedForwardIdx {
        FeedForwardIdx {
            w1: add(format!("{p}.w1"), vec![d, f], Init::Glorot),
            b1: add(format!("{p}.b1"), vec![f], Init::Zeros),
            w2: add(format!("{p}.w2"), vec![f, d], Init::Glorot),
            b2: add(format!("{p}.b2"), vec![d], Init::Zeros),
        }
    }

    let encoder = (0..config.layers)
        .map(|l| {
            let p = format!("encoder.{l}");
            EncoderIdx {
                attn: attention(&mut add, &format!("{p}.attn"), d),
                norm1: norm(&mut add, &format!("{p}.norm1"), d),
                ffn: ffn(&mut add, &format!("{p}.ffn"), d, f),
                norm2: norm(&mut add, &format!("{p}.norm2"), d),
            }
        })
        .collect();
    let decoder = (0..config.layers)
        .map(|l| {
            let p = format!("decoder.{l}");
            DecoderIdx {
                self_attn: attention(&mut add, &format!("{p}.self_attn"), d),
                norm1: norm(&mut add, &format!("{p}.norm1"), d),
                cross: attention(&mut add, &format!("{p}.cross_attn"), d),
                norm2: norm(&mut add, &format!("{p}.norm2"), d),
                ffn: ffn(&mut add, &format!("{p}.ffn"), d, f),
                norm3: norm(&mut add, &format!("{p}.norm3"), d),
            }
        })
        .collect();
    let proj = add("output.proj".into(), vec![d, config.vocab_out], Init::Glorot);
    (
        Layout {
            in_embed,
            out_embed,
            encoder,
            decoder,
            proj,
        },
        specs,
    )
}

/// Every trainable tensor of the model, in a fixed order.
#[derive(Clone, Debug)]
pub struct ModelParams<T: Scalar = f32> {
    config: ModelConfig,
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    layout: Layout,
}

impl<T: Scalar> ModelParams<T> {
    /// Glorot-uniform linear maps, `N(0, d^-1/2)` embeddings, unit norm
    /// scales and zero biases.
    pub fn init(config: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = plan(&config);
        let mut names = Vec::with_capacity(specs.len());
        let mut tensors = Vec::with_capacity(specs.len());
        for spec in specs {
            let t = match spec.init {
                Init::Glorot => glorot_uniform(rng, spec.shape[0], spec.shape[1]),
                Init::Normal(std) => normal(rng, &spec.shape, std),
                Init::Zeros => Tensor::zeros(&spec.shape),
                Init::Ones => Tensor::full(&spec.shape, T::one()),
            };
            names.push(spec.name);
            tensors.push(t);
        }
        Ok(ModelParams {
            config,
            names,
            tensors,
            layout,
        })
    }

    pub fn seeded(config: ModelConfig, seed: u64) -> Result<Self> {
        Self::init(config, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Rebuilds parameters from named tensors, checking names and shapes
    /// against the layout `config` implies.
    pub fn from_tensors(config: ModelConfig, named: Vec<(String, Tensor<T>)>) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = plan(&config);
        if named.len() != specs.len() {
            return Err(Error::Input(format!(
                "expected {} tensors, found {}",
                specs.len(),
                named.len()
            )));
        }
        let mut names = Vec::with_capacity(specs.len());
        let mut tensors = Vec::with_capacity(specs.len());
        for (spec, (name, t)) in specs.into_iter().zip(named) {
            if spec.name != name || spec.shape != t.shape() {
                return Err(Error::Input(format!(
                    "tensor {name} {:?} does not match expected {} {:?}",
                    t.shape(),
                    spec.name,
                    spec.shape
                )));
            }
            if !t.is_finite() {
                return Err(Error::Input(format!("tensor {name} has non-finite values")));
            }
            names.push(name);
            tensors.push(t);
        }
        Ok(ModelParams {
            config,
            names,
            tensors,
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config,
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| t.cast()).collect(),
            layout: self.layout.clone(),
        }
    }

    /// Places every tensor in `graph`, as trainable leaves or constants.
    pub fn bind(&self, graph: &mut Graph<T>, trainable: bool) -> BoundParams {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    graph.param(t.clone())
                } else {
                    graph.constant(t.clone())
                }
            })
            .collect();
        BoundParams { vars }
    }
}

/// Graph handles for a [`ModelParams`], in the same order.
#[derive(Clone, Debug)]
pub struct BoundParams {
    pub vars: Vec<Var>,
}

/// Attention projection handles for one sub-layer.
#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct FeedForwardVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl BoundParams {
    fn attn(&self, i: AttentionIdx) -> AttentionVars {
        AttentionVars {
            wq: self.vars[i.wq],
            wk: self.vars[i.wk],
            wv: self.vars[i.wv],
            wo: self.vars[i.wo],
        }
    }

    fn ffn(&self, i: FeedForwardIdx) -> FeedForwardVars {
        FeedForwardVars {
            w1: self.vars[i.w1],
            b1: self.vars[i.b1],
            w2: self.vars[i.w2],
            b2: self.vars[i.b2],
        }
    }

    fn norm(&self, i: NormIdx) -> (Var, Var) {
        (self.vars[i.gamma], self.vars[i.beta])
    }
}

/// Sinusoidal position table: `PE[p, 2i] = sin(p / 10000^(2i/d))`,
/// `PE[p, 2i+1] = cos(p / 10000^(2i/d))`.
pub fn positional_encoding<T: Scalar>(max_len: usize, d_model: usize) -> Result<Tensor<T>> {
    if !d_model.is_multiple_of(2) {
        return Err(Error::Config(format!("positional encoding needs even width, got {d_model}")));
    }
    let mut data = Vec::with_capacity(max_len * d_model);
    for pos in 0..max_len {
        for i in 0..d_model / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d_model as f64);
            data.push(T::from_f64(angle.sin()));
            data.push(T::from_f64(angle.cos()));
        }
    }
    Tensor::new(vec![max_len, d_model], data)
}

/// `softmax(Q Kᵀ / √d_k) V` for single-sequence `Q`, `K`, `V`.
pub fn scaled_dot_attention<T: Scalar>(g: &mut Graph<T>, q: Var, k: Var, v: Var, causal: bool) -> Result<Var> {
    let (q_len, kv_len) = (g.value(q).rows(), g.value(k).rows());
    if g.value(q).cols() != g.value(k).cols() {
        return Err(Error::Shape {
            op: "scaled_dot_attention",
            left: g.shape(q).to_vec(),
            right: g.shape(k).to_vec(),
        });
    }
    if g.value(v).rows() != kv_len {
        return Err(Error::Shape {
            op: "scaled_dot_attention",
            left: g.shape(k).to_vec(),
            right: g.shape(v).to_vec(),
        });
    }
    // values may be wider than keys: run it as a single head over [Q|K] width
    let (dk, dv) = (g.value(q).cols(), g.value(v).cols());
    if dk == dv {
        let mut layout = AttentionLayout::single(q_len, kv_len);
        layout.causal = causal;
        return g.attention(q, k, v, layout);
    }
    let kt = g.transpose(k);
    let scores = g.matmul(q, kt)?;
    let mut scores = g.scale(scores, T::from_f64(1.0 / (dk as f64).sqrt()));
    if causal {
        let mut mask = Tensor::zeros(&[q_len, kv_len]);
        for i in 0..q_len {
            for j in i + 1..kv_len {
                mask.data_mut()[i * kv_len + j] = T::from_f64(-1e9);
            }
        }
        let m = g.constant(mask);
        scores = g.add(scores, m)?;
    }
    let probs = g.softmax(scores);
    g.matmul(probs, v)
}

/// `Concat(head_1..head_h) W^O` with `head_i = Attention(x_q W_i^Q, x_kv W_i^K, x_kv W_i^V)`;
/// head `i` uses column slice `i` of each combined projection.
pub fn multi_head_attention<T: Scalar>(
    g: &mut Graph<T>,
    x_q: Var,
    x_kv: Var,
    params: &AttentionVars,
    layout: AttentionLayout,
) -> Result<Var> {
    let q = g.matmul(x_q, params.wq)?;
    let k = g.matmul(x_kv, params.wk)?;
    let v = g.matmul(x_kv, params.wv)?;
    let heads = g.attention(q, k, v, layout)?;
    g.matmul(heads, params.wo)
}

/// `max(0, x W_1 + b_1) W_2 + b_2`, row by row.
pub fn feed_forward<T: Scalar>(g: &mut Graph<T>, x: Var, params: &FeedForwardVars) -> Result<Var> {
    let h = g.matmul(x, params.w1)?;
    let h = g.add_row(h, params.b1)?;
    let h = g.relu(h);
    let o = g.matmul(h, params.w2)?;
    g.add_row(o, params.b2)
}

/// A forward pass bound to one graph.
pub struct Forward<'a, T: Scalar> {
    pub graph: &'a mut Graph<T>,
    params: &'a ModelParams<T>,
    bound: &'a BoundParams,
    dropout_rng: Option<&'a mut ChaCha8Rng>,
}

impl<'a, T: Scalar> Forward<'a, T> {
    pub fn new(graph: &'a mut Graph<T>, params: &'a ModelParams<T>, bound: &'a BoundParams) -> Self {
        Forward {
            graph,
            params,
            bound,
            dropout_rng: None,
        }
    }

    /// Enables dropout (when the configured rate is positive) drawing masks from `rng`.
    pub fn with_dropout(mut self, rng: &'a mut ChaCha8Rng) -> Self {
        self.dropout_rng = Some(rng);
        self
    }

    fn config(&self) -> &ModelConfig {
        &self.params.config
    }

    fn embed(&mut self, table: usize, ids: &[usize], batch: usize, len: usize) -> Result<Var> {
        let d = self.config().d_model;
        let e = self.graph.embedding(self.bound.vars[table], ids)?;
        let e = self.graph.scale(e, T::from_f64((d as f64).sqrt()));
        let pe = positional_encoding::<T>(len, d)?;
        let mut tiled = Vec::with_capacity(batch * len * d);
        for _ in 0..batch {
            tiled.extend_from_slice(pe.data());
        }
        let pe = self.graph.constant(Tensor::new(vec![batch * len, d], tiled)?);
        let x = self.graph.add(e, pe)?;
        self.dropout(x)
    }

    fn dropout(&mut self, x: Var) -> Result<Var> {
        let rate = self.params.config.dropout;
        match self.dropout_rng.as_deref_mut() {
            Some(rng) if rate > 0.0 => {
                let n = self.graph.value(x).len();
                let keep = (0..n).map(|_| rng.random::<f64>() >= rate).collect();
                self.graph.dropout(x, keep, rate)
            }
            _ => Ok(x),
        }
    }

    fn residual_norm(&mut self, x: Var, sub: Var, norm: NormIdx) -> Result<Var> {
        let sub = self.dropout(sub)?;
        let sum = self.graph.add(x, sub)?;
        let (gamma, beta) = self.bound.norm(norm);
        self.graph.layer_norm(sum, gamma, beta)
    }

    /// Encodes a batch of equally long bit sequences; returns `batch * len` rows.
    pub fn encode(&mut self, inputs: &[&[u8]]) -> Result<Var> {
        let batch = inputs.len();
        let len = inputs.first().map_or(0, |s| s.len());
        if batch == 0 || len == 0 {
            return Err(Error::Input("empty encoder batch".into()));
        }
        if len > self.config().max_in_len {
            return Err(Error::Input(format!(
                "input of {len} tokens exceeds max_in_len {}",
                self.config().max_in_len
            )));
        }
        let mut ids = Vec::with_capacity(batch * len);
        for s in inputs {
            if s.len() != len {
                return Err(Error::Input("encoder inputs differ in length".into()));
            }
            for &b in *s {
                if b > 1 {
                    return Err(Error::Input(format!("input token {b} is not a bit")));
                }
                ids.push(b as usize);
            }
        }
        let mut x = self.embed(self.params.layout.in_embed, &ids, batch, len)?;
        let heads = self.config().heads;
        for l in 0..self.params.layout.encoder.len() {
            let idx = self.params.layout.encoder[l];
            let layout = AttentionLayout {
                batch,
                q_len: len,
                kv_len: len,
                heads,
                causal: false,
                key_padding: None,
            };
            let attn = self.bound.attn(idx.attn);
            let a = multi_head_attention(self.graph, x, x, &attn, layout)?;
            x = self.residual_norm(x, a, idx.norm1)?;
            let ffn = self.bound.ffn(idx.ffn);
            let f = feed_forward(self.graph, x, &ffn)?;
            x = self.residual_norm(x, f, idx.norm2)?;
        }
        Ok(x)
    }

    /// Decodes equally long token prefixes against encoder output `memory`
    /// (`batch * memory_len` rows); returns `batch * prefix_len` logit rows.
    pub fn decode(&mut self, memory: Var, memory_len: usize, prefixes: &[&[usize]]) -> Result<Var> {
        let batch = prefixes.len();
        let len = prefixes.first().map_or(0, |p| p.len());
        if batch == 0 || len == 0 {
            return Err(Error::Input("empty decoder batch".into()));
        }
        if self.graph.value(memory).rows() != batch * memory_len {
            return Err(Error::Shape {
                op: "decode",
                left: self.graph.shape(memory).to_vec(),
                right: vec![batch, memory_len],
            });
        }
        let vocab = self.config().vocab_out;
        let mut ids = Vec::with_capacity(batch * len);
        for p in prefixes {
            if p.len() != len {
                return Err(Error::Input("decoder prefixes differ in length".into()));
            }
            if let Some(&bad) = p.iter().find(|&&t| t >= vocab) {
                return Err(Error::Input(format!("token {bad} outside vocabulary of {vocab}")));
            }
            ids.extend_from_slice(p);
        }
        let mut y = self.embed(self.params.layout.out_embed, &ids, batch, len)?;
        let heads = self.config().heads;
        for l in 0..self.params.layout.decoder.len() {
            let idx = self.params.layout.decoder[l];
            let causal = AttentionLayout {
                batch,
                q_len: len,
                kv_len: len,
                heads,
                causal: true,
                key_padding: None,
            };
            let sa = self.bound.attn(idx.self_attn);
            let a = multi_head_attention(self.graph, y, y, &sa, causal)?;
            y = self.residual_norm(y, a, idx.norm1)?;
            let cross = AttentionLayout {
                batch,
                q_len: len,
                kv_len: memory_len,
                heads,
                causal: false,
                key_padding: None,
            };
            let ca = self.bound.attn(idx.cross);
            let c = multi_head_attention(self.graph, y, memory, &ca, cross)?;
            y = self.residual_norm(y, c, idx.norm2)?;
            let ffn = self.bound.ffn(idx.ffn);
            let f = feed_forward(self.graph, y, &ffn)?;
            y = self.residual_norm(y, f, idx.norm3)?;
        }
        self.graph.matmul(y, self.bound.vars[self.params.layout.proj])
    }

    /// Full pass: logits of shape `(batch * prefix_len) × vocab_out`.
    pub fn forward(&mut self, inputs: &[&[u8]], prefixes: &[&[usize]]) -> Result<Var> {
        if inputs.len() != prefixes.len() {
            return Err(Error::Input("input and prefix batch sizes differ".into()));
        }
        let memory = self.encode(inputs)?;
        let memory_len = inputs[0].len();
        self.decode(memory, memory_len, prefixes)
    }
}

/// Logits for a single input and prefix, as a plain tensor.
pub fn logits<T: Scalar>(params: &ModelParams<T>, input: &[u8], prefix: &[usize]) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let bound = params.bind(&mut g, false);
    let out = Forward::new(&mut g, params, &bound).forward(&[input], &[prefix])?;
    Ok(g.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            d_model: 8,
            heads: 2,
            d_ff: 16,
            layers: 1,
            vocab_in: 2,
            vocab_out: 7,
            max_in_len: 12,
            max_out_len: 6,
            dropout: 0.0,
        }
    }

    #[test]
    fn param_count_matches_closed_form() {
        for cfg in [tiny(), ModelConfig::for_task(&AddressConfig::default(), &LabelConfig::default())] {
            let p = ModelParams::<f64>::seeded(cfg, 1).unwrap();
            assert_eq!(p.param_count(), cfg.param_count());
        }
    }

    #[test]
    fn default_config_sizes() {
        let cfg = ModelConfig::for_task(&AddressConfig::default(), &LabelConfig::default());
        assert_eq!(cfg.vocab_out, 67);
        assert_eq!(cfg.max_in_len, 8 * 58);
        assert_eq!(cfg.max_out_len, 10);
    }

    #[test]
    fn rejects_bad_head_split() {
        let mut cfg = tiny();
        cfg.heads = 3;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn positional_encoding_values() {
        let pe = positional_encoding::<f64>(4, 6).unwrap();
        assert_eq!(pe.row(0), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        assert!((pe.at(1, 0) - 0.841471).abs() < 1e-6);
        assert!((pe.at(1, 1) - 0.540302).abs() < 1e-6);
        assert!(pe.data().iter().all(|v| v.abs() <= 1.0));
        assert!(positional_encoding::<f64>(4, 5).is_err());
    }

    #[test]
    fn logits_shape_and_token_check() {
        let p = ModelParams::<f64>::seeded(tiny(), 2).unwrap();
        let input = [0u8, 1, 1, 0, 1, 0];
        let out = logits(&p, &input, &[4, 0, 1]).unwrap();
        assert_eq!(out.shape(), &[3, 7]);
        assert!(matches!(logits(&p, &input, &[4, 9]), Err(Error::Input(_))));
        assert!(matches!(logits(&p, &[0, 2], &[4]), Err(Error::Input(_))));
    }

    #[test]
    fn identical_inputs_identical_logits() {
        let p = ModelParams::<f32>::seeded(tiny(), 5).unwrap();
        let a = logits(&p, &[1, 0, 1, 1], &[4, 2]).unwrap();
        let b = logits(&p, &[1, 0, 1, 1], &[4, 2]).unwrap();
        assert_eq!(a, b);
    }
}
