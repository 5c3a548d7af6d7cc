//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation appends a node holding its forward value and the
//! references needed for the backward pass. Nodes are appended in execution
//! order, so the node list is already topologically sorted and
//! [`Graph::backward`] is a single reverse sweep.

use super::dense::{gemm_into, softmax_in_place, Mat, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Row-block layout shared by the fused attention operation.
///
/// Queries are `batch * q_len` rows, keys and values `batch * kv_len` rows;
/// all three have the same width, split into `heads` column slices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionLayout {
    pub batch: usize,
    pub q_len: usize,
    pub kv_len: usize,
    pub heads: usize,
    /// Query `i` may not see key `j > i`.
    pub causal: bool,
    /// `batch * kv_len` flags; `true` hides that key from every query.
    pub key_padding: Option<Vec<bool>>,
}

impl AttentionLayout {
    pub fn single(q_len: usize, kv_len: usize) -> Self {
        AttentionLayout {
            batch: 1,
            q_len,
            kv_len,
            heads: 1,
            causal: false,
            key_padding: None,
        }
    }

    fn masked(&self, b: usize, i: usize, j: usize) -> bool {
        (self.causal && j > i)
            || self
                .key_padding
                .as_ref()
                .is_some_and(|pad| pad[b * self.kv_len + j])
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Transpose(Var),
    Softmax(Var),
    Sum(Var),
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normed: Vec<T>,
        inv_std: Vec<T>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        layout: AttentionLayout,
        probs: Vec<T>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        mask: Vec<bool>,
        probs: Vec<T>,
        count: usize,
    },
    Dropout {
        x: Var,
        keep: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// The computation record: an append-only list of operation nodes.
pub struct Graph<T: Scalar = f64> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Layer normalization epsilon.
pub const LAYER_NORM_EPS: f64 = 1e-6;

fn shape_err(op: &'static str, left: &[usize], right: &[usize]) -> Error {
    Error::Shape {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node from `len` on, invalidating their handles.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        debug_assert!(
            value.is_finite() || !self.inputs_finite(&op),
            "non-finite forward value from finite inputs"
        );
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn inputs_finite(&self, op: &Op<T>) -> bool {
        let parents = parents(op);
        !parents.is_empty() && parents.iter().all(|p| self.nodes[p.0].value.is_finite())
    }

    fn grad_any(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let g = self.grad_any(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), g))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err("add", va.shape(), vb.shape()));
        }
        let mut value = va.clone();
        value.add_assign(vb);
        let g = self.grad_any(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), g))
    }

    /// Adds a bias vector to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(bias));
        if vb.len() != vx.cols() {
            return Err(shape_err("add_row", vx.shape(), vb.shape()));
        }
        let mut value = vx.clone();
        let c = vx.cols();
        for row in value.data_mut().chunks_mut(c) {
            for (o, &b) in row.iter_mut().zip(vb.data()) {
                *o = *o + b;
            }
        }
        let g = self.grad_any(&[x, bias]);
        Ok(self.push(value, Op::AddRow(x, bias), g))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err("mul", va.shape(), vb.shape()));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let g = self.grad_any(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), g))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let value = self.value(x).map(|v| v * factor);
        let g = self.grad_any(&[x]);
        self.push(value, Op::Scale(x, factor), g)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(T::zero()));
        let g = self.grad_any(&[x]);
        self.push(value, Op::Relu(x), g)
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let value = self.value(x).transpose();
        let g = self.grad_any(&[x]);
        self.push(value, Op::Transpose(x), g)
    }

    /// Softmax over the last dimension.
    pub fn softmax(&mut self, x: Var) -> Var {
        let value = self.value(x).softmax_rows();
        let g = self.grad_any(&[x]);
        self.push(value, Op::Softmax(x), g)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let g = self.grad_any(&[x]);
        self.push(value, Op::Sum(x), g)
    }

    /// Gathers rows of `table` by id.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let vt = self.value(table);
        let (rows, d) = (vt.rows(), vt.cols());
        if let Some(&bad) = ids.iter().find(|&&id| id >= rows) {
            return Err(Error::Input(format!(
                "token id {bad} outside embedding table of {rows} rows"
            )));
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            data.extend_from_slice(vt.row(id));
        }
        let value = Tensor::new(vec![ids.len(), d], data)?;
        let g = self.grad_any(&[table]);
        Ok(self.push(
            value,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            g,
        ))
    }

    /// Normalizes each row to zero mean and unit variance, then applies
    /// per-column `gamma` and `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let vx = self.value(x);
        let d = vx.cols();
        let (vg, vb) = (self.value(gamma), self.value(beta));
        if vg.len() != d || vb.len() != d {
            return Err(shape_err("layer_norm", vx.shape(), vg.shape()));
        }
        let eps = T::from_f64(LAYER_NORM_EPS);
        let n = T::from_f64(d as f64);
        let mut normed = Vec::with_capacity(vx.len());
        let mut inv_std = Vec::with_capacity(vx.rows());
        let mut out = Vec::with_capacity(vx.len());
        for row in vx.data().chunks(d) {
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let r = T::one() / (var + eps).sqrt();
            inv_std.push(r);
            for (j, &v) in row.iter().enumerate() {
                let z = (v - mean) * r;
                normed.push(z);
                out.push(z * vg.data()[j] + vb.data()[j]);
            }
        }
        let value = Tensor::new(vx.shape().to_vec(), out)?;
        let g = self.grad_any(&[x, gamma, beta]);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normed,
                inv_std,
            },
            g,
        ))
    }

    /// Fused scaled dot-product attention over every (batch, head) block:
    /// `softmax(Q Kᵀ / √d_k) V`, with masked scores excluded from the softmax.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, layout: AttentionLayout) -> Result<Var> {
        let (vq, vk, vv) = (self.value(q), self.value(k), self.value(v));
        let d = vq.cols();
        let AttentionLayout {
            batch,
            q_len,
            kv_len,
            heads,
            ..
        } = layout;
        if vk.cols() != d || vv.cols() != d {
            return Err(shape_err("attention", vq.shape(), vk.shape()));
        }
        if vk.rows() != vv.rows() {
            return Err(shape_err("attention", vk.shape(), vv.shape()));
        }
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!(
                "width {d} is not divisible by {heads} heads"
            )));
        }
        if vq.rows() != batch * q_len || vk.rows() != batch * kv_len {
            return Err(shape_err(
                "attention",
                vq.shape(),
                &[batch, q_len, kv_len],
            ));
        }
        if layout
            .key_padding
            .as_ref()
            .is_some_and(|p| p.len() != batch * kv_len)
        {
            return Err(Error::Input("key padding length mismatch".into()));
        }
        let dk = d / heads;
        let scale = T::from_f64(1.0 / (dk as f64).sqrt());
        let block = q_len * kv_len;
        let mut probs = vec![T::zero(); batch * heads * block];
        let mut out = vec![T::zero(); batch * q_len * d];
        for b in 0..batch {
            for h in 0..heads {
                let p = &mut probs[(b * heads + h) * block..][..block];
                let qb = Mat::block(vq.data(), d, b * q_len, h * dk, q_len, dk);
                let kb = Mat::block(vk.data(), d, b * kv_len, h * dk, kv_len, dk);
                gemm_into(qb, kb.t(), p, kv_len, scale, T::zero());
                for i in 0..q_len {
                    let row = &mut p[i * kv_len..(i + 1) * kv_len];
                    for (j, s) in row.iter_mut().enumerate() {
                        if layout.masked(b, i, j) {
                            *s = T::neg_infinity();
                        }
                    }
                    softmax_in_place(row);
                }
                let vb = Mat::block(vv.data(), d, b * kv_len, h * dk, kv_len, dk);
                let pm = Mat::row_major(&*p, q_len, kv_len);
                gemm_into(pm, vb, &mut out[b * q_len * d + h * dk..], d, T::one(), T::zero());
            }
        }
        let value = Tensor::new(vec![batch * q_len, d], out)?;
        let g = self.grad_any(&[q, k, v]);
        Ok(self.push(
            value,
            Op::Attention {
                q,
                k,
                v,
                layout,
                probs,
            },
            g,
        ))
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `logits`, over rows where `mask` is true. An empty selection yields 0.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], mask: &[bool]) -> Result<Var> {
        let vl = self.value(logits);
        let (n, k) = (vl.rows(), vl.cols());
        if targets.len() != n || mask.len() != n {
            return Err(shape_err("cross_entropy", vl.shape(), &[targets.len()]));
        }
        if let Some((_, &bad)) = targets
            .iter()
            .enumerate()
            .find(|&(i, &t)| mask[i] && t >= k)
        {
            return Err(Error::Input(format!(
                "target class {bad} outside {k} classes"
            )));
        }
        let probs = vl.softmax_rows().into_data();
        let count = mask.iter().filter(|&&m| m).count();
        let mut total = 0.0;
        for i in 0..n {
            if mask[i] {
                // log-sum-exp for the chosen class, stable for saturated rows
                let row = vl.row(i);
                let max = row.iter().copied().fold(T::neg_infinity(), T::max).as_f64();
                let lse = max
                    + row
                        .iter()
                        .map(|&v| (v.as_f64() - max).exp())
                        .sum::<f64>()
                        .ln();
                total += lse - row[targets[i]].as_f64();
            }
        }
        let loss = if count == 0 {
            log::warn!("cross entropy over zero unmasked positions; defined as 0");
            0.0
        } else {
            total / count as f64
        };
        let g = self.grad_any(&[logits]);
        Ok(self.push(
            Tensor::scalar(T::from_f64(loss)),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
                probs,
                count,
            },
            g,
        ))
    }

    /// Inverted dropout with a caller-supplied keep mask of 0/1 entries.
    pub fn dropout(&mut self, x: Var, keep: Vec<bool>, rate: f64) -> Result<Var> {
        let vx = self.value(x);
        if keep.len() != vx.len() {
            return Err(shape_err("dropout", vx.shape(), &[keep.len()]));
        }
        let s = T::from_f64(1.0 / (1.0 - rate));
        let keep: Vec<T> = keep.iter().map(|&k| if k { s } else { T::zero() }).collect();
        let data = vx.data().iter().zip(&keep).map(|(&a, &m)| a * m).collect();
        let value = Tensor::new(vx.shape().to_vec(), data)?;
        let g = self.grad_any(&[x]);
        Ok(self.push(value, Op::Dropout { x, keep }, g))
    }

    /// Propagates gradients from the scalar `loss` to every node that
    /// depends on a trainable leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(upstream) = grads[i].take() else {
                continue;
            };
            self.propagate(node, &upstream, &mut grads);
            grads[i] = Some(upstream);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], var: Var, delta: Tensor<T>) {
        if !self.nodes[var.0].needs_grad {
            return;
        }
        match &mut grads[var.0] {
            Some(existing) => existing.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    fn zeros_like(&self, var: Var) -> Tensor<T> {
        Tensor::zeros(self.shape(var))
    }

    fn propagate(&self, node: &Node<T>, up: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (va.rows(), va.cols(), vb.cols());
                if self.nodes[a.0].needs_grad {
                    let mut da = self.zeros_like(*a);
                    let bt = Mat::row_major(vb.data(), k, n).t();
                    gemm_into(Mat::row_major(up.data(), m, n), bt, da.data_mut(), k, T::one(), T::zero());
                    self.accumulate(grads, *a, da);
                }
                if self.nodes[b.0].needs_grad {
                    let mut db = self.zeros_like(*b);
                    let at = Mat::row_major(va.data(), m, k).t();
                    gemm_into(at, Mat::row_major(up.data(), m, n), db.data_mut(), n, T::one(), T::zero());
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, up.clone());
                self.accumulate(grads, *b, up.clone());
            }
            Op::AddRow(x, bias) => {
                self.accumulate(grads, *x, up.clone());
                if self.nodes[bias.0].needs_grad {
                    let mut db = self.zeros_like(*bias);
                    let c = up.cols();
                    for row in up.data().chunks(c) {
                        for (o, &g) in db.data_mut().iter_mut().zip(row) {
                            *o = *o + g;
                        }
                    }
                    self.accumulate(grads, *bias, db);
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let da = zip_map(up, vb, |g, y| g * y);
                let db = zip_map(up, va, |g, x| g * x);
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::Scale(x, f) => {
                let f = *f;
                self.accumulate(grads, *x, up.map(|g| g * f));
            }
            Op::Relu(x) => {
                let dx = zip_map(up, self.value(*x), |g, v| if v > T::zero() { g } else { T::zero() });
                self.accumulate(grads, *x, dx);
            }
            Op::Transpose(x) => {
                self.accumulate(grads, *x, up.transpose());
            }
            Op::Softmax(x) => {
                let p = &node.value;
                let c = p.cols();
                let mut dx = Vec::with_capacity(p.len());
                for (prow, grow) in p.data().chunks(c).zip(up.data().chunks(c)) {
                    let dot: T = prow.iter().zip(grow).map(|(&a, &b)| a * b).sum();
                    dx.extend(prow.iter().zip(grow).map(|(&pi, &gi)| pi * (gi - dot)));
                }
                let dx = Tensor::new(p.shape().to_vec(), dx).expect("softmax grad shape");
                self.accumulate(grads, *x, dx);
            }
            Op::Sum(x) => {
                self.accumulate(grads, *x, Tensor::full(self.shape(*x), up.item()));
            }
            Op::Embedding { table, ids } => {
                let mut dt = self.zeros_like(*table);
                let d = dt.cols();
                for (i, &id) in ids.iter().enumerate() {
                    let src = up.row(i);
                    let dst = &mut dt.data_mut()[id * d..(id + 1) * d];
                    for (o, &g) in dst.iter_mut().zip(src) {
                        *o = *o + g;
                    }
                }
                self.accumulate(grads, *table, dt);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normed,
                inv_std,
            } => {
                let d = up.cols();
                let vg = self.value(*gamma);
                let mut dgamma = self.zeros_like(*gamma);
                let mut dbeta = self.zeros_like(*beta);
                let mut dx = Vec::with_capacity(up.len());
                let n = T::from_f64(d as f64);
                for (r, (grow, zrow)) in up.data().chunks(d).zip(normed.chunks(d)).enumerate() {
                    let mut sum_dz = T::zero();
                    let mut sum_dz_z = T::zero();
                    for j in 0..d {
                        let dz = grow[j] * vg.data()[j];
                        sum_dz = sum_dz + dz;
                        sum_dz_z = sum_dz_z + dz * zrow[j];
                        dgamma.data_mut()[j] = dgamma.data()[j] + grow[j] * zrow[j];
                        dbeta.data_mut()[j] = dbeta.data()[j] + grow[j];
                    }
                    let rs = inv_std[r];
                    for j in 0..d {
                        let dz = grow[j] * vg.data()[j];
                        dx.push(rs * (dz - sum_dz / n - zrow[j] * sum_dz_z / n));
                    }
                }
                let dx = Tensor::new(up.shape().to_vec(), dx).expect("layer norm grad shape");
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *gamma, dgamma);
                self.accumulate(grads, *beta, dbeta);
            }
            Op::Attention {
                q,
                k,
                v,
                layout,
                probs,
            } => self.attention_backward(*q, *k, *v, layout, probs, up, grads),
            Op::CrossEntropy {
                logits,
                targets,
                mask,
                probs,
                count,
            } => {
                let vl = self.value(*logits);
                let kc = vl.cols();
                let mut dl = vec![T::zero(); vl.len()];
                if *count > 0 {
                    let s = up.item() / T::from_f64(*count as f64);
                    for i in 0..vl.rows() {
                        if !mask[i] {
                            continue;
                        }
                        for j in 0..kc {
                            let mut g = probs[i * kc + j];
                            if j == targets[i] {
                                g = g - T::one();
                            }
                            dl[i * kc + j] = g * s;
                        }
                    }
                }
                let dl = Tensor::new(vl.shape().to_vec(), dl).expect("cross entropy grad shape");
                self.accumulate(grads, *logits, dl);
            }
            Op::Dropout { x, keep } => {
                let data = up.data().iter().zip(keep).map(|(&g, &m)| g * m).collect();
                let dx = Tensor::new(up.shape().to_vec(), data).expect("dropout grad shape");
                self.accumulate(grads, *x, dx);
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        layout: &AttentionLayout,
        probs: &[T],
        up: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) {
        let (vq, vk, vv) = (self.value(q), self.value(k), self.value(v));
        let d = vq.cols();
        let AttentionLayout {
            batch,
            q_len,
            kv_len,
            heads,
            ..
        } = *layout;
        let dk = d / heads;
        let scale = T::from_f64(1.0 / (dk as f64).sqrt());
        let block = q_len * kv_len;
        let mut dq = self.zeros_like(q);
        let mut dkey = self.zeros_like(k);
        let mut dv = self.zeros_like(v);
        let mut dp = vec![T::zero(); block];
        for b in 0..batch {
            for h in 0..heads {
                let p = &probs[(b * heads + h) * block..][..block];
                let pm = Mat::row_major(p, q_len, kv_len);
                let dob = Mat::block(up.data(), d, b * q_len, h * dk, q_len, dk);
                let vb = Mat::block(vv.data(), d, b * kv_len, h * dk, kv_len, dk);
                let kb = Mat::block(vk.data(), d, b * kv_len, h * dk, kv_len, dk);
                let qb = Mat::block(vq.data(), d, b * q_len, h * dk, q_len, dk);
                // dV = Pᵀ dO
                gemm_into(pm.t(), dob, &mut dv.data_mut()[b * kv_len * d + h * dk..], d, T::one(), T::one());
                // dP = dO Vᵀ, then softmax backward in place
                gemm_into(dob, vb.t(), &mut dp, kv_len, T::one(), T::zero());
                for i in 0..q_len {
                    let prow = &p[i * kv_len..(i + 1) * kv_len];
                    let grow = &mut dp[i * kv_len..(i + 1) * kv_len];
                    let dot: T = prow.iter().zip(grow.iter()).map(|(&a, &g)| a * g).sum();
                    for (g, &pi) in grow.iter_mut().zip(prow) {
                        *g = pi * (*g - dot);
                    }
                }
                let ds = Mat::row_major(&dp, q_len, kv_len);
                gemm_into(ds, kb, &mut dq.data_mut()[b * q_len * d + h * dk..], d, scale, T::one());
                gemm_into(ds.t(), qb, &mut dkey.data_mut()[b * kv_len * d + h * dk..], d, scale, T::one());
            }
        }
        self.accumulate(grads, q, dq);
        self.accumulate(grads, k, dkey);
        self.accumulate(grads, v, dv);
    }
}

fn parents<T>(op: &Op<T>) -> Vec<Var> {
    match op {
        Op::Leaf => vec![],
        Op::MatMul(a, b) | Op::Add(a, b) | Op::AddRow(a, b) | Op::Mul(a, b) => vec![*a, *b],
        Op::Scale(x, _) | Op::Relu(x) | Op::Transpose(x) | Op::Softmax(x) | Op::Sum(x) => vec![*x],
        Op::Embedding { table, .. } => vec![*table],
        Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
        Op::Attention { q, k, v, .. } => vec![*q, *k, *v],
        Op::CrossEntropy { logits, .. } => vec![*logits],
        Op::Dropout { x, .. } => vec![*x],
    }
}

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients<T: Scalar = f64> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }

    /// Gradient of `var`, or zeros of its shape when the loss does not
    /// depend on it.
    pub fn or_zeros(&self, graph: &Graph<T>, var: Var) -> Tensor<T> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(graph.shape(var)))
    }
}
