mod support;

use support::{gradient_error, random_tensor, relative_error, rng};
use transformap::labeling::{LabelSequence, Sample, Vocab};
use transformap::model::{logits, ModelConfig, ModelParams};
use transformap::tensor::{AttentionLayout, Tensor};
use transformap::training::{loss_and_grads, Batch};

const OP_TOL: f64 = 1e-5;

fn tensors(seed: u64, shapes: &[&[usize]]) -> Vec<Tensor<f64>> {
    let mut r = rng(seed);
    shapes.iter().map(|s| random_tensor(&mut r, s)).collect()
}

#[test]
fn matmul() {
    let err = gradient_error(&tensors(1, &[&[3, 4], &[4, 5]]), 9, |g, v| g.matmul(v[0], v[1]));
    assert!(err < OP_TOL, "{err}");
}

#[test]
fn add_and_add_row() {
    let err = gradient_error(&tensors(2, &[&[3, 4], &[3, 4]]), 9, |g, v| g.add(v[0], v[1]));
    assert!(err < OP_TOL, "{err}");
    let err = gradient_error(&tensors(3, &[&[3, 4], &[4]]), 9, |g, v| g.add_row(v[0], v[1]));
    assert!(err < OP_TOL, "{err}");
}

#[test]
fn mul_scale_sum() {
    let err = gradient_error(&tensors(4, &[&[2, 5], &[2, 5]]), 9, |g, v| {
        let m = g.mul(v[0], v[1])?;
        let s = g.scale(m, 0.7);
        Ok(g.sum(s))
    });
    assert!(err < OP_TOL, "{err}");
}

#[test]
fn relu_and_transpose() {
    let err = gradient_error(&tensors(5, &[&[4, 3]]), 9, |g, v| {
        let r = g.relu(v[0]);
        Ok(g.transpose(r))
    });
    assert!(err < OP_TOL, "{err}");
}

#[test]
fn softmax() {
    let err = gradient_error(&tensors(6, &[&[3, 6]]), 9, |g, v| Ok(g.softmax(v[0])));
    assert!(err < OP_TOL, "{err}");
}

#[test]
fn embedding() {
    let err = gradient_error(&tensors(7, &[&[5, 4]]), 9, |g, v| g.embedding(v[0], &[0, 3, 3, 1, 4]));
    assert!(err < OP_TOL, "{err}");
}

#[test]
fn layer_norm() {
    let err = gradient_error(&tensors(8, &[&[3, 6], &[6], &[6]]), 9, |g, v| g.layer_norm(v[0], v[1], v[2]));
    assert!(err < OP_TOL, "{err}");
}

#[test]
fn attention_plain_causal_and_padded() {
    let layouts = [
        AttentionLayout {
            batch: 2,
            q_len: 3,
            kv_len: 4,
            heads: 2,
            causal: false,
            key_padding: None,
        },
        AttentionLayout {
            batch: 2,
            q_len: 4,
            kv_len: 4,
            heads: 2,
            causal: true,
            key_padding: None,
        },
        AttentionLayout {
            batch: 2,
            q_len: 3,
            kv_len: 4,
            heads: 1,
            causal: false,
            key_padding: Some(vec![false, false, true, true, false, true, false, false]),
        },
    ];
    for (i, layout) in layouts.into_iter().enumerate() {
        let (b, q, kv) = (layout.batch, layout.q_len, layout.kv_len);
        let inputs = tensors(10 + i as u64, &[&[b * q, 4], &[b * kv, 4], &[b * kv, 4]]);
        let err = gradient_error(&inputs, 9, |g, v| g.attention(v[0], v[1], v[2], layout.clone()));
        assert!(err < OP_TOL, "layout {i}: {err}");
    }
}

#[test]
fn cross_entropy_with_mask() {
    let err = gradient_error(&tensors(20, &[&[4, 5]]), 9, |g, v| {
        g.cross_entropy(v[0], &[1, 4, 0, 2], &[true, true, false, true])
    });
    assert!(err < OP_TOL, "{err}");
}

#[test]
fn dropout_with_fixed_mask() {
    let err = gradient_error(&tensors(21, &[&[2, 3]]), 9, |g, v| {
        g.dropout(v[0], vec![true, false, true, true, true, false], 0.3)
    });
    assert!(err < OP_TOL, "{err}");
}

fn tiny_model() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        heads: 2,
        d_ff: 12,
        layers: 2,
        vocab_in: 2,
        vocab_out: 7,
        max_in_len: 6,
        max_out_len: 5,
        dropout: 0.0,
    }
}

fn tiny_batch() -> Batch {
    let vocab = Vocab { blocks: 4 };
    let samples = [
        Sample {
            input: vec![1, 0, 1, 1, 0, 0],
            target: LabelSequence { indexes: vec![1, 3] },
            position: 0,
            page: 0,
        },
        Sample {
            input: vec![0, 0, 1, 0, 1, 1],
            target: LabelSequence { indexes: vec![2] },
            position: 1,
            page: 0,
        },
        Sample {
            input: vec![1, 1, 1, 0, 0, 1],
            target: LabelSequence { indexes: vec![] },
            position: 2,
            page: 0,
        },
    ];
    let refs: Vec<&Sample> = samples.iter().collect();
    Batch::new(&refs, &vocab)
}

#[test]
fn full_model_loss_gradient() {
    let params = ModelParams::<f64>::seeded(tiny_model(), 5).unwrap();
    let batch = tiny_batch();
    let (_, analytic) = loss_and_grads(&params, &batch).unwrap();
    let h = 1e-6;
    let mut a_all = Vec::new();
    let mut n_all = Vec::new();
    for (t, grad) in analytic.iter().enumerate() {
        for j in 0..grad.len() {
            let mut plus = params.clone();
            plus.tensors_mut()[t].data_mut()[j] += h;
            let mut minus = params.clone();
            minus.tensors_mut()[t].data_mut()[j] -= h;
            let lp = loss_and_grads(&plus, &batch).unwrap().0;
            let lm = loss_and_grads(&minus, &batch).unwrap().0;
            a_all.push(grad.data()[j]);
            n_all.push((lp - lm) / (2.0 * h));
        }
    }
    let err = relative_error(&a_all, &n_all);
    assert!(err < 1e-4, "{err}");
}

#[test]
fn decoder_is_causal() {
    let params = ModelParams::<f64>::seeded(tiny_model(), 6).unwrap();
    let input = [1, 0, 0, 1, 1, 0];
    let a = logits(&params, &input, &[4, 1, 2, 3]).unwrap();
    let b = logits(&params, &input, &[4, 1, 0, 0]).unwrap();
    for r in 0..2 {
        assert_eq!(a.row(r), b.row(r), "row {r} saw a later token");
    }
    assert_ne!(a.row(2), b.row(2));
}
