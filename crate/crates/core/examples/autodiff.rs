//! The reverse-mode tape on a two-layer regression, checked against a
//! finite difference.

use transformap::tensor::{Graph, Tensor};

fn loss(w1: &Tensor<f64>, w2: &Tensor<f64>, x: &Tensor<f64>, want_grads: bool) -> (f64, Option<Vec<Tensor<f64>>>) {
    let mut g = Graph::new();
    let (a, b) = (g.param(w1.clone()), g.param(w2.clone()));
    let xs = g.constant(x.clone());
    let h = g.matmul(xs, a).unwrap();
    let h = g.relu(h);
    let y = g.matmul(h, b).unwrap();
    let sq = g.mul(y, y).unwrap();
    let l = g.sum(sq);
    let value = g.value(l).item();
    let grads = want_grads.then(|| {
        let grads = g.backward(l).unwrap();
        vec![grads.or_zeros(&g, a), grads.or_zeros(&g, b)]
    });
    (value, grads)
}

fn main() {
    let x = Tensor::from_rows(&[&[0.5, -1.0, 2.0], &[1.5, 0.25, -0.75]]);
    let w1 = Tensor::from_rows(&[&[0.1, -0.2], &[0.3, 0.4], &[-0.5, 0.6]]);
    let w2 = Tensor::from_rows(&[&[0.7], &[-0.8]]);
    let (value, grads) = loss(&w1, &w2, &x, true);
    let grads = grads.unwrap();
    println!("loss {value:.6}");
    println!("dL/dw1 {:?}", grads[0].data());

    let h = 1e-6;
    let mut plus = w1.clone();
    plus.data_mut()[2] += h;
    let mut minus = w1.clone();
    minus.data_mut()[2] -= h;
    let numeric = (loss(&plus, &w2, &x, false).0 - loss(&minus, &w2, &x, false).0) / (2.0 * h);
    println!("w1[1,0]: tape {:.8}, central difference {numeric:.8}", grads[0].data()[2]);
}
