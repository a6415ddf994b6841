//! Reverse-mode gradients of a small network against central differences.
//!
//! cargo run --example gradient_check

use bertcnn::numerics::{Tape, Tensor};

fn loss(x: &Tensor, w: &Tensor, b: &Tensor) -> (f64, Vec<Tensor>) {
    let mut tape = Tape::new();
    let (xv, wv, bv) = (tape.leaf(x.clone()), tape.leaf(w.clone()), tape.leaf(b.clone()));
    let h = tape.matmul(xv, wv).unwrap();
    let h = tape.add_bias(h, bv).unwrap();
    let h = tape.gelu(h).unwrap();
    let p = tape.softmax(h, 1).unwrap();
    let l = tape.cross_entropy(p, &[Some(0), Some(2)]).unwrap();
    let grads = tape.backward(l).unwrap();
    let g = [xv, wv, bv].iter().map(|&v| grads.wrt(v).unwrap()).collect();
    (tape.value(l).data()[0], g)
}

fn main() {
    let x = Tensor::from_rows(&[vec![0.3, -1.2], vec![0.8, 0.1]]).unwrap();
    let w = Tensor::from_rows(&[vec![0.5, -0.4, 0.2], vec![0.1, 0.9, -0.7]]).unwrap();
    let b = Tensor::vector(vec![0.05, -0.1, 0.0]);
    let (value, grads) = loss(&x, &w, &b);
    println!("loss {value:.6}");

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for k in 0..w.len() {
        let (mut plus, mut minus) = (w.clone(), w.clone());
        plus.data_mut()[k] += h;
        minus.data_mut()[k] -= h;
        let numeric = (loss(&x, &plus, &b).0 - loss(&x, &minus, &b).0) / (2.0 * h);
        let analytic = grads[1].data()[k];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        println!("dL/dw[{k}] analytic {analytic:+.8} numeric {numeric:+.8}");
        worst = worst.max(rel);
    }
    println!("worst relative error {worst:.2e}");
}
