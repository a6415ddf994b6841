//! Dense tensors, reverse-mode differentiation and the Adam optimizer.

pub mod adam;
pub mod checkpoint;
pub mod params;
pub mod tape;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use params::{Binding, ParamId, ParamSet};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{argmax, Tensor};

use rand::Rng;
use rand_distr::StandardNormal;

/// Normal(0, std) truncated to ±2 std by resampling.
pub fn truncated_normal(shape: impl Into<Vec<usize>>, std: f64, rng: &mut impl Rng) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = loop {
            let z: f64 = rng.sample(StandardNormal);
            if z.abs() <= 2.0 {
                break z * std;
            }
        };
    }
    t
}

/// Inverted dropout mask: each entry is 0 with probability `rate`, else `1/(1-rate)`.
pub(crate) fn dropout_mask(shape: &[usize], rate: f64, rng: &mut impl Rng) -> Tensor {
    let keep = 1.0 - rate;
    let mut t = Tensor::zeros(shape.to_vec());
    for v in t.data_mut() {
        *v = if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 };
    }
    t
}

/// Elementwise mean of per-example gradient lists, summed in list order so
/// the result does not depend on how the lists were produced.
pub fn mean_gradients(per_example: Vec<Vec<Tensor>>) -> Option<Vec<Tensor>> {
    let n = per_example.len();
    let mut iter = per_example.into_iter();
    let mut acc = iter.next()?;
    for grads in iter {
        for (a, g) in acc.iter_mut().zip(&grads) {
            a.add_assign(g);
        }
    }
    for a in &mut acc {
        a.scale_assign(1.0 / n as f64);
    }
    Some(acc)
}
