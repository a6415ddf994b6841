//! Adam on a two-parameter quadratic bowl.
//!
//! cargo run --example adam

use bertcnn::numerics::{AdamConfig, AdamState, Tensor};

fn main() -> bertcnn::Result<()> {
    // f(x, y) = (x - 3)² + 10 (y + 1)²
    let grad = |p: &[f64]| vec![2.0 * (p[0] - 3.0), 20.0 * (p[1] + 1.0)];
    let mut params = vec![Tensor::vector(vec![0.0, 0.0])];
    let mut adam = AdamState::for_tensors(AdamConfig::with_lr(0.1), &params);
    for step in 1..=300 {
        let g = grad(params[0].data());
        adam.step(&mut params, &[Tensor::vector(g)])?;
        if step == 1 || step % 50 == 0 {
            let p = params[0].data();
            println!("step {step:3}: x {:+.5} y {:+.5}", p[0], p[1]);
        }
    }
    Ok(())
}
