//! Reverse-mode gradients of a small expression, checked against a central
//! difference.
//!
//! ```text
//! cargo run --example autodiff
//! ```

use fuseformer::Tensor;

fn loss(w: &Tensor<f64>, x: &Tensor<f64>) -> fuseformer::Result<Tensor<f64>> {
    Ok(x.matmul(w)?.tanh().square().mean())
}

fn main() -> fuseformer::Result<()> {
    let x = Tensor::from_vec(&[2, 3], vec![0.5, -1.0, 2.0, 1.5, 0.25, -0.75])?;
    let w = Tensor::param(&[3, 2], vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6])?;
    loss(&w, &x)?.backward()?;
    let grad = w.grad().expect("w is a parameter");

    let eps = 1e-6;
    for i in 0..w.numel() {
        let shifted = |delta: f64| {
            let v = Tensor::from_vec(&[3, 2], w.to_vec())?;
            v.update_data(|d| d[i] += delta);
            loss(&v, &x).map(|l| l.item())
        };
        let numeric = (shifted(eps)? - shifted(-eps)?) / (2.0 * eps);
        println!("dL/dw[{i}] analytic {:+.9} numeric {:+.9}", grad[i], numeric);
    }
    Ok(())
}
