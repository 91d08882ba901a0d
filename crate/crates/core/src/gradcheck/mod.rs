//! Central finite-difference gradient checks.
//!
//! [`check`] compares the analytic gradient of a scalar loss with
//! `(L(θ+ε) − L(θ−ε)) / 2ε` on every parameter. The error reported per
//! parameter tensor is `‖a − n‖ / max(‖a‖, ‖n‖, 1e-10)` over the entries
//! checked. Large tensors are checked on a seeded random subset of entries.
//!
//! [`registry`] lists every differentiable operation together with the block
//! and micro-model checks run by the `gradcheck` command.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{no_grad, Tensor};

mod targets;

pub use targets::{registry, Scope, Target};

#[derive(Clone, Debug)]
pub struct CheckOptions {
    /// Finite-difference step.
    pub eps: f64,
    /// Entries checked per tensor; larger tensors are subsampled.
    pub max_entries: usize,
    pub seed: u64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            eps: 1e-5,
            max_entries: 48,
            seed: 0,
        }
    }
}

impl CheckOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(Error::Config(format!("eps must be positive, got {}", self.eps)));
        }
        if self.max_entries == 0 {
            return Err(Error::Config("max_entries must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamError {
    pub name: String,
    pub rel_err: f64,
    pub checked: usize,
}

const NORM_FLOOR: f64 = 1e-10;

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    norm(&diff) / norm(analytic).max(norm(numeric)).max(NORM_FLOOR)
}

/// Checks `loss` against finite differences on every tensor in `params`.
pub fn check(
    params: &[(String, Tensor<f64>)],
    loss: impl Fn() -> Result<Tensor<f64>>,
    opts: &CheckOptions,
) -> Result<Vec<ParamError>> {
    opts.validate()?;
    for (_, p) in params {
        p.zero_grad();
    }
    loss()?.backward()?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let eval = || -> Result<f64> { Ok(no_grad(&loss)?.item()) };
    let mut report = Vec::with_capacity(params.len());
    for (name, p) in params {
        let n = p.numel();
        let grad = p.grad().unwrap_or_else(|| vec![0.0; n]);
        let idx: Vec<usize> = if n <= opts.max_entries {
            (0..n).collect()
        } else {
            sample(&mut rng, n, opts.max_entries).into_vec()
        };
        let mut analytic = Vec::with_capacity(idx.len());
        let mut numeric = Vec::with_capacity(idx.len());
        for &i in &idx {
            let orig = p.data()[i];
            p.update_data(|d| d[i] = orig + opts.eps);
            let up = eval();
            p.update_data(|d| d[i] = orig - opts.eps);
            let down = eval();
            p.update_data(|d| d[i] = orig);
            numeric.push((up? - down?) / (2.0 * opts.eps));
            analytic.push(grad[i]);
        }
        report.push(ParamError {
            name: name.clone(),
            rel_err: relative_error(&analytic, &numeric),
            checked: idx.len(),
        });
    }
    Ok(report)
}

/// Largest error in a report, with the tensor it belongs to.
pub fn worst(report: &[ParamError]) -> Option<&ParamError> {
    report.iter().max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
}

/// A fixed random tensor `r`; `sum(out ⊙ r)` turns any output into a scalar
/// loss whose gradient exercises every output entry differently.
pub fn projection(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    Tensor::randn(shape, 1.0, &mut rng)
}

pub fn project(out: &Tensor<f64>, seed: u64) -> Result<Tensor<f64>> {
    Ok(out.mul(&projection(out.shape(), seed))?.sum())
}
