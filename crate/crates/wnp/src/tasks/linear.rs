//! Linear data with Gaussian noise, the misspecified-regression task.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::cnp::TaskBatch;
use crate::diffmath::Tensor;
use crate::error::{Error, Result};

/// x uniform on `x_range`, y = slope * x + intercept + N(0, noise_sd).
///
/// The returned batch uses the full point set as context; the trainer
/// re-samples a context subset every step.
pub fn gen_linear_uniform(
    n: usize,
    slope: f64,
    intercept: f64,
    noise_sd: f64,
    x_range: (f64, f64),
    rng: &mut impl Rng,
) -> Result<TaskBatch> {
    if n < 2 {
        return Err(Error::contract("need at least 2 points"));
    }
    if x_range.0 >= x_range.1 {
        return Err(Error::contract(format!(
            "empty x range [{}, {}]",
            x_range.0, x_range.1
        )));
    }
    let noise = Normal::new(0.0, noise_sd.max(0.0))
        .map_err(|e| Error::contract(format!("bad noise sd: {e}")))?;
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x = rng.gen_range(x_range.0..x_range.1);
        let eps = if noise_sd > 0.0 { noise.sample(rng) } else { 0.0 };
        xs.push(x);
        ys.push(slope * x + intercept + eps);
    }
    TaskBatch::new(
        Tensor::matrix(n, 1, xs)?,
        Tensor::matrix(n, 1, ys)?,
        (0..n).collect(),
    )
}

/// Closed-form least-squares fit of paired samples; (slope, intercept).
pub fn ols_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(&x, &y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|&x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}
