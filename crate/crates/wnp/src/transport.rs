//! Optimal-transport distances between empirical distributions.
//!
//! 1D p-Wasserstein by sorted matching, and its sliced Monte-Carlo
//! extension to d dimensions via random unit-direction projections.
//! Two routes exist: a tape-tracked route used as a training loss, and
//! a plain numeric route for evaluation and logging. The numeric route
//! runs per-direction work in parallel when the `parallel` feature is
//! on; the final average always sums in direction order so results are
//! identical either way.

use crate::diffmath::{Tape, Tensor};
use crate::error::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// An m x d sample matrix treated as a uniform empirical measure.
#[derive(Debug, Clone)]
pub struct EmpiricalDistribution {
    pub samples: Tensor,
}

impl EmpiricalDistribution {
    pub fn new(samples: Tensor) -> Result<Self> {
        let (m, _) = samples.dims2();
        if m == 0 || samples.values.is_empty() {
            return Err(Error::contract("empirical distribution needs at least one sample"));
        }
        if !samples.all_finite() {
            return Err(Error::contract("empirical distribution has non-finite entries"));
        }
        Ok(EmpiricalDistribution { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.dims2().0
    }

    pub fn dim(&self) -> usize {
        self.samples.dims2().1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Random unit directions on the sphere, kept with the seed that drew them.
#[derive(Debug, Clone)]
pub struct ProjectionSet {
    pub directions: Tensor,
    pub seed: u64,
}

impl ProjectionSet {
    pub fn count(&self) -> usize {
        self.directions.dims2().0
    }

    pub fn dim(&self) -> usize {
        self.directions.dims2().1
    }
}

/// Draw `n_proj` standard-normal rows and L2-normalize each.
pub fn sample_projections(n_proj: usize, d: usize, seed: u64) -> Result<ProjectionSet> {
    if n_proj == 0 {
        return Err(Error::contract("n_proj must be at least 1"));
    }
    if d == 0 {
        return Err(Error::contract("projection dimension must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(n_proj * d);
    for _ in 0..n_proj {
        let row: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            // probability zero; retry would complicate determinism
            values.extend(std::iter::once(1.0).chain(std::iter::repeat_n(0.0, d - 1)));
        } else {
            values.extend(row.iter().map(|v| v / norm));
        }
    }
    Ok(ProjectionSet { directions: Tensor::matrix(n_proj, d, values)?, seed })
}

fn check_pair(m_a: usize, m_b: usize, p: f64) -> Result<()> {
    if m_a == 0 {
        return Err(Error::contract("empty sample set"));
    }
    if m_a != m_b {
        return Err(Error::contract(format!(
            "sorted matching needs equal sample counts, got {m_a} and {m_b}"
        )));
    }
    if p < 1.0 {
        return Err(Error::contract(format!("Wasserstein power must be >= 1, got {p}")));
    }
    Ok(())
}

/// W_p^p between two 1D sample sets of equal size: sort both, average
/// |difference|^p. Differentiable through the tape.
pub fn wasserstein_1d_pow(tape: &mut Tape, a: &Tensor, b: &Tensor, p: f64) -> Result<Tensor> {
    check_pair(a.values.len(), b.values.len(), p)?;
    let m = a.values.len();
    let ar = Tensor { shape: vec![1, m], values: a.values.clone(), node: a.node };
    let br = Tensor { shape: vec![1, m], values: b.values.clone(), node: b.node };
    let (sa, _) = tape.sort_rows(&ar);
    let (sb, _) = tape.sort_rows(&br);
    let diff = tape.sub(&sa, &sb)?;
    let powed = tape.abs_pow(&diff, p);
    tape.mean(&powed, None)
}

/// Plain numeric W_p^p on value slices.
pub fn wasserstein_1d_pow_vals(a: &[f64], b: &[f64], p: f64) -> Result<f64> {
    check_pair(a.len(), b.len(), p)?;
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|x, y| x.partial_cmp(y).unwrap());
    sb.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let sum: f64 = sa.iter().zip(&sb).map(|(&x, &y)| (x - y).abs().powf(p)).sum();
    Ok(sum / a.len() as f64)
}

fn check_sliced(x: &EmpiricalDistribution, y: &EmpiricalDistribution, proj_dim: usize, p: f64) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::contract(format!(
            "sample counts differ: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.dim() != y.dim() || x.dim() != proj_dim {
        return Err(Error::contract(format!(
            "dimensions disagree: X is {}-d, Y is {}-d, projections are {}-d",
            x.dim(),
            y.dim(),
            proj_dim
        )));
    }
    if p < 1.0 {
        return Err(Error::contract(format!("Wasserstein power must be >= 1, got {p}")));
    }
    Ok(())
}

/// Monte-Carlo SW_p^p: project both clouds onto every direction, sort
/// each projected row, average |difference|^p over samples and
/// directions. Gradient flows to any tracked input.
pub fn sliced_wasserstein_pow(
    tape: &mut Tape,
    x: &EmpiricalDistribution,
    y: &EmpiricalDistribution,
    proj: &ProjectionSet,
    p: f64,
) -> Result<Tensor> {
    check_sliced(x, y, proj.dim(), p)?;
    let xt = tape.transpose(&x.samples);
    let yt = tape.transpose(&y.samples);
    let x_hat = tape.matmul(&proj.directions, &xt)?; // n_proj x m
    let y_hat = tape.matmul(&proj.directions, &yt)?;
    let (sx, _) = tape.sort_rows(&x_hat);
    let (sy, _) = tape.sort_rows(&y_hat);
    let diff = tape.sub(&sx, &sy)?;
    let powed = tape.abs_pow(&diff, p);
    tape.mean(&powed, None)
}

fn direction_pow(
    x: &Tensor,
    y: &Tensor,
    dir: &[f64],
    p: f64,
    m: usize,
    d: usize,
) -> f64 {
    let project = |t: &Tensor| -> Vec<f64> {
        (0..m)
            .map(|i| {
                let row = &t.values[i * d..(i + 1) * d];
                row.iter().zip(dir).map(|(a, b)| a * b).sum()
            })
            .collect()
    };
    let px = project(x);
    let py = project(y);
    wasserstein_1d_pow_vals(&px, &py, p).expect("equal counts by construction")
}

/// Sequential numeric SW_p^p, one direction at a time.
pub fn sliced_wasserstein_pow_vals_seq(
    x: &EmpiricalDistribution,
    y: &EmpiricalDistribution,
    proj: &ProjectionSet,
    p: f64,
) -> Result<f64> {
    check_sliced(x, y, proj.dim(), p)?;
    let (m, d) = x.samples.dims2();
    let n = proj.count();
    let sum: f64 = (0..n)
        .map(|i| direction_pow(&x.samples, &y.samples, &proj.directions.values[i * d..(i + 1) * d], p, m, d))
        .sum();
    Ok(sum / n as f64)
}

/// Parallel numeric SW_p^p. Per-direction values are collected in
/// direction order before summing, so the result is bit-identical to
/// the sequential route.
#[cfg(feature = "parallel")]
pub fn sliced_wasserstein_pow_vals_par(
    x: &EmpiricalDistribution,
    y: &EmpiricalDistribution,
    proj: &ProjectionSet,
    p: f64,
) -> Result<f64> {
    check_sliced(x, y, proj.dim(), p)?;
    let (m, d) = x.samples.dims2();
    let n = proj.count();
    let per_dir: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| direction_pow(&x.samples, &y.samples, &proj.directions.values[i * d..(i + 1) * d], p, m, d))
        .collect();
    Ok(per_dir.iter().sum::<f64>() / n as f64)
}

/// Numeric SW_p^p, parallel when the `parallel` feature is enabled.
pub fn sliced_wasserstein_pow_vals(
    x: &EmpiricalDistribution,
    y: &EmpiricalDistribution,
    proj: &ProjectionSet,
    p: f64,
) -> Result<f64> {
    #[cfg(feature = "parallel")]
    {
        sliced_wasserstein_pow_vals_par(x, y, proj, p)
    }
    #[cfg(not(feature = "parallel"))]
    {
        sliced_wasserstein_pow_vals_seq(x, y, proj, p)
    }
}

/// Logging metric: SW_p^p raised to 1/p, with fresh projections drawn
/// from `seed`. Not differentiable.
pub fn sliced_wasserstein_report(
    x: &EmpiricalDistribution,
    y: &EmpiricalDistribution,
    n_proj: usize,
    p: f64,
    seed: u64,
) -> Result<f64> {
    let proj = sample_projections(n_proj, x.dim(), seed)?;
    let pow = sliced_wasserstein_pow_vals(x, y, &proj, p)?;
    Ok(pow.powf(1.0 / p))
}
