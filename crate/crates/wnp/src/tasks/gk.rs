//! The four-parameter g-and-kappa quantile distribution: trivial to
//! sample, analytically intractable likelihood.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::cnp::TaskBatch;
use crate::diffmath::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GkParams {
    pub a: f64,
    pub b: f64,
    pub g: f64,
    pub kappa: f64,
}

impl GkParams {
    pub fn new(a: f64, b: f64, g: f64, kappa: f64) -> Result<Self> {
        for (name, v) in [("a", a), ("b", b), ("g", g), ("kappa", kappa)] {
            if !(0.0..=10.0).contains(&v) {
                return Err(Error::contract(format!(
                    "g-and-kappa parameter {name}={v} outside [0, 10]"
                )));
            }
        }
        Ok(GkParams { a, b, g, kappa })
    }
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).unwrap()
}

/// Quantile formula evaluated at a standard-normal value z.
pub fn gk_quantile(theta: &GkParams, z: f64) -> f64 {
    let skew = if theta.g == 0.0 {
        // the exponential skew factor collapses to 0
        0.0
    } else {
        let e = (-theta.g * z).exp();
        0.8 * (1.0 - e) / (1.0 + e)
    };
    theta.a + theta.b * (1.0 + skew) * (1.0 + z * z).powf(theta.kappa) * z
}

/// Quantile function at position r in (0, 1).
pub fn gk_quantile_at(theta: &GkParams, r: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&r) || r == 0.0 {
        return Err(Error::contract(format!("quantile position {r} outside (0, 1)")));
    }
    Ok(gk_quantile(theta, std_normal().inverse_cdf(r)))
}

/// n i.i.d. draws: standard normals pushed through the quantile formula.
pub fn gk_sample(theta: &GkParams, n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n)
        .map(|_| gk_quantile(theta, StandardNormal.sample(rng)))
        .collect()
}

/// One distribution-fitting episode. Context points are (r, s) pairs
/// where s is a draw and r its quantile position; targets are fresh
/// uniform positions with the quantile formula as ground truth, so the
/// decoder learns the quantile function.
pub fn gen_gk_episode(
    theta: &GkParams,
    n_context: usize,
    n_target: usize,
    rng: &mut impl Rng,
) -> Result<TaskBatch> {
    if n_context == 0 || n_target == 0 {
        return Err(Error::contract("counts must be at least 1"));
    }
    let normal = std_normal();
    let n = n_context + n_target;
    let mut rs = Vec::with_capacity(n);
    let mut ss = Vec::with_capacity(n);
    for _ in 0..n_context {
        let z: f64 = StandardNormal.sample(rng);
        rs.push(normal.cdf(z));
        ss.push(gk_quantile(theta, z));
    }
    for _ in 0..n_target {
        let r = rng.gen_range(1e-9..1.0 - 1e-9);
        rs.push(r);
        ss.push(gk_quantile_at(theta, r)?);
    }
    TaskBatch::new(
        Tensor::matrix(n, 1, rs)?,
        Tensor::matrix(n, 1, ss)?,
        (0..n_context).collect(),
    )
}
