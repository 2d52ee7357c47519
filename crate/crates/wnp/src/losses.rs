//! Training objectives: the sliced-Wasserstein loss, the Gaussian NLL
//! baseline, and the uniform-noise log-likelihood whose gradient is
//! identically zero (the degenerate case the SWD loss exists to fix).

use crate::cnp;
use crate::diffmath::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::transport::{sample_projections, sliced_wasserstein_pow, EmpiricalDistribution};

/// Objective value plus a human-readable companion metric.
///
/// `degenerate` marks a likelihood that is exactly zero; such a loss
/// carries no gradient signal at all.
#[derive(Debug, Clone, Copy)]
pub struct LossReport {
    pub loss: f64,
    pub metric: f64,
    pub degenerate: bool,
}

/// Sliced-Wasserstein loss between predictions and observations.
///
/// With `joint` set, the compared clouds are the concatenated (x, y)
/// rows, so projections see the pairing between inputs and outputs;
/// otherwise only the y columns are compared. Returns the tracked loss
/// tensor (SW_p^p) alongside the report; the report metric is the 1/p
/// root.
#[allow(clippy::too_many_arguments)]
pub fn swd_loss(
    tape: &mut Tape,
    y_pred: &Tensor,
    y_true: &Tensor,
    x: &Tensor,
    joint: bool,
    n_proj: usize,
    p: f64,
    seed: u64,
) -> Result<(Tensor, LossReport)> {
    let (n, _) = y_pred.dims2();
    if n == 0 {
        return Err(Error::contract("swd_loss needs at least one sample"));
    }
    if y_true.dims2().0 != n || (joint && x.dims2().0 != n) {
        return Err(Error::contract("swd_loss inputs must have equal row counts"));
    }
    let (pred_cloud, true_cloud) = if joint {
        (tape.concat_cols(x, y_pred)?, tape.concat_cols(x, y_true)?)
    } else {
        (y_pred.clone(), y_true.clone())
    };
    let d = pred_cloud.dims2().1;
    let proj = sample_projections(n_proj, d, seed)?;
    let pred = EmpiricalDistribution::new(pred_cloud)?;
    let truth = EmpiricalDistribution::new(true_cloud)?;
    let loss = sliced_wasserstein_pow(tape, &pred, &truth, &proj, p)?;
    let report = LossReport {
        loss: loss.item(),
        metric: loss.item().powf(1.0 / p),
        degenerate: false,
    };
    Ok((loss, report))
}

const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_8;

/// Mean Gaussian negative log-likelihood over all n x d_y elements.
pub fn gaussian_nll(
    tape: &mut Tape,
    mu: &Tensor,
    sigma: &Tensor,
    y: &Tensor,
) -> Result<(Tensor, LossReport)> {
    if sigma.values.iter().any(|&s| s <= 0.0) {
        return Err(Error::contract("gaussian_nll requires sigma > 0"));
    }
    if mu.shape != y.shape || sigma.shape != y.shape {
        return Err(Error::shape(format!(
            "gaussian_nll shapes differ: mu {:?}, sigma {:?}, y {:?}",
            mu.shape, sigma.shape, y.shape
        )));
    }
    let resid = tape.sub(y, mu)?;
    let sq = tape.abs_pow(&resid, 2.0);
    let var2 = tape.mul(sigma, sigma)?;
    let var2 = tape.scale(&var2, 2.0);
    let quad = tape.div(&sq, &var2)?;
    let log_sigma = tape.ln(sigma);
    let terms = tape.add(&log_sigma, &quad)?;
    let mean = tape.mean(&terms, None)?;
    let loss = tape.shift(&mean, HALF_LOG_2PI);
    let v = loss.item();
    Ok((loss, LossReport { loss: v, metric: v, degenerate: false }))
}

/// Log-likelihood of a uniform noise tube of the given half-width.
///
/// Every residual inside the tube contributes log(1/(2h)); a single
/// residual outside makes the product zero, so the log-likelihood is
/// -inf and the report is flagged degenerate. The objective is
/// piecewise constant, so its gradient is exactly zero wherever it is
/// defined; `loss` is the negated log-likelihood, `metric` the
/// log-likelihood itself.
pub fn uniform_loglik(y_pred: &Tensor, y_true: &Tensor, halfwidth: f64) -> Result<LossReport> {
    if halfwidth <= 0.0 {
        return Err(Error::contract("halfwidth must be positive"));
    }
    if y_pred.values.len() != y_true.values.len() {
        return Err(Error::contract("uniform_loglik inputs must have equal lengths"));
    }
    let n = y_pred.values.len();
    let inside = y_pred
        .values
        .iter()
        .zip(&y_true.values)
        .all(|(&p, &t)| (t - p).abs() < halfwidth);
    if inside {
        let ll = n as f64 * (1.0 / (2.0 * halfwidth)).ln();
        Ok(LossReport { loss: -ll, metric: ll, degenerate: false })
    } else {
        Ok(LossReport { loss: f64::INFINITY, metric: f64::NEG_INFINITY, degenerate: true })
    }
}

/// Dispatchable objective kinds used by the trainer and CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Swd,
    GaussianNll,
    UniformLoglik,
}

impl Objective {
    pub fn head(self) -> cnp::Head {
        match self {
            Objective::GaussianNll => cnp::Head::Gaussian,
            _ => cnp::Head::Direct,
        }
    }
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "swd" => Ok(Objective::Swd),
            "gaussian_nll" => Ok(Objective::GaussianNll),
            "uniform_loglik" => Ok(Objective::UniformLoglik),
            other => Err(Error::Config(format!(
                "unknown objective '{other}' (expected swd, gaussian_nll, or uniform_loglik)"
            ))),
        }
    }
}

impl std::fmt::Display for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Objective::Swd => "swd",
            Objective::GaussianNll => "gaussian_nll",
            Objective::UniformLoglik => "uniform_loglik",
        };
        f.write_str(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_diff, max_rel_err};
    use crate::transport;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn swd_loss_zero_on_exact_match() {
        let mut tape = Tape::new();
        let y = Tensor::matrix(5, 1, vec![1.0, -2.0, 0.5, 3.0, 0.0]).unwrap();
        let x = Tensor::matrix(5, 1, vec![0.0; 5]).unwrap();
        let (_, report) = swd_loss(&mut tape, &y, &y, &x, true, 20, 2.0, 1).unwrap();
        assert_eq!(report.loss, 0.0);
        assert_eq!(report.metric, 0.0);
        assert!(!report.degenerate);
    }

    #[test]
    fn swd_loss_1d_translation() {
        let c = 0.8;
        let mut tape = Tape::new();
        let y_true = Tensor::matrix(6, 1, vec![0.1, 0.5, -0.3, 1.2, -1.0, 0.0]).unwrap();
        let y_pred =
            Tensor::matrix(6, 1, y_true.values.iter().map(|v| v + c).collect()).unwrap();
        let x = Tensor::matrix(6, 1, vec![0.0; 6]).unwrap();
        let (_, report) = swd_loss(&mut tape, &y_pred, &y_true, &x, false, 10, 1.0, 2).unwrap();
        assert!((report.loss - c).abs() < 1e-12);
    }

    #[test]
    fn swd_loss_joint_matches_direct_transport_call() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 12;
        let xs: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let yp: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let yt: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = Tensor::matrix(n, 1, xs.clone()).unwrap();
        let y_pred = Tensor::matrix(n, 1, yp.clone()).unwrap();
        let y_true = Tensor::matrix(n, 1, yt.clone()).unwrap();
        let seed = 99;
        let mut tape = Tape::new();
        let (_, report) = swd_loss(&mut tape, &y_pred, &y_true, &x, true, 30, 2.0, seed).unwrap();

        let joint = |ys: &[f64]| {
            let rows: Vec<Vec<f64>> = xs.iter().zip(ys).map(|(&a, &b)| vec![a, b]).collect();
            EmpiricalDistribution::new(Tensor::from_rows(&rows).unwrap()).unwrap()
        };
        let proj = transport::sample_projections(30, 2, seed).unwrap();
        let direct =
            transport::sliced_wasserstein_pow_vals(&joint(&yp), &joint(&yt), &proj, 2.0).unwrap();
        assert!((report.loss - direct).abs() < 1e-12);
    }

    #[test]
    fn swd_loss_rejects_empty() {
        let mut tape = Tape::new();
        let empty = Tensor::zeros(vec![0, 1]);
        assert!(swd_loss(&mut tape, &empty, &empty, &empty, false, 5, 2.0, 1).is_err());
    }

    #[test]
    fn nll_analytic_values() {
        let mut tape = Tape::new();
        let y = Tensor::matrix(3, 1, vec![0.5, -1.0, 2.0]).unwrap();
        let ones = Tensor::matrix(3, 1, vec![1.0; 3]).unwrap();
        let (_, at_mean) = gaussian_nll(&mut tape, &y, &ones, &y).unwrap();
        assert!((at_mean.loss - HALF_LOG_2PI).abs() < 1e-12);

        let mu = Tensor::matrix(1, 1, vec![0.0]).unwrap();
        let sigma = Tensor::matrix(1, 1, vec![1.0]).unwrap();
        let y1 = Tensor::matrix(1, 1, vec![1.0]).unwrap();
        let (_, off) = gaussian_nll(&mut tape, &mu, &sigma, &y1).unwrap();
        assert!((off.loss - (0.5 + HALF_LOG_2PI)).abs() < 1e-12);
    }

    #[test]
    fn nll_rejects_nonpositive_sigma() {
        let mut tape = Tape::new();
        let z = Tensor::matrix(1, 1, vec![0.0]).unwrap();
        assert!(gaussian_nll(&mut tape, &z, &z, &z).is_err());
    }

    #[test]
    fn nll_gradient_wrt_mu_matches_finite_differences() {
        let n = 4;
        let y_vals = vec![2.0; n];
        let sigma = Tensor::matrix(n, 1, vec![1.0; n]).unwrap();
        let y = Tensor::matrix(n, 1, y_vals).unwrap();
        let mu0 = vec![0.0; n];

        let f = |mv: &[f64]| {
            let mut tape = Tape::new();
            let mu = Tensor::matrix(n, 1, mv.to_vec()).unwrap();
            gaussian_nll(&mut tape, &mu, &sigma, &y).unwrap().1.loss
        };
        let mut tape = Tape::new();
        let mu = tape.leaf(&Tensor::matrix(n, 1, mu0.clone()).unwrap());
        let (loss, _) = gaussian_nll(&mut tape, &mu, &sigma, &y).unwrap();
        let grads = tape.backward(&loss).unwrap();
        let got = grads.wrt(&mu).values;
        // analytic: d/dmu mean((y-mu)^2/2) = (mu-y)/n = -2/n per element
        for &g in &got {
            assert!((g - (-2.0 / n as f64)).abs() < 1e-12);
        }
        let want = central_diff(&f, &mu0, 1e-6);
        assert!(max_rel_err(&got, &want) < 1e-6);
    }

    #[test]
    fn nll_minimized_at_mu_equals_y() {
        let n = 3;
        let y = Tensor::matrix(n, 1, vec![0.7; n]).unwrap();
        let sigma = Tensor::matrix(n, 1, vec![1.3; n]).unwrap();
        let eval = |shift: f64| {
            let mut tape = Tape::new();
            let mu = Tensor::matrix(n, 1, vec![0.7 + shift; n]).unwrap();
            gaussian_nll(&mut tape, &mu, &sigma, &y).unwrap().1.loss
        };
        let center = eval(0.0);
        assert!(eval(1e-3) > center);
        assert!(eval(-1e-3) > center);
    }

    #[test]
    fn uniform_all_inside_tube() {
        let n = 500;
        let y_true = Tensor::matrix(n, 1, vec![0.5; n]).unwrap();
        let y_pred = Tensor::matrix(n, 1, vec![0.2; n]).unwrap();
        let report = uniform_loglik(&y_pred, &y_true, 1.0).unwrap();
        assert!(!report.degenerate);
        assert!((report.metric - 500.0 * 0.5f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn uniform_single_outlier_degenerates() {
        let mut vals = vec![0.0; 10];
        vals[7] = 1.0;
        let y_true = Tensor::matrix(10, 1, vals).unwrap();
        let y_pred = Tensor::matrix(10, 1, vec![0.0; 10]).unwrap();
        // the boundary residual of exactly 1.0 falls outside the strict tube
        let report = uniform_loglik(&y_pred, &y_true, 1.0).unwrap();
        assert!(report.degenerate);
        assert_eq!(report.metric, f64::NEG_INFINITY);
        assert_eq!(report.loss, f64::INFINITY);
        let inside = uniform_loglik(&y_pred, &y_true, 1.5).unwrap();
        assert!(!inside.degenerate);
    }
}
