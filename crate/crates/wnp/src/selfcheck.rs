//! Embedded numeric oracle suite: brute-force transport minima,
//! finite-difference gradient checks, distribution collapse cases, and
//! invariance checks. The CLI exposes these as a release gate; tests
//! reuse the same oracles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cnp::{self, Head};
use crate::diffmath::{Tape, Tensor};
use crate::gradcheck::{central_diff, max_rel_err};
use crate::losses;
use crate::tasks::{gen_linear_uniform, gk_quantile, GkParams};
use crate::transport;

/// Minimum over all m! pairings of the mean p-th-power distance.
/// Exponential; intended for m <= 7.
pub fn brute_force_1d_pow(a: &[f64], b: &[f64], p: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    let m = a.len();
    let mut perm: Vec<usize> = (0..m).collect();
    let mut best = f64::INFINITY;
    // Heap's algorithm, iterative
    let mut c = vec![0usize; m];
    let cost = |perm: &[usize]| -> f64 {
        perm.iter()
            .enumerate()
            .map(|(i, &j)| (a[i] - b[j]).abs().powf(p))
            .sum::<f64>()
            / m as f64
    };
    best = best.min(cost(&perm));
    let mut i = 0;
    while i < m {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(cost(&perm));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> CheckResult {
    CheckResult { name, passed, detail }
}

fn check_grad_matmul() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let a0: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let b0: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let f = |av: &[f64]| {
        let mut tape = Tape::new();
        let a = Tensor::matrix(3, 4, av.to_vec()).unwrap();
        let b = Tensor::matrix(4, 5, b0.clone()).unwrap();
        let c = tape.matmul(&a, &b).unwrap();
        let sq = tape.abs_pow(&c, 2.0);
        tape.sum(&sq, None).unwrap().item()
    };
    let mut tape = Tape::new();
    let a = tape.leaf(&Tensor::matrix(3, 4, a0.clone()).unwrap());
    let b = Tensor::matrix(4, 5, b0.clone()).unwrap();
    let c = tape.matmul(&a, &b).unwrap();
    let sq = tape.abs_pow(&c, 2.0);
    let loss = tape.sum(&sq, None).unwrap();
    let err = match tape.backward(&loss) {
        Ok(g) => max_rel_err(&g.wrt(&a).values, &central_diff(&f, &a0, 1e-5)),
        Err(_) => f64::INFINITY,
    };
    check("grad_matmul", err < 1e-5, format!("max rel err {err:.2e}"))
}

fn check_grad_sort() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let x0: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let w: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let f = |xv: &[f64]| {
        let mut tape = Tape::new();
        let x = Tensor::matrix(3, 3, xv.to_vec()).unwrap();
        let (s, _) = tape.sort_rows(&x);
        let wt = Tensor::matrix(3, 3, w.clone()).unwrap();
        let prod = tape.mul(&s, &wt).unwrap();
        tape.sum(&prod, None).unwrap().item()
    };
    let mut tape = Tape::new();
    let x = tape.leaf(&Tensor::matrix(3, 3, x0.clone()).unwrap());
    let (s, _) = tape.sort_rows(&x);
    let wt = Tensor::matrix(3, 3, w.clone()).unwrap();
    let prod = tape.mul(&s, &wt).unwrap();
    let loss = tape.sum(&prod, None).unwrap();
    let grads = tape.backward(&loss).unwrap();
    let got = grads.wrt(&x).values;
    let err = max_rel_err(&got, &central_diff(&f, &x0, 1e-5));
    // gradient mass conservation: sort only permutes
    let mass_in: f64 = got.iter().sum();
    let mass_out: f64 = w.iter().sum();
    let conserved = (mass_in - mass_out).abs() < 1e-12;
    check(
        "grad_sort_rows",
        err < 1e-5 && conserved,
        format!("max rel err {err:.2e}, mass delta {:.2e}", (mass_in - mass_out).abs()),
    )
}

fn check_grad_mlp() -> CheckResult {
    let params = cnp::init_params(2, 1, 6, 4, Head::Direct, 103).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let x = Tensor::matrix(5, 2, (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let r_c = Tensor::vector((0..4).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let eval = |w1v: &[f64]| {
        let mut p = params.clone();
        p.decoder.w1.values = w1v.to_vec();
        let mut tape = Tape::new();
        let out = cnp::decode_targets(&mut tape, &p.as_constants(), &x, &r_c).unwrap();
        tape.mean(&out, None).unwrap().item()
    };
    let mut tape = Tape::new();
    let tp = params.track(&mut tape);
    let out = cnp::decode_targets(&mut tape, &tp, &x, &r_c).unwrap();
    let loss = tape.mean(&out, None).unwrap();
    let grads = tape.backward(&loss).unwrap();
    let err = max_rel_err(
        &grads.wrt(&tp.decoder.w1).values,
        &central_diff(&eval, &params.decoder.w1.values, 1e-5),
    );
    check("grad_two_layer_mlp", err < 1e-5, format!("max rel err {err:.2e}"))
}

fn check_sorted_matching() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let m = rng.gen_range(1..=7);
        let p = *[1.0, 2.0, 3.0].get(rng.gen_range(0..3)).unwrap();
        let a: Vec<f64> = (0..m).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let b: Vec<f64> = (0..m).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let sorted = transport::wasserstein_1d_pow_vals(&a, &b, p).unwrap();
        let brute = brute_force_1d_pow(&a, &b, p);
        worst = worst.max((sorted - brute).abs());
    }
    check(
        "sorted_matching_equals_brute_force",
        worst < 1e-12,
        format!("max abs deviation {worst:.2e} over 200 random pairs"),
    )
}

fn check_sliced_calibration() -> CheckResult {
    let c = 2.0;
    let m = 4;
    let x = transport::EmpiricalDistribution::new(
        Tensor::matrix(m, 2, vec![0.0; m * 2]).unwrap(),
    )
    .unwrap();
    let mut yv = Vec::new();
    for _ in 0..m {
        yv.extend([c, 0.0]);
    }
    let y = transport::EmpiricalDistribution::new(Tensor::matrix(m, 2, yv).unwrap()).unwrap();
    let proj = transport::sample_projections(1000, 2, 106).unwrap();
    let est = transport::sliced_wasserstein_pow_vals(&x, &y, &proj, 2.0).unwrap();
    let truth = c * c / 2.0;
    let rel = (est - truth).abs() / truth;
    check(
        "sliced_distance_calibration",
        rel < 0.10,
        format!("estimate {est:.4} vs {truth:.4} (rel {rel:.3})"),
    )
}

fn check_gk_collapse() -> CheckResult {
    // theta = (0,1,0,0) reduces the quantile formula to the identity in z
    let theta = GkParams::new(0.0, 1.0, 0.0, 0.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let z: f64 = rng.gen_range(-4.0..4.0);
        worst = worst.max((gk_quantile(&theta, z) - z).abs());
    }
    check("gk_collapse_case", worst < 1e-12, format!("max |q(z) - z| = {worst:.2e}"))
}

fn check_permutation_invariance() -> CheckResult {
    let params = cnp::init_params(1, 1, 16, 8, Head::Direct, 108).unwrap();
    let tp = params.as_constants();
    let mut rng = ChaCha8Rng::seed_from_u64(109);
    let k = 12;
    let xs: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let ys: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let encode = |order: &[usize]| {
        let x = Tensor::matrix(k, 1, order.iter().map(|&i| xs[i]).collect()).unwrap();
        let y = Tensor::matrix(k, 1, order.iter().map(|&i| ys[i]).collect()).unwrap();
        let mut tape = Tape::new();
        cnp::encode_context(&mut tape, &tp, &x, &y).unwrap().values
    };
    let base = encode(&(0..k).collect::<Vec<_>>());
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let mut order: Vec<usize> = (0..k).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        let permuted = encode(&order);
        for (a, b) in base.iter().zip(&permuted) {
            worst = worst.max((a - b).abs());
        }
    }
    check(
        "context_permutation_invariance",
        worst < 1e-10,
        format!("max abs deviation {worst:.2e} over 50 shuffles"),
    )
}

fn check_swd_pipeline_grad() -> CheckResult {
    let params = cnp::init_params(1, 1, 4, 3, Head::Direct, 110).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(111);
    let batch = gen_linear_uniform(8, 1.0, 0.0, 0.3, (-2.0, 2.0), &mut rng).unwrap();
    let batch = crate::cnp::TaskBatch::new(
        batch.x_target.clone(),
        batch.y_target.clone(),
        vec![0, 3, 5],
    )
    .unwrap();
    let proj_seed = 112;

    let eval_with = |p: &cnp::ModelParams| -> f64 {
        let mut tape = Tape::new();
        let out = cnp::forward_episode(&mut tape, &p.as_constants(), &batch).unwrap();
        losses::swd_loss(&mut tape, &out, &batch.y_target, &batch.x_target, true, 10, 2.0, proj_seed)
            .unwrap()
            .1
            .loss
    };

    let mut tape = Tape::new();
    let tp = params.track(&mut tape);
    let out = cnp::forward_episode(&mut tape, &tp, &batch).unwrap();
    let (loss, _) = losses::swd_loss(
        &mut tape,
        &out,
        &batch.y_target,
        &batch.x_target,
        true,
        10,
        2.0,
        proj_seed,
    )
    .unwrap();
    let grads = tape.backward(&loss).unwrap();

    let mut worst: f64 = 0.0;
    for ti in 0..params.tensors().len() {
        let base = params.tensors()[ti].values.clone();
        let fd = central_diff(
            &|v: &[f64]| {
                let mut p = params.clone();
                p.tensors_mut()[ti].values = v.to_vec();
                eval_with(&p)
            },
            &base,
            1e-5,
        );
        let got = &grads.wrt(tp.tensors()[ti]).values;
        worst = worst.max(max_rel_err(got, &fd));
    }
    check(
        "swd_through_cnp_gradcheck",
        worst < 1e-4,
        format!("max rel err {worst:.2e} over all parameter tensors"),
    )
}

/// Run every check; the CLI gates its exit code on the result.
pub fn run_all() -> Vec<CheckResult> {
    vec![
        check_grad_matmul(),
        check_grad_sort(),
        check_grad_mlp(),
        check_sorted_matching(),
        check_sliced_calibration(),
        check_gk_collapse(),
        check_permutation_invariance(),
        check_swd_pipeline_grad(),
    ]
}
