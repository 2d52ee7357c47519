//! Randomized invariants for the transport distances: metric
//! properties of the 1D distance and Monte-Carlo behavior of the
//! sliced estimator.

use proptest::prelude::*;

use wnp::diffmath::Tensor;
use wnp::selfcheck::brute_force_1d_pow;
use wnp::transport::{
    sample_projections, sliced_wasserstein_pow_vals, wasserstein_1d_pow_vals,
    EmpiricalDistribution,
};

fn small_vec() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0..10.0f64, 1..=7)
}

proptest! {
    #[test]
    fn sorted_matching_is_the_permutation_minimum(a in small_vec(), p in 1.0..3.0f64) {
        let b: Vec<f64> = a.iter().map(|v| v * 0.7 + 0.3).collect();
        let fast = wasserstein_1d_pow_vals(&a, &b, p).unwrap();
        let brute = brute_force_1d_pow(&a, &b, p);
        prop_assert!((fast - brute).abs() <= 1e-12 * (1.0 + brute.abs()));
    }

    #[test]
    fn distance_is_symmetric(a in small_vec(), shift in -5.0..5.0f64) {
        let b: Vec<f64> = a.iter().rev().map(|v| v + shift).collect();
        let ab = wasserstein_1d_pow_vals(&a, &b, 2.0).unwrap();
        let ba = wasserstein_1d_pow_vals(&b, &a, 2.0).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-12 * (1.0 + ab.abs()));
    }

    #[test]
    fn self_distance_is_zero(a in small_vec(), p in 1.0..3.0f64) {
        let mut shuffled = a.clone();
        shuffled.reverse();
        prop_assert_eq!(wasserstein_1d_pow_vals(&a, &shuffled, p).unwrap(), 0.0);
    }

    #[test]
    fn translation_moves_w1_by_the_offset(a in small_vec(), c in 0.1..5.0f64) {
        let b: Vec<f64> = a.iter().map(|v| v + c).collect();
        let w1 = wasserstein_1d_pow_vals(&a, &b, 1.0).unwrap();
        prop_assert!((w1 - c).abs() <= 1e-12 * (1.0 + c));
    }
}

#[test]
fn separation_increases_sliced_distance() {
    // pulling two clouds apart monotonically increases SW2^2, up to
    // Monte-Carlo error; n_proj = 2000 keeps that error small
    let n = 50;
    let d = 3;
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let base: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let a = EmpiricalDistribution::new(Tensor::matrix(n, d, base.clone()).unwrap()).unwrap();
    let proj = sample_projections(2000, d, 11).unwrap();
    let mut prev = -1.0;
    for sep in [0.0, 1.0, 2.0, 4.0] {
        let moved: Vec<f64> = base
            .iter()
            .enumerate()
            .map(|(i, v)| if i % d == 0 { v + sep } else { *v })
            .collect();
        let b = EmpiricalDistribution::new(Tensor::matrix(n, d, moved).unwrap()).unwrap();
        let est = sliced_wasserstein_pow_vals(&a, &b, &proj, 2.0).unwrap();
        assert!(
            est > prev,
            "estimate {est} did not increase past {prev} at separation {sep}"
        );
        prev = est;
    }
}
