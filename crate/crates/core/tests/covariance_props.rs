use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;
use robustmed::aggregate::AggregationPlan;
use robustmed::covariance::{
    matrix_distance, projector_distance, robust_covariance, robust_covariance_detailed, spectral_gap, top_projector,
    MatrixNorm, SymMatrix,
};
use robustmed::sim::stream_rng;
use robustmed::MedianOptions;

fn random_sym(seed: u64, d: usize) -> SymMatrix {
    let mut rng = stream_rng(seed, 0);
    let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    SymMatrix::new((&g + g.transpose()) / 2.0).unwrap()
}

fn random_orthogonal(seed: u64, d: usize) -> DMatrix<f64> {
    let mut rng = stream_rng(seed, 1);
    DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal))
        .qr()
        .q()
}

fn sample(seed: u64, n: usize, d: usize) -> Vec<Vec<f64>> {
    let mut rng = stream_rng(seed, 2);
    (0..n)
        .map(|i| {
            (0..d)
                .map(|j| (1.0 + j as f64) * rng.sample::<f64, _>(StandardNormal) + 0.01 * i as f64)
                .collect()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn complementary_projectors_sum_to_identity(seed in any::<u64>(), d in 2usize..8, m in 1usize..7) {
        prop_assume!(m < d);
        let s = random_sym(seed, d);
        let neg = SymMatrix::new(-s.as_matrix()).unwrap();
        let p = top_projector(&s, m).unwrap();
        let q = top_projector(&neg, d - m).unwrap();
        prop_assume!(!p.ill_posed && !q.ill_posed);
        let sum = SymMatrix::new(p.matrix.as_matrix() + q.matrix.as_matrix()).unwrap();
        prop_assert!(matrix_distance(&sum, &SymMatrix::identity(d), MatrixNorm::Operator).unwrap() < 1e-9);
    }

    #[test]
    fn projectors_are_idempotent_with_rank_trace(seed in any::<u64>(), d in 2usize..8, m in 1usize..8) {
        prop_assume!(m <= d);
        let p = top_projector(&random_sym(seed, d), m).unwrap();
        let pm = p.matrix.as_matrix();
        prop_assert!((pm * pm - pm).norm() < 1e-9);
        prop_assert!((p.matrix.trace() - m as f64).abs() < 1e-9);
    }

    #[test]
    fn davis_kahan_bound_holds(seed in any::<u64>(), d in 3usize..8, m in 1usize..3, size in 0.0..0.2f64) {
        prop_assume!(m < d);
        let s = random_sym(seed, d);
        let gap = spectral_gap(&s, m).unwrap();
        prop_assume!(gap > 0.5);
        let e = random_sym(seed ^ 0x5555, d);
        let e_op = matrix_distance(&e, &SymMatrix::from_diagonal(&vec![0.0; d]), MatrixNorm::Operator).unwrap();
        let scaled = SymMatrix::new(e.as_matrix() * (size * gap / e_op)).unwrap();
        let perturbed = SymMatrix::new(s.as_matrix() + scaled.as_matrix()).unwrap();
        let dist = projector_distance(
            &top_projector(&s, m).unwrap(),
            &top_projector(&perturbed, m).unwrap(),
            MatrixNorm::Operator,
        ).unwrap();
        prop_assert!(dist <= 2.0 * size + 1e-9, "{dist} for relative size {size}");
    }

    #[test]
    fn projector_commutes_with_rotation(seed in any::<u64>(), d in 2usize..7, m in 1usize..6) {
        prop_assume!(m < d);
        let s = random_sym(seed, d);
        let q = random_orthogonal(seed, d);
        let p = top_projector(&s, m).unwrap();
        prop_assume!(spectral_gap(&s, m).unwrap() > 1e-3);
        let rotated = top_projector(&s.conjugate(&q), m).unwrap();
        let expected = p.matrix.conjugate(&q);
        prop_assert!(matrix_distance(&rotated.matrix, &expected, MatrixNorm::Frobenius).unwrap() < 1e-7);
    }
}

#[test]
fn median_covariance_reconstructs_from_block_weights() {
    let data = sample(1, 120, 4);
    let plan = AggregationPlan::with_blocks(6);
    for centered in [true, false] {
        let rc = robust_covariance_detailed(&data, &plan, centered, &MedianOptions::default()).unwrap();
        assert_eq!(rc.blocks.len(), 6);
        let back = rc.combine(&rc.median.weights).unwrap();
        assert!(matrix_distance(&back, &rc.matrix, MatrixNorm::Frobenius).unwrap() < 1e-9);
        assert!(rc.matrix.eigenvalues_decreasing().iter().all(|&v| v > -1e-9));
    }
}

#[test]
fn median_covariance_is_rotation_equivariant() {
    let data = sample(2, 90, 3);
    let q = random_orthogonal(9, 3);
    let rotated: Vec<Vec<f64>> = data
        .iter()
        .map(|x| (0..3).map(|i| (0..3).map(|j| q[(i, j)] * x[j]).sum()).collect())
        .collect();
    let plan = AggregationPlan::with_blocks(5);
    let opts = MedianOptions::default();
    let a = robust_covariance(&data, &plan, false, &opts).unwrap();
    let b = robust_covariance(&rotated, &plan, false, &opts).unwrap();
    assert!(matrix_distance(&a.conjugate(&q), &b, MatrixNorm::Frobenius).unwrap() < 1e-6 * a.frobenius_norm());
}

#[test]
fn uncentred_estimate_ignores_a_common_shift() {
    let data = sample(3, 80, 3);
    let shifted: Vec<Vec<f64>> = data.iter().map(|x| x.iter().map(|v| v + 7.5).collect()).collect();
    let plan = AggregationPlan::with_blocks(4);
    let opts = MedianOptions::default();
    let a = robust_covariance(&data, &plan, false, &opts).unwrap();
    let b = robust_covariance(&shifted, &plan, false, &opts).unwrap();
    assert!(matrix_distance(&a, &b, MatrixNorm::Frobenius).unwrap() < 1e-8 * a.frobenius_norm());
}
