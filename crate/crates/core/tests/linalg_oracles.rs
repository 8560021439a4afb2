use mcigle::linalg::{ridge_solve, sherman_morrison_update, woodbury_block_update, Matrix};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect()).unwrap()
}

fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

fn from_na(m: &DMatrix<f64>) -> Matrix {
    Matrix::from_vec(m.nrows(), m.ncols(), m.transpose().as_slice().to_vec()).unwrap()
}

/// `GᵀG/d + I`: eigenvalues bounded away from zero.
fn well_conditioned(d: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let g = gaussian(d, d, rng);
    g.t_matmul(&g).unwrap().scale(1.0 / d as f64).add(&Matrix::identity(d)).unwrap()
}

#[test]
fn sherman_morrison_matches_direct_inverse_64() {
    for seed in 0..3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = well_conditioned(64, &mut rng);
        let a_inv = from_na(&to_na(&a).try_inverse().unwrap());
        let u = gaussian(1, 64, &mut rng).scale(0.3);
        let v = gaussian(1, 64, &mut rng).scale(0.3);
        let updated = sherman_morrison_update(&a_inv, u.row(0), v.row(0)).unwrap();
        let direct = (to_na(&a) + to_na(&u).transpose() * to_na(&v)).try_inverse().unwrap();
        assert!(updated.max_abs_diff(&from_na(&direct)) < 1e-10);
    }
}

#[test]
fn woodbury_matches_direct_inverse_64() {
    for (seed, beta) in [(0u64, 1.0), (1, 0.8), (2, 0.5)] {
        let mut rng = ChaCha8Rng::seed_from_u64(10 + seed);
        let a = well_conditioned(64, &mut rng);
        let a_inv = from_na(&to_na(&a).try_inverse().unwrap());
        let u = gaussian(12, 64, &mut rng).scale(0.25);
        let updated = woodbury_block_update(&a_inv, &u, beta).unwrap();
        let na_u = to_na(&u);
        let direct = (to_na(&a) * beta + na_u.transpose() * &na_u).try_inverse().unwrap();
        assert!(updated.max_abs_diff(&from_na(&direct)) < 1e-10, "beta {beta}");
    }
}

#[test]
fn sequential_rank_one_equals_block() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = well_conditioned(64, &mut rng);
    let a_inv = from_na(&to_na(&a).try_inverse().unwrap());
    let u = gaussian(20, 64, &mut rng).scale(0.2);
    let mut seq = a_inv.clone();
    for r in 0..u.rows() {
        seq = sherman_morrison_update(&seq, u.row(r), u.row(r)).unwrap();
    }
    let block = woodbury_block_update(&a_inv, &u, 1.0).unwrap();
    assert!(seq.max_abs_diff(&block) < 1e-10);
}

#[test]
fn ridge_matches_normal_equations_via_cholesky() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = gaussian(200, 40, &mut rng);
    let y = gaussian(200, 6, &mut rng);
    let w = ridge_solve(&x, &y, 0.7).unwrap();
    let nx = to_na(&x);
    let gram = nx.transpose() * &nx + DMatrix::identity(40, 40) * 0.7;
    let expected = gram.cholesky().unwrap().solve(&(nx.transpose() * to_na(&y)));
    assert!(w.max_abs_diff(&from_na(&expected)) < 1e-10);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn woodbury_result_is_symmetric_positive_definite(seed in 0u64..10_000, m in 1usize..8, beta in 0.1f64..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = well_conditioned(10, &mut rng);
        let a_inv = from_na(&to_na(&a).try_inverse().unwrap());
        let u = gaussian(m, 10, &mut rng);
        let p = woodbury_block_update(&a_inv, &u, beta).unwrap();
        prop_assert!(p.is_symmetric(1e-10));
        prop_assert!(p.is_positive_definite());
    }
}
