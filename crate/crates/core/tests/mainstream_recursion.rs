use mcigle::linalg::Matrix;
use mcigle::mainstream::{one_hot, AnalyticState, UpdatePath};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect()).unwrap()
}

fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

struct Phase {
    x: Matrix,
    labels: Vec<usize>,
}

/// Phase `k` introduces classes `2k, 2k+1`.
fn phases(count: usize, per_phase: usize, d: usize, seed: u64) -> Vec<Phase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|k| Phase { x: gaussian(per_phase, d, &mut rng), labels: (0..per_phase).map(|i| 2 * k + i % 2).collect() })
        .collect()
}

fn run(phases: &[Phase], gamma: f64, beta: f64, path: UpdatePath) -> AnalyticState {
    let d = phases[0].x.cols();
    let mut state = AnalyticState::init(d, gamma, beta).unwrap();
    let mut c = 0;
    for p in phases {
        let c_k = c.max(p.labels.iter().max().unwrap() + 1);
        state.expand_labels(c_k - c);
        c = c_k;
        state.phase_update(&p.x, &one_hot(&p.labels, c).unwrap(), path).unwrap();
    }
    state
}

/// `(β^K γI + Σ β^{K−k} XₖᵀXₖ)⁻¹ Σ β^{K−k} XₖᵀYₖ`, solved directly.
fn weighted_ridge(phases: &[Phase], gamma: f64, beta: f64, classes: usize) -> DMatrix<f64> {
    let d = phases[0].x.cols();
    let k = phases.len() as i32;
    let mut gram = DMatrix::identity(d, d) * (gamma * beta.powi(k));
    let mut cross = DMatrix::zeros(d, classes);
    for (i, p) in phases.iter().enumerate() {
        let w = beta.powi(k - 1 - i as i32);
        let x = to_na(&p.x);
        gram += x.transpose() * &x * w;
        cross += x.transpose() * to_na(&one_hot(&p.labels, classes).unwrap()) * w;
    }
    gram.lu().solve(&cross).unwrap()
}

fn max_diff(a: &Matrix, b: &DMatrix<f64>) -> f64 {
    (0..a.rows()).flat_map(|i| (0..a.cols()).map(move |j| (i, j))).map(|(i, j)| (a[(i, j)] - b[(i, j)]).abs()).fold(0.0, f64::max)
}

#[test]
fn five_phase_recursion_equals_joint_ridge() {
    let ps = phases(5, 80, 32, 1);
    let state = run(&ps, 0.5, 1.0, UpdatePath::Block);
    let oracle = weighted_ridge(&ps, 0.5, 1.0, 10);
    assert!(max_diff(state.weights(), &oracle) < 1e-8);
    let x = gaussian(7, 32, &mut ChaCha8Rng::seed_from_u64(2));
    let scores = state.predict(&x).unwrap();
    let expected = to_na(&x) * oracle;
    assert!(max_diff(&scores, &expected) < 1e-8);
}

#[test]
fn forgetting_factor_matches_weighted_ridge() {
    let ps = phases(4, 40, 12, 3);
    for beta in [0.9, 0.5, 0.2] {
        let state = run(&ps, 1.0, beta, UpdatePath::Block);
        assert!(max_diff(state.weights(), &weighted_ridge(&ps, 1.0, beta, 8)) < 1e-9, "beta {beta}");
    }
}

#[test]
fn per_sample_and_block_paths_agree() {
    let ps = phases(5, 30, 16, 4);
    for beta in [1.0, 0.7] {
        let a = run(&ps, 0.3, beta, UpdatePath::PerSample);
        let b = run(&ps, 0.3, beta, UpdatePath::Block);
        assert!(a.weights().max_abs_diff(b.weights()) < 1e-9);
        assert!(a.phi_inv().max_abs_diff(b.phi_inv()) < 1e-9);
    }
}

#[test]
fn sample_order_does_not_matter() {
    let ps = phases(5, 40, 10, 5);
    let reference = run(&ps, 1.0, 1.0, UpdatePath::Block);

    // reshuffle all samples across phases, registering every class up front
    let mut rows: Vec<(Vec<f64>, usize)> =
        ps.iter().flat_map(|p| (0..p.x.rows()).map(move |r| (p.x.row(r).to_vec(), p.labels[r]))).collect();
    rows.shuffle(&mut ChaCha8Rng::seed_from_u64(6));
    let mut state = AnalyticState::init(10, 1.0, 1.0).unwrap();
    state.expand_labels(10);
    for chunk in rows.chunks(37) {
        let x = Matrix::from_rows(&chunk.iter().map(|(r, _)| r.clone()).collect::<Vec<_>>());
        let labels: Vec<usize> = chunk.iter().map(|(_, l)| *l).collect();
        state.phase_update(&x, &one_hot(&labels, 10).unwrap(), UpdatePath::PerSample).unwrap();
    }
    assert!(state.weights().max_abs_diff(reference.weights()) < 1e-8);
}

#[test]
fn checkpoint_size_does_not_grow_with_samples() {
    let small = run(&phases(3, 5, 8, 7), 1.0, 1.0, UpdatePath::Block);
    let large = run(&phases(3, 500, 8, 8), 1.0, 1.0, UpdatePath::Block);
    let (mut a, mut b) = (Vec::new(), Vec::new());
    small.save(&mut a).unwrap();
    large.save(&mut b).unwrap();
    assert_eq!(a.len(), b.len());
    assert_eq!(AnalyticState::load(b.as_slice()).unwrap(), large);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn recursion_equals_batch_for_random_streams(
        seed in 0u64..10_000,
        count in 1usize..5,
        per_phase in 1usize..20,
        gamma in 0.05f64..5.0,
    ) {
        let ps = phases(count, per_phase, 6, seed);
        let classes = 2 * count;
        let state = run(&ps, gamma, 1.0, UpdatePath::Block);
        // classes that never received a sample still get a column
        let mut w = state.weights().clone();
        if w.cols() < classes {
            w = w.pad_columns(classes - w.cols());
        }
        prop_assert!(max_diff(&w, &weighted_ridge(&ps, gamma, 1.0, classes)) < 1e-8);
        prop_assert!(state.phi_inv().is_positive_definite());
    }
}
