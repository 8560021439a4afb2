//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use mcigle::fan::{fan_gradient, fan_loss, FanConfig, FanStack, Normalization};
use mcigle::graph::{fuse, gradient_with_plan, loss_with_plan, GnnConfig, GnnParams, MultimodalGraph};
use mcigle::harness::{
    compare, compute_metrics, generate_stream, run_joint_upper_with, run_mcigle_with, Comparison, FeatureExtractor,
    ProtocolConfig,
};
use mcigle::linalg::{ridge_solve, sherman_morrison_update, woodbury_block_update, Matrix};
use mcigle::mainstream::{one_hot, AnalyticState, UpdatePath};
use mcigle::transport::{fused_ot_solve, pairwise_distances, uniform_marginal, OtProblem, SolverConfig};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

fn from_na(m: &DMatrix<f64>) -> Matrix {
    Matrix::from_vec(m.nrows(), m.ncols(), m.transpose().as_slice().to_vec()).unwrap()
}

fn recursive_equals_batch() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (d, per_phase, gamma) = (128, 400, 1.0);
    let mut state = AnalyticState::init(d, gamma, 1.0).unwrap();
    let mut x_all = Matrix::zeros(0, d);
    let mut labels = Vec::new();
    for k in 0..5 {
        let x = gaussian(per_phase, d, &mut rng);
        let y: Vec<usize> = (0..per_phase).map(|i| 2 * k + i % 2).collect();
        state.expand_labels(2);
        state.phase_update(&x, &one_hot(&y, 2 * k + 2).unwrap(), UpdatePath::PerSample).unwrap();
        x_all = x_all.vstack(&x).unwrap();
        labels.extend(y);
    }
    let batch = ridge_solve(&x_all, &one_hot(&labels, 10).unwrap(), gamma).unwrap();
    let diff = state.weights().max_abs_diff(&batch);
    let elapsed = start.elapsed();
    outcome(
        diff < 1e-8 && elapsed < Duration::from_secs(10),
        format!("N=2000 d=128: max |W_rec − W_batch| = {diff:.2e}, {elapsed:.2?}"),
    )
}

fn end_to_end_equivalence() -> Outcome {
    let start = Instant::now();
    let cfg = ProtocolConfig { seed: 7, beta: 1.0, lambda2: 1.0, compensation: false, ..ProtocolConfig::default() };
    let stream = generate_stream(&cfg).unwrap();
    let extractor = FeatureExtractor::train(&cfg, &stream.phases[0].train).unwrap();
    let joint = run_joint_upper_with(&cfg, &extractor, stream.clone()).unwrap();
    let run = run_mcigle_with(&cfg, &extractor, stream).unwrap();
    let main_acc = compute_metrics(&run.mainstream_accuracy).unwrap().acc;
    let elapsed = start.elapsed();
    outcome(
        (joint - main_acc).abs() < 1e-6 && elapsed < Duration::from_secs(60),
        format!("joint {joint:.6} vs recursive {main_acc:.6}, {elapsed:.2?}"),
    )
}

fn rank_updates_and_paths() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(64);
    let d = 64;
    let g = gaussian(d, d, &mut rng);
    let a = g.t_matmul(&g).unwrap().scale(1.0 / d as f64).add(&Matrix::identity(d)).unwrap();
    let a_inv = from_na(&to_na(&a).try_inverse().unwrap());
    let u = gaussian(1, d, &mut rng).scale(0.3);
    let v = gaussian(1, d, &mut rng).scale(0.3);
    let sm = sherman_morrison_update(&a_inv, u.row(0), v.row(0)).unwrap();
    let sm_direct = from_na(&(to_na(&a) + to_na(&u).transpose() * to_na(&v)).try_inverse().unwrap());
    let block = gaussian(16, d, &mut rng).scale(0.25);
    let wb = woodbury_block_update(&a_inv, &block, 1.0).unwrap();
    let nb = to_na(&block);
    let wb_direct = from_na(&(to_na(&a) + nb.transpose() * &nb).try_inverse().unwrap());
    let inv_err = sm.max_abs_diff(&sm_direct).max(wb.max_abs_diff(&wb_direct));

    let mut per_sample = AnalyticState::init(24, 0.5, 1.0).unwrap();
    let mut blocked = per_sample.clone();
    for k in 0..4 {
        let x = gaussian(50, 24, &mut rng);
        let y = one_hot(&(0..50).map(|i| 2 * k + i % 2).collect::<Vec<_>>(), 2 * k + 2).unwrap();
        per_sample.expand_labels(2);
        blocked.expand_labels(2);
        per_sample.phase_update(&x, &y, UpdatePath::PerSample).unwrap();
        blocked.phase_update(&x, &y, UpdatePath::Block).unwrap();
    }
    let path_err = per_sample.weights().max_abs_diff(blocked.weights());
    outcome(
        inv_err < 1e-10 && path_err < 1e-9,
        format!("64×64 inverse error {inv_err:.2e}, per-sample vs block {path_err:.2e}"),
    )
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn transport_feasibility() -> Outcome {
    let unit = |rows: usize, rng: &mut ChaCha8Rng| {
        Matrix::from_vec(rows, 2, (0..rows * 2).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    };
    let cfg = SolverConfig { max_outer: 200, ..SolverConfig::default() };
    let mut worst_marginal: f64 = 0.0;
    let mut worst_increase = f64::NEG_INFINITY;
    let mut converged = 0;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let (n, m) = (7, 5);
        let problem = OtProblem {
            cost: Matrix::from_vec(n, m, (0..n * m).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap(),
            structure_vis: pairwise_distances(&unit(n, &mut rng)),
            structure_txt: pairwise_distances(&unit(m, &mut rng)),
            lambda1: 0.5,
            epsilon: 0.05,
            marginal_src: uniform_marginal(n),
            marginal_tgt: uniform_marginal(m),
        };
        let sol = fused_ot_solve(&problem, &cfg).unwrap();
        for w in sol.history.windows(2) {
            worst_increase = worst_increase.max(w[1] - w[0]);
        }
        if sol.converged {
            converged += 1;
            for (s, a) in sol.plan.row_sums().iter().zip(&problem.marginal_src) {
                worst_marginal = worst_marginal.max((s - a).abs());
            }
            for (s, b) in sol.plan.col_sums().iter().zip(&problem.marginal_tgt) {
                worst_marginal = worst_marginal.max((s - b).abs());
            }
        }
    }

    let all = permutations(4);
    let mut recovered = 0;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = Matrix::from_vec(4, 3, (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let dv = pairwise_distances(&pts);
        let planted = all[rng.gen_range(0..all.len())].clone();
        let mut dt = Matrix::zeros(4, 4);
        for i in 0..4 {
            for k in 0..4 {
                dt[(planted[i], planted[k])] = dv[(i, k)];
            }
        }
        let problem = OtProblem {
            cost: Matrix::zeros(4, 4),
            structure_vis: dv,
            structure_txt: dt,
            lambda1: 0.0,
            epsilon: 0.002,
            marginal_src: uniform_marginal(4),
            marginal_tgt: uniform_marginal(4),
        };
        let sol = fused_ot_solve(&problem, &SolverConfig::default()).unwrap();
        if sol.plan.argmax_rows() == planted {
            recovered += 1;
        }
    }
    outcome(
        converged > 0 && worst_marginal < 1e-6 && worst_increase <= 1e-9 && recovered == 10,
        format!(
            "{converged}/10 converged, marginal error {worst_marginal:.2e}, largest objective increase {worst_increase:.2e}, permutations recovered {recovered}/10"
        ),
    )
}

/// Worst relative error of `grad` against central differences over 100 random coordinates.
fn finite_difference_worst(
    sizes: &[usize],
    grads: &[Matrix],
    seed: u64,
    mut perturb: impl FnMut(usize, usize, f64) -> f64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total: usize = sizes.iter().sum();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let mut flat = rng.gen_range(0..total);
        let mut t = 0;
        while flat >= sizes[t] {
            flat -= sizes[t];
            t += 1;
        }
        let fd = (perturb(t, flat, h) - perturb(t, flat, -h)) / (2.0 * h);
        let a = grads[t].as_slice()[flat];
        worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-8));
    }
    worst
}

fn gradient_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = FanConfig { layers: 2, width: 8, p_ratio: 0.5, ..FanConfig::default() };
    let mut stack = FanStack::init(4, 3, &cfg, 1).unwrap();
    for l in &mut stack.layers {
        l.b_pbar = gaussian(1, l.b_pbar.cols(), &mut rng).scale(0.3);
    }
    let x = gaussian(12, 4, &mut rng);
    let labels: Vec<usize> = (0..12).map(|i| i % 3).collect();
    stack.normalization = Normalization::fit(&x);
    let (_, fan_grads) = fan_gradient(&stack, &x, &labels).unwrap();
    let sizes: Vec<usize> = stack.trainable().iter().map(|m| m.as_slice().len()).collect();
    let fan_worst = finite_difference_worst(&sizes, &fan_grads, 6, |t, i, h| {
        let orig = stack.trainable()[t].as_slice()[i];
        stack.trainable_mut().unwrap()[t].as_mut_slice()[i] = orig + h;
        let loss = fan_loss(&stack, &x, &labels).unwrap();
        stack.trainable_mut().unwrap()[t].as_mut_slice()[i] = orig;
        loss
    });

    let n = 9;
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(0.4) {
                edges.push((i, j));
            }
        }
    }
    let graph =
        MultimodalGraph::new(n, edges, gaussian(n, 5, &mut rng), gaussian(n, 4, &mut rng), (0..n).map(|i| i % 3).collect())
            .unwrap();
    let gcfg = GnnConfig { hidden: 6, ..GnnConfig::default() };
    let mut params = GnnParams::init(5, 4, 3, &gcfg, 7);
    params.bias = Matrix::from_rows(&[[0.1, -0.2, 0.05]]);
    let plan = fuse(&graph, &params, &gcfg).unwrap().plan;
    let nodes: Vec<usize> = (0..n).collect();
    let (_, gnn_grads) = gradient_with_plan(&graph, &params, &plan, &nodes).unwrap();
    let sizes: Vec<usize> = params.trainable().iter().map(|m| m.as_slice().len()).collect();
    let gnn_worst = finite_difference_worst(&sizes, &gnn_grads, 8, |t, i, h| {
        let orig = params.trainable()[t].as_slice()[i];
        params.trainable_mut().unwrap()[t].as_mut_slice()[i] = orig + h;
        let loss = loss_with_plan(&graph, &params, &plan, &nodes).unwrap();
        params.trainable_mut().unwrap()[t].as_mut_slice()[i] = orig;
        loss
    });
    outcome(
        fan_worst < 1e-4 && gnn_worst < 1e-4,
        format!("max relative error: fourier stack {fan_worst:.2e}, graph encoder {gnn_worst:.2e}"),
    )
}

fn forgetting_reduction(runs: &[Comparison], elapsed: Duration) -> Outcome {
    let k = runs.len() as f64;
    let f_mcigle = runs.iter().map(|c| c.mcigle.metrics.forgetting).sum::<f64>() / k;
    let f_naive = runs.iter().map(|c| c.naive.metrics.forgetting).sum::<f64>() / k;
    let acc = runs.iter().map(|c| c.mcigle.metrics.acc).sum::<f64>() / k;
    let joint = runs.iter().map(|c| c.joint_acc).sum::<f64>() / k;
    outcome(
        f_mcigle <= 0.5 * f_naive && acc >= joint - 0.05 && elapsed < Duration::from_secs(300),
        format!(
            "5 seeds: F {f_mcigle:.3} vs naive {f_naive:.3}; Acc {acc:.3} vs joint {joint:.3}; {elapsed:.2?}"
        ),
    )
}

fn label_cleansing(runs: &[Comparison]) -> Outcome {
    let total: usize = runs.iter().map(|c| c.mcigle.diagnostics.len()).sum();
    let exact = runs.iter().flat_map(|c| &c.mcigle.diagnostics).filter(|d| d.plc_exact).count();
    outcome(total > 0 && exact == total, format!("{exact}/{total} residual targets with bitwise-zero old columns"))
}

fn compensation_monotonicity(runs: &[Comparison]) -> Outcome {
    let diags: Vec<_> = runs.iter().flat_map(|c| &c.mcigle.diagnostics).collect();
    let worst_increase =
        diags.iter().map(|d| d.residual_error_after - d.residual_error_before).fold(f64::NEG_INFINITY, f64::max);
    let strict = diags.iter().all(|d| d.residual_norm == 0.0 || d.objective_fitted < d.objective_at_zero);
    let blended_worse = diags.iter().filter(|d| d.blended_error > d.mainstream_error).count();
    outcome(
        !diags.is_empty() && worst_increase <= 1e-9 && strict,
        format!(
            "{} phases: largest residual-error increase {worst_increase:.2e}, objective below zero-start {strict} (info: convex blend error above mainstream-only in {blended_worse} phases)",
            diags.len()
        ),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("protocol.cfg");
    std::fs::write(&config, ProtocolConfig { seed: 99, ..ProtocolConfig::default() }.to_text()).unwrap();
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_mcigle"))
            .args(["run", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap();
        if !status.status.success() {
            return outcome(false, format!("run failed: {}", String::from_utf8_lossy(&status.stderr)));
        }
        outputs.push(std::fs::read(out.join("metrics.csv")).unwrap());
    }
    outcome(outputs[0] == outputs[1], format!("metrics.csv identical across runs: {}", outputs[0] == outputs[1]))
}

fn main() -> ExitCode {
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |n: usize, name: &'static str, o: Outcome| {
        println!("{} criterion {n} ({name}): {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, name, o));
    };
    report(1, "recursive equals batch", recursive_equals_batch());
    report(2, "end-to-end equivalence", end_to_end_equivalence());
    report(3, "rank-one and block updates", rank_updates_and_paths());
    report(4, "transport feasibility", transport_feasibility());
    report(5, "gradient checks", gradient_checks());

    let start = Instant::now();
    let runs: Vec<Comparison> = (0..5u64)
        .map(|seed| compare(&ProtocolConfig { seed, ..ProtocolConfig::default() }).unwrap())
        .collect();
    let elapsed = start.elapsed();
    report(6, "forgetting reduction", forgetting_reduction(&runs, elapsed));
    report(7, "label cleansing exactness", label_cleansing(&runs));
    report(8, "compensation monotonicity", compensation_monotonicity(&runs));
    report(9, "determinism", determinism());

    let failed = results.iter().filter(|(_, _, o)| !o.passed).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
