//! Quick oracle and invariant checks behind the `check` subcommand.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::{ridge_solve, sherman_morrison_update, woodbury_block_update, Matrix};
use crate::mainstream::{AnalyticState, UpdatePath};
use crate::transport::{fused_ot_solve, pairwise_distances, uniform_marginal, OtProblem, SolverConfig};

use super::{compute_metrics, run_mcigle, AccuracyMatrix, ProtocolConfig};

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect()).expect("sized")
}

fn check(name: &'static str, f: impl FnOnce() -> Result<(bool, String), String>) -> CheckResult {
    match f() {
        Ok((passed, detail)) => CheckResult { name, passed, detail },
        Err(e) => CheckResult { name, passed: false, detail: e },
    }
}

pub fn self_check(seed: u64) -> Vec<CheckResult> {
    let mut out = Vec::new();

    out.push(check("recursive-equals-batch", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = 16;
        let mut state = AnalyticState::init(d, 0.5, 1.0).map_err(|e| e.to_string())?;
        let mut xs = Matrix::zeros(0, d);
        let mut labels: Vec<usize> = Vec::new();
        for k in 0..4 {
            let x = gaussian(30, d, &mut rng);
            let ys: Vec<usize> = (0..30).map(|i| 2 * k + i % 2).collect();
            state.expand_labels(2);
            let y = crate::mainstream::one_hot(&ys, 2 * k + 2).map_err(|e| e.to_string())?;
            state.phase_update(&x, &y, UpdatePath::Block).map_err(|e| e.to_string())?;
            xs = xs.vstack(&x).map_err(|e| e.to_string())?;
            labels.extend(ys);
        }
        let y = crate::mainstream::one_hot(&labels, 8).map_err(|e| e.to_string())?;
        let batch = ridge_solve(&xs, &y, 0.5).map_err(|e| e.to_string())?;
        let diff = state.weights().max_abs_diff(&batch);
        Ok((diff < 1e-8, format!("max |W_rec − W_batch| = {diff:.3e}")))
    }));

    out.push(check("rank-updates-vs-inverse", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let d = 24;
        let g = gaussian(d, d, &mut rng);
        let a = g.t_matmul(&g).map_err(|e| e.to_string())?.add(&Matrix::identity(d).scale(d as f64)).map_err(|e| e.to_string())?;
        let a_inv = a.inverse().map_err(|e| e.to_string())?;
        let u = gaussian(5, d, &mut rng);
        let direct = a.add(&u.t_matmul(&u).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?.inverse().map_err(|e| e.to_string())?;
        let block = woodbury_block_update(&a_inv, &u, 1.0).map_err(|e| e.to_string())?;
        let mut seq = a_inv.clone();
        for r in 0..u.rows() {
            seq = sherman_morrison_update(&seq, u.row(r), u.row(r)).map_err(|e| e.to_string())?;
        }
        let diff = block.max_abs_diff(&direct).max(seq.max_abs_diff(&direct));
        Ok((diff < 1e-10, format!("max abs diff = {diff:.3e}")))
    }));

    out.push(check("transport-marginals", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
        let n = 8;
        let mut unit = |rows: usize| Matrix::from_vec(rows, 2, (0..rows * 2).map(|_| rng.gen_range(0.0..1.0)).collect()).expect("sized");
        let xv = unit(n);
        let xt = unit(n);
        let cost = Matrix::from_vec(n, n, (0..n * n).map(|_| rng.gen_range(0.0..1.0)).collect()).expect("sized");
        let problem = OtProblem {
            cost,
            structure_vis: pairwise_distances(&xv),
            structure_txt: pairwise_distances(&xt),
            lambda1: 0.5,
            epsilon: 0.05,
            marginal_src: uniform_marginal(n),
            marginal_tgt: uniform_marginal(n),
        };
        let cfg = SolverConfig { max_outer: 200, ..SolverConfig::default() };
        let sol = fused_ot_solve(&problem, &cfg).map_err(|e| e.to_string())?;
        let mut err: f64 = 0.0;
        for (s, m) in sol.plan.row_sums().iter().zip(&problem.marginal_src) {
            err = err.max((s - m).abs());
        }
        for (s, m) in sol.plan.col_sums().iter().zip(&problem.marginal_tgt) {
            err = err.max((s - m).abs());
        }
        let monotone = sol.history.windows(2).all(|w| w[1] <= w[0] + 1e-9);
        Ok((sol.converged && err < 1e-6 && monotone, format!("marginal error {err:.3e}, converged {}, monotone {monotone}", sol.converged)))
    }));

    out.push(check("metric-definitions", || {
        let a = AccuracyMatrix::from_rows(vec![vec![1.0], vec![0.8, 0.9]]).map_err(|e| e.to_string())?;
        let m = compute_metrics(&a).map_err(|e| e.to_string())?;
        let ok = (m.acc - 0.85).abs() < 1e-12 && (m.forgetting - 0.2).abs() < 1e-12 && (m.bwf - 0.2).abs() < 1e-12;
        Ok((ok, format!("acc {} F {} BwF {}", m.acc, m.forgetting, m.bwf)))
    }));

    out.push(check("label-cleansing-and-exemplar-free", || {
        let cfg = ProtocolConfig {
            num_classes: 4,
            nodes_per_class: 20,
            gnn_epochs: 20,
            fan_epochs: 30,
            comp_epochs: 5,
            comp_width: 64,
            seed,
            ..ProtocolConfig::default()
        };
        let run = run_mcigle(&cfg).map_err(|e| e.to_string())?;
        let plc = run.diagnostics.iter().all(|d| d.plc_exact);
        let isolated = run
            .access_log
            .iter()
            .all(|a| a.data_phase == a.during_phase || a.purpose == super::Purpose::Evaluate && a.data_phase < a.during_phase);
        Ok((plc && isolated, format!("cleansing exact {plc}, phase isolation {isolated}")))
    }));

    out
}
