//! Entropic fused optimal transport between the visual and textual node sets,
//! and the barycentric projection that carries visual features onto the
//! textual nodes.
//!
//! The objective for a coupling `P` is
//!
//! ```text
//! λ₁⟨P, C⟩ + (1 − λ₁) Σ_{i,j,i',j'} (Dv[i,i'] − Dt[j,j'])² P[i,j] P[i',j'] + ε Σ P[i,j](log P[i,j] − 1)
//! ```
//!
//! The quadratic structure term is linearized around the current plan at each
//! outer iteration, the linearized problem is solved by log-domain Sinkhorn
//! scaling, and a line search along the segment towards the Sinkhorn solution
//! keeps the objective non-increasing.

use thiserror::Error;

use crate::linalg::{LinalgError, Matrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    #[error("invalid transport input: {0}")]
    Input(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Solver budgets and tolerance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub max_outer: usize,
    pub max_sinkhorn: usize,
    pub tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { max_outer: 20, max_sinkhorn: 500, tol: 1e-6 }
    }
}

#[derive(Debug, Clone)]
pub struct OtProblem {
    pub cost: Matrix,
    pub structure_vis: Matrix,
    pub structure_txt: Matrix,
    pub lambda1: f64,
    pub epsilon: f64,
    pub marginal_src: Vec<f64>,
    pub marginal_tgt: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TransportPlan {
    pub plan: Matrix,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective value after each accepted outer step, starting with the initial coupling.
    pub history: Vec<f64>,
}

pub fn uniform_marginal(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

/// Pairwise Euclidean distances between the rows of `x`.
pub fn pairwise_distances(x: &Matrix) -> Matrix {
    let n = x.rows();
    let mut d = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..i {
            let dist = x
                .row(i)
                .iter()
                .zip(x.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            d[(i, j)] = dist;
            d[(j, i)] = dist;
        }
    }
    d
}

/// `1 − cos(a_i, b_j)`, with the cosine of a zero vector taken as 0.
pub fn cosine_cost(a: &Matrix, b: &Matrix) -> Result<Matrix, TransportError> {
    if a.cols() != b.cols() {
        return Err(TransportError::Input(format!(
            "cosine cost needs equal widths, got {} and {}",
            a.cols(),
            b.cols()
        )));
    }
    let norms = |m: &Matrix| -> Vec<f64> {
        (0..m.rows()).map(|r| m.row(r).iter().map(|v| v * v).sum::<f64>().sqrt()).collect()
    };
    let (na, nb) = (norms(a), norms(b));
    let dots = a.matmul_t(b)?;
    let mut cost = Matrix::zeros(a.rows(), b.rows());
    for i in 0..a.rows() {
        for j in 0..b.rows() {
            let denom = na[i] * nb[j];
            let cos = if denom > 0.0 { (dots[(i, j)] / denom).clamp(-1.0, 1.0) } else { 0.0 };
            cost[(i, j)] = 1.0 - cos;
        }
    }
    Ok(cost)
}

impl OtProblem {
    pub fn validate(&self) -> Result<(), TransportError> {
        let (n, m) = self.cost.shape();
        if self.structure_vis.shape() != (n, n) || self.structure_txt.shape() != (m, m) {
            return Err(TransportError::Input(format!(
                "structure matrices {:?} / {:?} do not match cost {n}x{m}",
                self.structure_vis.shape(),
                self.structure_txt.shape()
            )));
        }
        if n == 0 || m == 0 {
            return Err(TransportError::Input("empty transport problem".into()));
        }
        if !self.cost.is_finite() || !self.structure_vis.is_finite() || !self.structure_txt.is_finite() {
            return Err(TransportError::Input("non-finite cost or structure entries".into()));
        }
        if self.cost.as_slice().iter().any(|&c| c < 0.0) {
            return Err(TransportError::Input("negative cost entry".into()));
        }
        for (name, s) in [("visual", &self.structure_vis), ("textual", &self.structure_txt)] {
            if !s.is_symmetric(1e-12) || (0..s.rows()).any(|i| s[(i, i)] != 0.0) {
                return Err(TransportError::Input(format!(
                    "{name} structure matrix must be symmetric with zero diagonal"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.lambda1) {
            return Err(TransportError::Input(format!("lambda1 {} outside [0, 1]", self.lambda1)));
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(TransportError::Input(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        for (name, marg, len) in [("source", &self.marginal_src, n), ("target", &self.marginal_tgt, m)] {
            if marg.len() != len {
                return Err(TransportError::Input(format!("{name} marginal has length {}, expected {len}", marg.len())));
            }
            if marg.iter().any(|&w| !(w >= 0.0)) {
                return Err(TransportError::Input(format!("{name} marginal has negative entries")));
            }
            let total: f64 = marg.iter().sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(TransportError::Input(format!("{name} marginal sums to {total}")));
            }
        }
        Ok(())
    }

    /// `(L ⊗ P)[i,j] = Σ_{i',j'} (Dv[i,i'] − Dt[j,j'])² P[i',j']`.
    fn structure_tensor_product(&self, plan: &Matrix) -> Matrix {
        let dv = &self.structure_vis;
        let dt = &self.structure_txt;
        let p = plan.row_sums();
        let q = plan.col_sums();
        let dv2 = dv.map(|v| v * v);
        let dt2 = dt.map(|v| v * v);
        let row_term = dv2.matvec(&p).expect("validated dims");
        let col_term = dt2.matvec(&q).expect("validated dims");
        let cross = dv.matmul(plan).and_then(|m| m.matmul(dt)).expect("validated dims");
        let (n, m) = plan.shape();
        let mut out = Matrix::zeros(n, m);
        for i in 0..n {
            for j in 0..m {
                out[(i, j)] = row_term[i] + col_term[j] - 2.0 * cross[(i, j)];
            }
        }
        out
    }

    fn quadratic_term(&self, plan: &Matrix) -> f64 {
        inner(plan, &self.structure_tensor_product(plan))
    }

    /// Value of the fused objective at `plan`.
    pub fn objective(&self, plan: &Matrix) -> f64 {
        self.lambda1 * inner(plan, &self.cost)
            + (1.0 - self.lambda1) * self.quadratic_term(plan)
            + self.epsilon * neg_entropy(plan.as_slice())
    }
}

fn inner(a: &Matrix, b: &Matrix) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).sum()
}

/// `Σ p(log p − 1)` with `0 log 0 = 0`.
fn neg_entropy(p: &[f64]) -> f64 {
    p.iter().map(|&v| if v > 0.0 { v * (v.ln() - 1.0) } else { 0.0 }).sum()
}

fn logsumexp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}


/// Log-domain Sinkhorn for `min ⟨G, P⟩ + ε Σ P(log P − 1)` over couplings of `a`, `b`.
/// The potentials `f`, `g` are warm-started and updated in place.
fn sinkhorn_log(
    cost: &Matrix,
    a: &[f64],
    b: &[f64],
    eps: f64,
    max_iter: usize,
    tol: f64,
    f: &mut [f64],
    g: &mut [f64],
) -> Matrix {
    let (n, m) = cost.shape();
    let log_a: Vec<f64> = a.iter().map(|v| v.ln()).collect();
    let log_b: Vec<f64> = b.iter().map(|v| v.ln()).collect();
    let plan_of = |f: &[f64], g: &[f64]| {
        let mut p = Matrix::zeros(n, m);
        for i in 0..n {
            for j in 0..m {
                p[(i, j)] = ((f[i] + g[j] - cost[(i, j)]) / eps).exp();
            }
        }
        p
    };
    for _ in 0..max_iter.max(1) {
        for i in 0..n {
            if a[i] == 0.0 {
                f[i] = f64::NEG_INFINITY;
                continue;
            }
            let lse = logsumexp((0..m).map(|j| (g[j] - cost[(i, j)]) / eps));
            f[i] = eps * (log_a[i] - lse);
        }
        for j in 0..m {
            if b[j] == 0.0 {
                g[j] = f64::NEG_INFINITY;
                continue;
            }
            let lse = logsumexp((0..n).map(|i| (f[i] - cost[(i, j)]) / eps));
            g[j] = eps * (log_b[j] - lse);
        }
        // columns are exact after the g-step; rows carry the remaining error
        let row_error = (0..n)
            .map(|i| {
                let s: f64 = (0..m).map(|j| ((f[i] + g[j] - cost[(i, j)]) / eps).exp()).sum();
                (s - a[i]).abs()
            })
            .fold(0.0, f64::max);
        if row_error < tol {
            break;
        }
    }
    plan_of(f, g)
}

/// Largest absolute deviation of any row or column sum from its marginal.
fn marginal_error(plan: &Matrix, a: &[f64], b: &[f64]) -> f64 {
    let rows = plan.row_sums().iter().zip(a).map(|(s, m)| (s - m).abs()).fold(0.0, f64::max);
    plan.col_sums().iter().zip(b).map(|(s, m)| (s - m).abs()).fold(rows, f64::max)
}

/// Minimizes the objective along `plan + t·(target − plan)`, `t ∈ [0, 1]`.
/// Returns `(t, value)`; `t = 0` is always a candidate so the value never increases.
fn line_search(problem: &OtProblem, plan: &Matrix, target: &Matrix, current: f64) -> (f64, f64) {
    let delta = target.sub(plan).expect("same shape");
    let lam = problem.lambda1;
    // the linear and quadratic parts are an exact polynomial in t
    let lin_slope = lam * inner(&delta, &problem.cost);
    let lp = problem.structure_tensor_product(plan);
    let ld = problem.structure_tensor_product(&delta);
    let quad_slope = (1.0 - lam) * 2.0 * inner(&delta, &lp);
    let quad_curv = (1.0 - lam) * inner(&delta, &ld);
    let base = lam * inner(plan, &problem.cost) + (1.0 - lam) * inner(plan, &lp);
    let eval = |t: f64| {
        let ent: f64 = plan
            .as_slice()
            .iter()
            .zip(delta.as_slice())
            .map(|(&p, &d)| {
                let v = (p + t * d).max(0.0);
                if v > 0.0 { v * (v.ln() - 1.0) } else { 0.0 }
            })
            .sum();
        base + t * (lin_slope + quad_slope) + t * t * quad_curv + problem.epsilon * ent
    };

    let mut best = (0.0, current);
    let end = eval(1.0);
    if end < best.1 {
        best = (1.0, end);
    }
    // golden-section search for an interior minimum
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (eval(x1), eval(x2));
    for _ in 0..60 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = eval(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = eval(x2);
        }
        if hi - lo < 1e-10 {
            break;
        }
    }
    let t_mid = 0.5 * (lo + hi);
    let f_mid = eval(t_mid);
    if f_mid < best.1 {
        best = (t_mid, f_mid);
    }
    best
}

/// Solves the entropic fused transport problem.
///
/// Non-convergence within the budgets is not an error: the best plan found is
/// returned with `converged == false`.
pub fn fused_ot_solve(problem: &OtProblem, config: &SolverConfig) -> Result<TransportPlan, TransportError> {
    problem.validate()?;
    if !(config.tol > 0.0) {
        return Err(TransportError::Input(format!("tol must be positive, got {}", config.tol)));
    }
    let a = &problem.marginal_src;
    let b = &problem.marginal_tgt;
    let (n, m) = problem.cost.shape();

    let mut plan = Matrix::zeros(n, m);
    for i in 0..n {
        for j in 0..m {
            plan[(i, j)] = a[i] * b[j];
        }
    }
    let mut value = problem.objective(&plan);
    let mut history = vec![value];
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut converged = false;
    let mut iterations = 0;

    for outer in 0..config.max_outer.max(1) {
        iterations = outer + 1;
        let mut linear_cost = problem.cost.scale(problem.lambda1);
        if problem.lambda1 < 1.0 {
            let grad = problem.structure_tensor_product(&plan);
            linear_cost.axpy_assign(2.0 * (1.0 - problem.lambda1), &grad)?;
        }
        // the plan mixes Sinkhorn iterates, so each one is solved tighter than the tolerance
        let sk = sinkhorn_log(&linear_cost, a, b, problem.epsilon, config.max_sinkhorn, 0.1 * config.tol, &mut f, &mut g);
        let (t, new_value) = line_search(problem, &plan, &sk, value);
        let step_size = t * sk.max_abs_diff(&plan);
        if t > 0.0 {
            let mut next = plan.scale(1.0 - t);
            next.axpy_assign(t, &sk)?;
            plan = next;
            value = new_value;
            history.push(value);
        }
        let feasible = marginal_error(&plan, a, b) < config.tol;
        if feasible && step_size < config.tol {
            converged = true;
            break;
        }
        if problem.lambda1 == 1.0 && feasible {
            // purely linear: the Sinkhorn solution is the exact minimizer
            converged = true;
            break;
        }
    }
    if !plan.is_finite() {
        return Err(TransportError::Input("transport plan became non-finite".into()));
    }
    Ok(TransportPlan { plan, objective: value, iterations, converged, history })
}

/// Barycentric projection of `features_vis` (one row per source node) onto the
/// target nodes: each output row is the plan-weighted mean of source rows.
pub fn apply_plan(plan: &TransportPlan, features_vis: &Matrix) -> Result<Matrix, TransportError> {
    apply_plan_matrix(&plan.plan, features_vis)
}

pub fn apply_plan_matrix(plan: &Matrix, features_vis: &Matrix) -> Result<Matrix, TransportError> {
    if plan.rows() != features_vis.rows() {
        return Err(TransportError::Input(format!(
            "plan has {} source rows, features have {}",
            plan.rows(),
            features_vis.rows()
        )));
    }
    let mass = plan.col_sums();
    if let Some(j) = mass.iter().position(|&w| !(w > 0.0)) {
        return Err(TransportError::Input(format!("target node {j} receives zero mass")));
    }
    let mut projected = plan.t_matmul(features_vis)?;
    for (j, w) in mass.iter().enumerate() {
        projected.row_mut(j).iter_mut().for_each(|v| *v /= w);
    }
    Ok(projected)
}

/// `[projected ‖ features_txt]`.
pub fn concat_fuse(projected: &Matrix, features_txt: &Matrix) -> Result<Matrix, TransportError> {
    if projected.rows() != features_txt.rows() {
        return Err(TransportError::Input(format!(
            "projected has {} rows, textual features have {}",
            projected.rows(),
            features_txt.rows()
        )));
    }
    Ok(projected.hstack(features_txt)?)
}
