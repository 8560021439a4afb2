use crate::compensation::{combine_scores, residual_matrix, CompensationEmbedding, CompensationState, EmbeddingConfig};
use crate::fan::{fan_forward, train_fan, AdamWConfig, FanConfig, FanStack};
use crate::graph::{fuse, train_base, GnnConfig, GnnParams, MultimodalGraph, TrainConfig};
use crate::linalg::{ridge_solve, Matrix};
use crate::mainstream::{one_hot, AnalyticState};
use crate::transport::SolverConfig;

use super::metrics::{compute_metrics, AccuracyMatrix, MetricsReport};
use super::stream::{generate_stream, PhaseSplit, Stream};
use super::{AtPhase, HarnessError, ProtocolConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    /// Data entered a parameter update.
    Fit,
    /// Test data was scored.
    Evaluate,
}

/// One read of a phase's data, recorded by the drivers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DataAccess {
    pub during_phase: usize,
    pub data_phase: usize,
    pub purpose: Purpose,
}

/// Features of one graph under the frozen extractor.
#[derive(Debug, Clone)]
pub struct PhaseFeatures {
    /// Fused graph embedding, input of the compensation stream.
    pub raw: Matrix,
    /// Fourier-layer features with a trailing constant column, input of the mainstream.
    pub main: Matrix,
    pub labels: Vec<usize>,
}

/// Graph encoder, Fourier stack and compensation embedding, all trained on
/// the base phase and frozen.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    pub gnn: GnnParams,
    pub gnn_config: GnnConfig,
    pub fan: FanStack,
    pub embedding: CompensationEmbedding,
}

fn sub_seed(seed: u64, stream: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(stream)
}

fn with_bias(m: &Matrix) -> Matrix {
    m.hstack(&Matrix::filled(m.rows(), 1, 1.0)).expect("same row count")
}

impl FeatureExtractor {
    pub fn train(config: &ProtocolConfig, base: &MultimodalGraph) -> Result<Self, HarnessError> {
        let base_classes = base.labels.iter().max().map_or(0, |m| m + 1);
        let gnn_config = GnnConfig {
            layers: config.gnn_layers,
            hidden: config.gnn_hidden,
            lambda1: config.lambda1,
            epsilon: config.epsilon,
            solver: SolverConfig { max_outer: config.ot_max_outer, max_sinkhorn: config.ot_max_sinkhorn, ..SolverConfig::default() },
            ..GnnConfig::default()
        };
        let params = GnnParams::init(config.d_v, config.d_t, base_classes, &gnn_config, sub_seed(config.seed, 1));
        let train_cfg = TrainConfig {
            epochs: config.gnn_epochs,
            lr: config.gnn_lr,
            seed: sub_seed(config.seed, 2),
            ..TrainConfig::default()
        };
        let (gnn, _) = train_base(base, params, &gnn_config, &train_cfg).at(0)?;
        let raw = fuse(base, &gnn, &gnn_config).at(0)?.fused;

        let fan_cfg = FanConfig {
            layers: config.fan_layers,
            width: config.fan_width,
            p_ratio: config.p_ratio,
            ..FanConfig::default()
        };
        let stack = FanStack::init(raw.cols(), base_classes, &fan_cfg, sub_seed(config.seed, 3)).at(0)?;
        let adam = AdamWConfig { epochs: config.fan_epochs, lr: config.fan_lr, seed: sub_seed(config.seed, 4), ..AdamWConfig::default() };
        let (fan, _) = train_fan(stack, &raw, &base.labels, &adam).at(0)?;

        let emb_cfg = EmbeddingConfig {
            channels: config.comp_channels,
            output_width: config.comp_width,
            activation: config.comp_activation,
        };
        let mut embedding = CompensationEmbedding::init(raw.cols(), &emb_cfg, sub_seed(config.seed, 5));
        let targets = one_hot(&base.labels, base_classes).at(0)?;
        embedding.train_base(&raw, &targets, config.gamma, config.comp_epochs, config.comp_lr).at(0)?;
        Ok(FeatureExtractor { gnn, gnn_config, fan, embedding })
    }

    pub fn features(&self, graph: &MultimodalGraph, phase: usize) -> Result<PhaseFeatures, HarnessError> {
        let raw = fuse(graph, &self.gnn, &self.gnn_config).at(phase)?.fused;
        let main = with_bias(&fan_forward(&self.fan, &raw).at(phase)?);
        Ok(PhaseFeatures { raw, main, labels: graph.labels.clone() })
    }

    pub fn main_width(&self) -> usize {
        self.fan.output_width() + 1
    }
}

/// Per-phase record of the compensation stream's fit.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseDiagnostics {
    pub phase: usize,
    pub old_width: usize,
    /// Old-class columns of the residual target were bitwise zero.
    pub plc_exact: bool,
    pub residual_norm: f64,
    /// `‖T − X_C W_C‖_F` on this phase's data before and after its update.
    pub residual_error_before: f64,
    pub residual_error_after: f64,
    /// Accumulated regularized objective of the compensation stream at `W = 0` and at the fitted weights.
    pub objective_at_zero: f64,
    pub objective_fitted: f64,
    /// `‖Y − X_M W_M‖_F` and `‖Y − Ŷ‖_F` with the blended scores, on this phase's data.
    pub mainstream_error: f64,
    pub blended_error: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    /// Scores of the full model (blended when compensation is on).
    pub accuracy: AccuracyMatrix,
    pub mainstream_accuracy: AccuracyMatrix,
    pub metrics: MetricsReport,
    pub classes_seen: Vec<usize>,
    pub access_log: Vec<DataAccess>,
    pub diagnostics: Vec<PhaseDiagnostics>,
    pub mainstream: AnalyticState,
    pub compensation: Option<CompensationState>,
}

#[derive(Debug, Clone)]
pub struct BaselineOutput {
    pub accuracy: AccuracyMatrix,
    pub metrics: MetricsReport,
    pub classes_seen: Vec<usize>,
    pub access_log: Vec<DataAccess>,
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub mcigle: RunOutput,
    pub naive: BaselineOutput,
    pub joint_acc: f64,
}

fn accuracy_of(scores: &Matrix, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = scores.argmax_rows().iter().zip(labels).filter(|(p, y)| p == y).count();
    hits as f64 / labels.len() as f64
}

/// Accumulated `Φ`, `Z` and `Σ‖T‖²` of the compensation stream, used only to
/// evaluate its objective `tr(WᵀΦW) − 2tr(WᵀZ) + Σ‖T‖²`.
struct ObjectiveTracker {
    phi: Matrix,
    cross: Matrix,
    target_sq: f64,
    beta: f64,
}

impl ObjectiveTracker {
    fn new(d: usize, gamma: f64, beta: f64) -> Self {
        ObjectiveTracker { phi: Matrix::identity(d).scale(gamma), cross: Matrix::zeros(d, 0), target_sq: 0.0, beta }
    }

    fn absorb(&mut self, x: &Matrix, t: &Matrix) -> Result<(), crate::linalg::LinalgError> {
        self.phi.scale_assign(self.beta);
        self.phi.add_assign(&x.t_matmul(x)?)?;
        let mut cross = self.cross.pad_columns(t.cols() - self.cross.cols());
        cross.scale_assign(self.beta);
        cross.add_assign(&x.t_matmul(t)?)?;
        self.cross = cross;
        self.target_sq = self.beta * self.target_sq + t.frobenius_norm().powi(2);
        Ok(())
    }

    fn value(&self, w: &Matrix) -> Result<f64, crate::linalg::LinalgError> {
        let quad = w.hadamard(&self.phi.matmul(w)?)?.as_slice().iter().sum::<f64>();
        let lin = w.hadamard(&self.cross)?.as_slice().iter().sum::<f64>();
        Ok(quad - 2.0 * lin + self.target_sq)
    }
}

fn classes_seen(stream: &Stream) -> Vec<usize> {
    let mut max = 0;
    stream
        .phases
        .iter()
        .map(|p| {
            max = max.max(p.classes.iter().max().map_or(0, |m| m + 1));
            max
        })
        .collect()
}

/// Trains the extractor on the base phase and runs the full pipeline.
pub fn run_mcigle(config: &ProtocolConfig) -> Result<RunOutput, HarnessError> {
    let stream = generate_stream(config)?;
    let extractor = FeatureExtractor::train(config, &stream.phases[0].train)?;
    run_mcigle_with(config, &extractor, stream)
}

/// Runs the phases of `stream` in order. Each split is dropped once its phase
/// is over; only test features are kept, for evaluation.
pub fn run_mcigle_with(config: &ProtocolConfig, extractor: &FeatureExtractor, stream: Stream) -> Result<RunOutput, HarnessError> {
    let seen = classes_seen(&stream);
    let mut log = Vec::new();
    let mut mainstream = AnalyticState::init(extractor.main_width(), config.gamma, config.beta).at(0)?;
    let mut compensation = if config.compensation {
        let state = CompensationState::new(extractor.embedding.clone(), config.gamma, config.beta, config.lambda2)
            .at(0)?;
        Some((state, ObjectiveTracker::new(extractor.embedding.output_width(), config.gamma, config.beta)))
    } else {
        None
    };
    let mut tests: Vec<PhaseFeatures> = Vec::new();
    let mut accuracy = AccuracyMatrix::new();
    let mut mainstream_accuracy = AccuracyMatrix::new();
    let mut diagnostics = Vec::new();

    for (split, &c_k) in stream.phases.into_iter().zip(&seen) {
        let PhaseSplit { phase: k, train, test, .. } = split;
        let old_width = mainstream.seen_class_count();

        log.push(DataAccess { during_phase: k, data_phase: k, purpose: Purpose::Fit });
        let feats = extractor.features(&train, k)?;
        drop(train);
        let targets = one_hot(&feats.labels, c_k).at(k)?;

        mainstream.expand_labels(c_k - old_width);
        mainstream.phase_update(&feats.main, &targets, config.update_path).at(k)?;

        if let Some((comp, tracker)) = &mut compensation {
            comp.expand_labels(c_k - old_width);
            let residual = residual_matrix(&mainstream, &feats.main, &targets, old_width).at(k)?;
            let x_c = comp.embed(&feats.raw).at(k)?;
            let err_before = residual.matrix().sub(&comp.predict(&x_c).at(k)?).at(k)?.frobenius_norm();
            comp.update(&x_c, &residual, config.update_path).at(k)?;
            let err_after = residual.matrix().sub(&comp.predict(&x_c).at(k)?).at(k)?.frobenius_norm();
            tracker.absorb(&x_c, residual.matrix()).at(k)?;
            let main_scores = mainstream.predict(&feats.main).at(k)?;
            let blended = combine_scores(&mainstream, comp, &feats.main, &x_c).at(k)?;
            diagnostics.push(PhaseDiagnostics {
                phase: k,
                old_width,
                plc_exact: residual.old_columns_are_zero(),
                residual_norm: residual.matrix().frobenius_norm(),
                residual_error_before: err_before,
                residual_error_after: err_after,
                objective_at_zero: tracker.target_sq,
                objective_fitted: tracker.value(comp.weights()).at(k)?,
                mainstream_error: targets.sub(&main_scores).at(k)?.frobenius_norm(),
                blended_error: targets.sub(&blended).at(k)?.frobenius_norm(),
            });
        }

        tests.push(extractor.features(&test, k)?);
        drop(test);

        let mut row = Vec::with_capacity(tests.len());
        let mut main_row = Vec::with_capacity(tests.len());
        for (j, t) in tests.iter().enumerate() {
            log.push(DataAccess { during_phase: k, data_phase: j, purpose: Purpose::Evaluate });
            let main_scores = mainstream.predict(&t.main).at(k)?;
            main_row.push(accuracy_of(&main_scores, &t.labels));
            row.push(match &compensation {
                Some((comp, _)) => {
                    let x_c = comp.embed(&t.raw).at(k)?;
                    accuracy_of(&combine_scores(&mainstream, comp, &t.main, &x_c).at(k)?, &t.labels)
                }
                None => *main_row.last().expect("pushed above"),
            });
        }
        accuracy.push_row(row)?;
        mainstream_accuracy.push_row(main_row)?;
    }
    let metrics = compute_metrics(&accuracy)?;
    Ok(RunOutput {
        accuracy,
        mainstream_accuracy,
        metrics,
        classes_seen: seen,
        access_log: log,
        diagnostics,
        mainstream,
        compensation: compensation.map(|(c, _)| c),
    })
}

fn softmax_rows(z: &mut Matrix) {
    for r in 0..z.rows() {
        let row = z.row_mut(r);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
}

pub fn run_baseline_naive(config: &ProtocolConfig) -> Result<BaselineOutput, HarnessError> {
    let stream = generate_stream(config)?;
    let extractor = FeatureExtractor::train(config, &stream.phases[0].train)?;
    run_baseline_naive_with(config, &extractor, stream)
}

/// Softmax head on the same frozen features, refit by gradient descent on the
/// current phase only, warm-started from the previous head.
pub fn run_baseline_naive_with(config: &ProtocolConfig, extractor: &FeatureExtractor, stream: Stream) -> Result<BaselineOutput, HarnessError> {
    let seen = classes_seen(&stream);
    let mut log = Vec::new();
    let mut head = Matrix::zeros(extractor.main_width(), 0);
    let mut tests: Vec<PhaseFeatures> = Vec::new();
    let mut accuracy = AccuracyMatrix::new();
    for (split, &c_k) in stream.phases.into_iter().zip(&seen) {
        let PhaseSplit { phase: k, train, test, .. } = split;
        log.push(DataAccess { during_phase: k, data_phase: k, purpose: Purpose::Fit });
        let feats = extractor.features(&train, k)?;
        drop(train);
        head = head.pad_columns(c_k - head.cols());
        let y = one_hot(&feats.labels, c_k).at(k)?;
        let n = feats.main.rows().max(1) as f64;
        for _ in 0..config.baseline_epochs {
            let mut p = feats.main.matmul(&head).at(k)?;
            softmax_rows(&mut p);
            let g = feats.main.t_matmul(&p.sub(&y).at(k)?).at(k)?;
            head.axpy_assign(-config.baseline_lr / n, &g).at(k)?;
        }
        if !head.is_finite() {
            return Err(HarnessError::Numerical { phase: k, message: "baseline head diverged".into() });
        }
        tests.push(extractor.features(&test, k)?);
        let mut row = Vec::with_capacity(tests.len());
        for (j, t) in tests.iter().enumerate() {
            log.push(DataAccess { during_phase: k, data_phase: j, purpose: Purpose::Evaluate });
            row.push(accuracy_of(&t.main.matmul(&head).at(k)?, &t.labels));
        }
        accuracy.push_row(row)?;
    }
    let metrics = compute_metrics(&accuracy)?;
    Ok(BaselineOutput { accuracy, metrics, classes_seen: seen, access_log: log })
}

pub fn run_joint_upper(config: &ProtocolConfig) -> Result<f64, HarnessError> {
    let stream = generate_stream(config)?;
    let extractor = FeatureExtractor::train(config, &stream.phases[0].train)?;
    run_joint_upper_with(config, &extractor, stream)
}

/// Ridge classifier on the union of every phase's training features; returns
/// the mean test accuracy over phases.
pub fn run_joint_upper_with(config: &ProtocolConfig, extractor: &FeatureExtractor, stream: Stream) -> Result<f64, HarnessError> {
    let c = *classes_seen(&stream).last().expect("at least one phase");
    let last = stream.phases.len() - 1;
    let mut xs: Option<Matrix> = None;
    let mut labels = Vec::new();
    let mut tests = Vec::new();
    for split in &stream.phases {
        let f = extractor.features(&split.train, split.phase)?;
        labels.extend_from_slice(&f.labels);
        xs = Some(match xs {
            None => f.main,
            Some(x) => x.vstack(&f.main).at(split.phase)?,
        });
        tests.push(extractor.features(&split.test, split.phase)?);
    }
    let x = xs.expect("at least one phase");
    let y = one_hot(&labels, c).at(last)?;
    let w = ridge_solve(&x, &y, config.gamma).at(last)?;
    let mut total = 0.0;
    for t in &tests {
        total += accuracy_of(&t.main.matmul(&w).at(last)?, &t.labels);
    }
    Ok(total / tests.len() as f64)
}

/// MCIGLE, the naive baseline and the joint oracle on one shared extractor.
pub fn compare(config: &ProtocolConfig) -> Result<Comparison, HarnessError> {
    let stream = generate_stream(config)?;
    let extractor = FeatureExtractor::train(config, &stream.phases[0].train)?;
    let joint_acc = run_joint_upper_with(config, &extractor, stream.clone())?;
    let naive = run_baseline_naive_with(config, &extractor, stream.clone())?;
    let mcigle = run_mcigle_with(config, &extractor, stream)?;
    Ok(Comparison { mcigle, naive, joint_acc })
}
