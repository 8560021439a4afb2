//! Residual compensation stream.
//!
//! A second embedding (1-D convolution over the fused feature vector, flatten,
//! frozen random projection, `Tanh` or `Mish`) is fitted with its own
//! recursive least squares to the part of the current phase's targets that
//! the mainstream misses. Old-class columns of that residual are zeroed
//! before fitting.

use std::io::{self, Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::codec::{bad_data, Reader, Writer};
use crate::linalg::{ridge_solve, LinalgError, Matrix};
use crate::mainstream::{AnalyticError, AnalyticState, UpdatePath};

#[derive(Debug, Error)]
pub enum CompensationError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("embedding is frozen")]
    Frozen,
    #[error("non-finite embedding objective at epoch {0}")]
    NonFinite(usize),
    #[error(transparent)]
    Analytic(#[from] AnalyticError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompensationActivation {
    Tanh,
    Mish,
}

impl CompensationActivation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            CompensationActivation::Tanh => x.tanh(),
            CompensationActivation::Mish => x * softplus(x).tanh(),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            CompensationActivation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            CompensationActivation::Mish => {
                let t = softplus(x).tanh();
                let sigmoid = 1.0 / (1.0 + (-x).exp());
                t + x * (1.0 - t * t) * sigmoid
            }
        }
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub const KERNEL_WIDTH: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct CompensationEmbedding {
    /// `channels × KERNEL_WIDTH`
    pub kernels: Matrix,
    /// `1 × channels`
    pub conv_bias: Matrix,
    /// Frozen random projection, `(channels · input_width) × d_c`.
    pub projection: Matrix,
    pub activation: CompensationActivation,
    frozen: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingConfig {
    pub channels: usize,
    pub output_width: usize,
    pub activation: CompensationActivation,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig { channels: 4, output_width: 256, activation: CompensationActivation::Tanh }
    }
}

impl CompensationEmbedding {
    pub fn init(input_width: usize, config: &EmbeddingConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k_scale = 1.0 / (KERNEL_WIDTH as f64).sqrt();
        let kernels = Matrix::from_vec(
            config.channels,
            KERNEL_WIDTH,
            (0..config.channels * KERNEL_WIDTH).map(|_| k_scale * rng.sample::<f64, _>(StandardNormal)).collect(),
        )
        .expect("sized");
        let flat = config.channels * input_width;
        let b_scale = 1.0 / (flat as f64).sqrt();
        let projection = Matrix::from_vec(
            flat,
            config.output_width,
            (0..flat * config.output_width).map(|_| b_scale * rng.sample::<f64, _>(StandardNormal)).collect(),
        )
        .expect("sized");
        CompensationEmbedding {
            kernels,
            conv_bias: Matrix::zeros(1, config.channels),
            projection,
            activation: config.activation,
            frozen: false,
        }
    }

    /// Assembles an unfrozen embedding from explicit parts.
    pub fn from_parts(kernels: Matrix, conv_bias: Matrix, projection: Matrix, activation: CompensationActivation) -> Result<Self, CompensationError> {
        if kernels.cols() != KERNEL_WIDTH || conv_bias.shape() != (1, kernels.rows()) {
            return Err(CompensationError::Dimension("kernels must be channels × 3 with one bias per channel".into()));
        }
        if kernels.rows() == 0 || projection.rows() % kernels.rows() != 0 {
            return Err(CompensationError::Dimension("projection rows must be a multiple of the channel count".into()));
        }
        Ok(CompensationEmbedding { kernels, conv_bias, projection, activation, frozen: false })
    }

    pub fn channels(&self) -> usize {
        self.kernels.rows()
    }

    pub fn input_width(&self) -> usize {
        self.projection.rows() / self.channels()
    }

    pub fn output_width(&self) -> usize {
        self.projection.cols()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    /// Zero-padded convolution of each row, flattened channel-major.
    fn convolve(&self, x: &Matrix) -> Matrix {
        let d = x.cols();
        let ch = self.channels();
        let half = KERNEL_WIDTH / 2;
        let mut out = Matrix::zeros(x.rows(), ch * d);
        for r in 0..x.rows() {
            let xr = x.row(r);
            let row = out.row_mut(r);
            for c in 0..ch {
                let k = self.kernels.row(c);
                let b = self.conv_bias[(0, c)];
                for i in 0..d {
                    let mut s = b;
                    for (t, &kt) in k.iter().enumerate() {
                        let pos = i + t;
                        if pos >= half && pos - half < d {
                            s += kt * xr[pos - half];
                        }
                    }
                    row[c * d + i] = s;
                }
            }
        }
        out
    }

    fn pre_activation(&self, x: &Matrix) -> Result<Matrix, CompensationError> {
        if x.cols() != self.input_width() {
            return Err(CompensationError::Dimension(format!(
                "input width {} does not match embedding input {}",
                x.cols(),
                self.input_width()
            )));
        }
        Ok(self.convolve(x).matmul(&self.projection)?)
    }

    /// `σ_C(flat(conv(x)) · B)`.
    pub fn embed(&self, x: &Matrix) -> Result<Matrix, CompensationError> {
        let act = self.activation;
        Ok(self.pre_activation(x)?.map(|v| act.apply(v)))
    }

    /// Ridge objective `min_H ‖Y − X_C H‖² + γ‖H‖²` (per sample) and its
    /// gradient w.r.t. kernels and conv bias, with `H` at its optimum.
    pub fn profile_objective(&self, x: &Matrix, y: &Matrix, gamma: f64) -> Result<(f64, Matrix, Matrix), CompensationError> {
        let z = self.pre_activation(x)?;
        let act = self.activation;
        let xc = z.map(|v| act.apply(v));
        let head = ridge_solve(&xc, y, gamma)?;
        let resid = xc.matmul(&head)?.sub(y)?;
        let n = x.rows().max(1) as f64;
        let value = (resid.frobenius_norm().powi(2) + gamma * head.frobenius_norm().powi(2)) / n;

        // the head is optimal, so only the explicit dependence on the embedding remains
        let mut d_z = resid.matmul_t(&head)?.scale(2.0 / n);
        for (g, &zv) in d_z.as_mut_slice().iter_mut().zip(z.as_slice()) {
            *g *= act.derivative(zv);
        }
        let d_flat = d_z.matmul_t(&self.projection)?;
        let d = x.cols();
        let half = KERNEL_WIDTH / 2;
        let mut d_k = Matrix::zeros(self.channels(), KERNEL_WIDTH);
        let mut d_b = Matrix::zeros(1, self.channels());
        for r in 0..x.rows() {
            let xr = x.row(r);
            let g = d_flat.row(r);
            for c in 0..self.channels() {
                for i in 0..d {
                    let gi = g[c * d + i];
                    d_b[(0, c)] += gi;
                    for t in 0..KERNEL_WIDTH {
                        let pos = i + t;
                        if pos >= half && pos - half < d {
                            d_k[(c, t)] += gi * xr[pos - half];
                        }
                    }
                }
            }
        }
        Ok((value, d_k, d_b))
    }

    /// Gradient descent on the convolution parameters against the base-phase
    /// ridge objective, then freeze. The projection is never trained.
    pub fn train_base(&mut self, x: &Matrix, y: &Matrix, gamma: f64, epochs: usize, lr: f64) -> Result<Vec<f64>, CompensationError> {
        if self.frozen {
            return Err(CompensationError::Frozen);
        }
        let mut history = Vec::with_capacity(epochs);
        for epoch in 0..epochs {
            let (value, d_k, d_b) = self.profile_objective(x, y, gamma)?;
            if !value.is_finite() {
                return Err(CompensationError::NonFinite(epoch));
            }
            self.kernels.axpy_assign(-lr, &d_k)?;
            self.conv_bias.axpy_assign(-lr, &d_b)?;
            history.push(value);
        }
        self.freeze();
        Ok(history)
    }
}

/// Residual target of one phase. Columns `[0, old_width)` are exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualTarget {
    matrix: Matrix,
    old_width: usize,
}

impl ResidualTarget {
    /// Zeroes the first `old_width` columns of `residual`.
    pub fn cleansed(mut residual: Matrix, old_width: usize) -> Result<Self, CompensationError> {
        if old_width > residual.cols() {
            return Err(CompensationError::Dimension(format!(
                "old width {old_width} exceeds residual width {}",
                residual.cols()
            )));
        }
        for r in 0..residual.rows() {
            residual.row_mut(r)[..old_width].iter_mut().for_each(|v| *v = 0.0);
        }
        Ok(ResidualTarget { matrix: residual, old_width })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn old_width(&self) -> usize {
        self.old_width
    }

    pub fn old_columns_are_zero(&self) -> bool {
        (0..self.matrix.rows()).all(|r| self.matrix.row(r)[..self.old_width].iter().all(|v| v.to_bits() == 0))
    }
}

/// `[0, Y] − X·W_M` with the old-class columns then cleared.
///
/// `targets` spans all classes seen so far; `old_width` is the class count
/// before the current phase.
pub fn residual_matrix(
    mainstream: &AnalyticState,
    x_main: &Matrix,
    targets: &Matrix,
    old_width: usize,
) -> Result<ResidualTarget, CompensationError> {
    if targets.cols() != mainstream.seen_class_count() || targets.rows() != x_main.rows() {
        return Err(CompensationError::Dimension(format!(
            "targets {:?} vs {} samples and {} classes",
            targets.shape(),
            x_main.rows(),
            mainstream.seen_class_count()
        )));
    }
    let residual = targets.sub(&mainstream.predict(x_main)?)?;
    ResidualTarget::cleansed(residual, old_width)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompensationState {
    pub embedding: CompensationEmbedding,
    stream: AnalyticState,
    lambda2: f64,
}

impl CompensationState {
    pub fn new(embedding: CompensationEmbedding, gamma: f64, beta: f64, lambda2: f64) -> Result<Self, CompensationError> {
        if !(0.0..=1.0).contains(&lambda2) {
            return Err(CompensationError::Protocol(format!("lambda2 {lambda2} outside [0, 1]")));
        }
        let stream = AnalyticState::init(embedding.output_width(), gamma, beta)?.without_cross_correlation();
        Ok(CompensationState { embedding, stream, lambda2 })
    }

    pub fn lambda2(&self) -> f64 {
        self.lambda2
    }

    pub fn weights(&self) -> &Matrix {
        self.stream.weights()
    }

    pub fn inverse_correlation(&self) -> &Matrix {
        self.stream.phi_inv()
    }

    pub fn stream(&self) -> &AnalyticState {
        &self.stream
    }

    pub fn seen_class_count(&self) -> usize {
        self.stream.seen_class_count()
    }

    pub fn expand_labels(&mut self, new_classes: usize) {
        self.stream.expand_labels(new_classes);
    }

    pub fn embed(&self, x_raw: &Matrix) -> Result<Matrix, CompensationError> {
        self.embedding.embed(x_raw)
    }

    /// Fits the cleansed residual with the same recursion as the mainstream.
    pub fn update(&mut self, x_comp: &Matrix, target: &ResidualTarget, path: UpdatePath) -> Result<(), CompensationError> {
        if target.matrix().cols() != self.seen_class_count() {
            return Err(CompensationError::Protocol(format!(
                "residual has {} columns, compensation stream has {}",
                target.matrix().cols(),
                self.seen_class_count()
            )));
        }
        self.stream.phase_update(x_comp, target.matrix(), path)?;
        Ok(())
    }

    pub fn predict(&self, x_comp: &Matrix) -> Result<Matrix, CompensationError> {
        Ok(self.stream.predict(x_comp)?)
    }

    /// Checkpoint: `b"MCGLCMP1"`, `u32` version, `f64 lambda2`, `u8` activation
    /// (0 Tanh, 1 Mish), `u8 frozen`, kernels, conv bias and projection
    /// matrices, then the stream's own recursive-least-squares checkpoint.
    pub fn save<W: Write>(&self, out: W) -> io::Result<()> {
        let mut w = Writer::new(out);
        w.bytes(CMP_MAGIC)?;
        w.u32(1)?;
        w.f64(self.lambda2)?;
        w.u8(match self.embedding.activation {
            CompensationActivation::Tanh => 0,
            CompensationActivation::Mish => 1,
        })?;
        w.u8(self.embedding.frozen as u8)?;
        w.matrix(&self.embedding.kernels)?;
        w.matrix(&self.embedding.conv_bias)?;
        w.matrix(&self.embedding.projection)?;
        let mut inner = Vec::new();
        self.stream.save(&mut inner)?;
        w.bytes(&inner)
    }

    pub fn load<R: Read>(input: R) -> io::Result<Self> {
        let mut r = Reader::new(input);
        r.expect_magic(CMP_MAGIC)?;
        if r.u32()? != 1 {
            return Err(bad_data("unsupported compensation checkpoint version"));
        }
        let lambda2 = r.f64()?;
        let activation = match r.u8()? {
            0 => CompensationActivation::Tanh,
            1 => CompensationActivation::Mish,
            other => return Err(bad_data(format!("unknown activation code {other}"))),
        };
        let frozen = r.u8()? != 0;
        let kernels = r.matrix()?;
        let conv_bias = r.matrix()?;
        let projection = r.matrix()?;
        let mut embedding = CompensationEmbedding::from_parts(kernels, conv_bias, projection, activation)
            .map_err(|e| bad_data(e.to_string()))?;
        embedding.frozen = frozen;
        let stream = AnalyticState::load(r.into_inner())?;
        if stream.feature_width() != embedding.output_width() {
            return Err(bad_data("stream width does not match embedding output"));
        }
        Ok(CompensationState { embedding, stream, lambda2 })
    }
}

const CMP_MAGIC: &[u8] = b"MCGLCMP1";

/// `λ₂·X_M·W_M + (1 − λ₂)·X_C·W_C`.
pub fn predict_combined(
    mainstream: &AnalyticState,
    compensation: &CompensationState,
    x_main: &Matrix,
    x_raw: &Matrix,
) -> Result<Matrix, CompensationError> {
    let x_comp = compensation.embed(x_raw)?;
    combine_scores(mainstream, compensation, x_main, &x_comp)
}

/// As [`predict_combined`], with the compensation embedding already computed.
pub fn combine_scores(
    mainstream: &AnalyticState,
    compensation: &CompensationState,
    x_main: &Matrix,
    x_comp: &Matrix,
) -> Result<Matrix, CompensationError> {
    if mainstream.seen_class_count() != compensation.seen_class_count() {
        return Err(CompensationError::Protocol(format!(
            "mainstream knows {} classes, compensation {}",
            mainstream.seen_class_count(),
            compensation.seen_class_count()
        )));
    }
    let lam = compensation.lambda2();
    let main = mainstream.predict(x_main)?;
    if lam == 1.0 {
        return Ok(main);
    }
    let comp = compensation.predict(x_comp)?;
    if lam == 0.0 {
        return Ok(comp);
    }
    let mut out = main.scale(lam);
    out.axpy_assign(1.0 - lam, &comp)?;
    Ok(out)
}
