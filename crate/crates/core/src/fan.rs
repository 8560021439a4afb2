//! Fourier-analysis feature layers.
//!
//! Each layer maps `x` to `[cos(x·Wp) | sin(x·Wp) | σ(x·Wp̄ + Bp̄)]`. The stack
//! is trained once on base-phase data with a softmax head and AdamW, then
//! frozen; afterwards only [`fan_forward`] is used and the head is ignored.

use std::io::{self, Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::codec::{bad_data, Reader, Writer};
use crate::linalg::{LinalgError, Matrix};

#[derive(Debug, Error)]
pub enum FanError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("stack is frozen")]
    Frozen,
    #[error("non-finite loss {loss} at epoch {epoch} (last finite loss {last_finite:?})")]
    NonFiniteLoss { epoch: usize, loss: f64, last_finite: Option<f64> },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Gelu,
    Relu,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Gelu => 0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh()),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Gelu => {
                let inner = GELU_C * (x + 0.044715 * x * x * x);
                let t = inner.tanh();
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
            }
        }
    }

    fn code(self) -> u8 {
        match self {
            Activation::Gelu => 0,
            Activation::Relu => 1,
        }
    }

    fn from_code(c: u8) -> io::Result<Self> {
        match c {
            0 => Ok(Activation::Gelu),
            1 => Ok(Activation::Relu),
            other => Err(bad_data(format!("unknown activation code {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FanLayerParams {
    /// `d_in × d_p`
    pub w_p: Matrix,
    /// `d_in × d_pbar`
    pub w_pbar: Matrix,
    /// `1 × d_pbar`
    pub b_pbar: Matrix,
    pub activation: Activation,
}

impl FanLayerParams {
    pub fn input_width(&self) -> usize {
        self.w_p.rows()
    }

    pub fn periodic_width(&self) -> usize {
        self.w_p.cols()
    }

    pub fn output_width(&self) -> usize {
        2 * self.w_p.cols() + self.w_pbar.cols()
    }
}

/// Per-feature standardization fitted on base-phase data.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn identity(d: usize) -> Self {
        Normalization { mean: vec![0.0; d], std: vec![1.0; d] }
    }

    pub fn fit(x: &Matrix) -> Self {
        let n = x.rows().max(1) as f64;
        let mean: Vec<f64> = x.col_sums().iter().map(|s| s / n).collect();
        let mut var = vec![0.0; x.cols()];
        for r in 0..x.rows() {
            for (c, v) in x.row(r).iter().enumerate() {
                var[c] += (v - mean[c]).powi(2);
            }
        }
        // constant features keep unit scale
        let std = var.iter().map(|v| (v / n).sqrt()).map(|s| if s > 1e-12 { s } else { 1.0 }).collect();
        Normalization { mean, std }
    }

    pub fn apply(&self, x: &Matrix) -> Matrix {
        let mut out = x.clone();
        for r in 0..out.rows() {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = (*v - self.mean[c]) / self.std[c];
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FanConfig {
    pub layers: usize,
    /// Units per layer before the cos/sin doubling, `d_p + d_pbar`.
    pub width: usize,
    /// Fraction of the units given to the periodic branch.
    pub p_ratio: f64,
    pub activation: Activation,
    /// Standard deviation of the initial periodic weights, relative to `1/sqrt(d_in)`.
    pub periodic_init_scale: f64,
}

impl Default for FanConfig {
    fn default() -> Self {
        FanConfig { layers: 3, width: 64, p_ratio: 0.25, activation: Activation::Gelu, periodic_init_scale: 1.0 }
    }
}

impl FanConfig {
    pub fn periodic_units(&self) -> usize {
        (self.width as f64 * self.p_ratio).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FanStack {
    pub layers: Vec<FanLayerParams>,
    /// `d_out × num_classes`; only used while training.
    pub head: Matrix,
    pub normalization: Normalization,
    frozen: bool,
}

impl FanStack {
    pub fn init(d_in: usize, num_classes: usize, config: &FanConfig, seed: u64) -> Result<Self, FanError> {
        if config.layers == 0 || config.width == 0 {
            return Err(FanError::Input("stack needs at least one layer of positive width".into()));
        }
        if !(0.0..=1.0).contains(&config.p_ratio) {
            return Err(FanError::Input(format!("p_ratio {} outside [0, 1]", config.p_ratio)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut normal = |rows: usize, cols: usize, std: f64| {
            let data = (0..rows * cols).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect();
            Matrix::from_vec(rows, cols, data).expect("sized")
        };
        let d_p = config.periodic_units();
        let d_pbar = config.width - d_p;
        let mut layers = Vec::with_capacity(config.layers);
        let mut width = d_in;
        for _ in 0..config.layers {
            let scale = 1.0 / (width as f64).sqrt();
            layers.push(FanLayerParams {
                w_p: normal(width, d_p, scale * config.periodic_init_scale),
                w_pbar: normal(width, d_pbar, scale),
                b_pbar: Matrix::zeros(1, d_pbar),
                activation: config.activation,
            });
            width = 2 * d_p + d_pbar;
        }
        let head = normal(width, num_classes, 1.0 / (width as f64).sqrt());
        Ok(FanStack { layers, head, normalization: Normalization::identity(d_in), frozen: false })
    }

    /// Assembles an unfrozen stack from explicit parts.
    pub fn from_parts(layers: Vec<FanLayerParams>, head: Matrix, normalization: Normalization) -> Self {
        FanStack { layers, head, normalization, frozen: false }
    }

    pub fn input_width(&self) -> usize {
        self.layers.first().map_or(0, |l| l.input_width())
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.output_width())
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    /// Trainable tensors: per layer `w_p`, `w_pbar`, `b_pbar`, then the head.
    pub fn trainable(&self) -> Vec<&Matrix> {
        let mut v = Vec::new();
        for l in &self.layers {
            v.push(&l.w_p);
            v.push(&l.w_pbar);
            v.push(&l.b_pbar);
        }
        v.push(&self.head);
        v
    }

    pub fn trainable_mut(&mut self) -> Result<Vec<&mut Matrix>, FanError> {
        if self.frozen {
            return Err(FanError::Frozen);
        }
        let mut v = Vec::new();
        for l in &mut self.layers {
            v.push(&mut l.w_p);
            v.push(&mut l.w_pbar);
            v.push(&mut l.b_pbar);
        }
        v.push(&mut self.head);
        Ok(v)
    }

    pub fn parameter_count(&self) -> usize {
        self.trainable().iter().map(|m| m.as_slice().len()).sum()
    }

    /// Binary parameter file, all integers and floats little-endian:
    ///
    /// ```text
    /// b"MCGLFAN1"  u32 version=1  u8 frozen
    /// u64 num_layers
    /// per layer: u8 activation (0 GELU, 1 ReLU), matrix w_p, matrix w_pbar, matrix b_pbar
    /// matrix head
    /// u64 d_in, d_in × f64 mean, d_in × f64 std
    /// ```
    ///
    /// where `matrix` is `u64 rows, u64 cols, rows·cols f64` in row-major order.
    pub fn save<W: Write>(&self, out: W) -> io::Result<()> {
        let mut w = Writer::new(out);
        w.bytes(FAN_MAGIC)?;
        w.u32(1)?;
        w.u8(self.frozen as u8)?;
        w.u64(self.layers.len() as u64)?;
        for l in &self.layers {
            w.u8(l.activation.code())?;
            w.matrix(&l.w_p)?;
            w.matrix(&l.w_pbar)?;
            w.matrix(&l.b_pbar)?;
        }
        w.matrix(&self.head)?;
        w.u64(self.normalization.mean.len() as u64)?;
        w.f64s(&self.normalization.mean)?;
        w.f64s(&self.normalization.std)
    }

    pub fn load<R: Read>(input: R) -> io::Result<Self> {
        let mut r = Reader::new(input);
        r.expect_magic(FAN_MAGIC)?;
        let version = r.u32()?;
        if version != 1 {
            return Err(bad_data(format!("unsupported FAN file version {version}")));
        }
        let frozen = r.u8()? != 0;
        let n_layers = r.usize()?;
        let mut layers = Vec::with_capacity(n_layers.min(1024));
        let mut width = None;
        for _ in 0..n_layers {
            let activation = Activation::from_code(r.u8()?)?;
            let layer = FanLayerParams { w_p: r.matrix()?, w_pbar: r.matrix()?, b_pbar: r.matrix()?, activation };
            if layer.w_p.rows() != layer.w_pbar.rows()
                || layer.b_pbar.shape() != (1, layer.w_pbar.cols())
                || width.map_or(false, |w| w != layer.input_width())
            {
                return Err(bad_data("FAN layer dimensions do not chain"));
            }
            width = Some(layer.output_width());
            layers.push(layer);
        }
        let head = r.matrix()?;
        if width.map_or(false, |w| w != head.rows()) {
            return Err(bad_data("FAN head does not match last layer width"));
        }
        let d = r.usize()?;
        let mean = r.f64s(d)?;
        let std = r.f64s(d)?;
        if layers.first().map_or(false, |l| l.input_width() != d) {
            return Err(bad_data("normalization width does not match first layer"));
        }
        Ok(FanStack { layers, head, normalization: Normalization { mean, std }, frozen })
    }
}

const FAN_MAGIC: &[u8] = b"MCGLFAN1";

struct LayerCache {
    input: Matrix,
    periodic_pre: Matrix,
    branch_pre: Matrix,
}

fn layer_forward(layer: &FanLayerParams, x: &Matrix) -> Result<(Matrix, LayerCache), FanError> {
    let u = x.matmul(&layer.w_p)?;
    let mut v = x.matmul(&layer.w_pbar)?;
    for r in 0..v.rows() {
        for (a, b) in v.row_mut(r).iter_mut().zip(layer.b_pbar.row(0)) {
            *a += b;
        }
    }
    let (dp, dpb) = (u.cols(), v.cols());
    let width = 2 * dp + dpb;
    let mut out = Matrix::zeros(x.rows(), width);
    for r in 0..x.rows() {
        let row = out.row_mut(r);
        for (c, &z) in u.row(r).iter().enumerate() {
            row[c] = z.cos();
            row[dp + c] = z.sin();
        }
        for (c, &z) in v.row(r).iter().enumerate() {
            row[2 * dp + c] = layer.activation.apply(z);
        }
    }
    Ok((out, LayerCache { input: x.clone(), periodic_pre: u, branch_pre: v }))
}

fn check_width(stack: &FanStack, x: &Matrix) -> Result<(), FanError> {
    if x.cols() != stack.input_width() || stack.normalization.mean.len() != x.cols() {
        return Err(FanError::Input(format!(
            "input width {} does not match stack input {}",
            x.cols(),
            stack.input_width()
        )));
    }
    Ok(())
}

/// Normalizes `x` with the stored statistics and applies every layer.
pub fn fan_forward(stack: &FanStack, x: &Matrix) -> Result<Matrix, FanError> {
    check_width(stack, x)?;
    let mut h = stack.normalization.apply(x);
    for layer in &stack.layers {
        h = layer_forward(layer, &h)?.0;
    }
    Ok(h)
}

fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut p = logits.clone();
    for r in 0..p.rows() {
        let row = p.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
    p
}

fn check_labels(labels: &[usize], rows: usize, classes: usize) -> Result<(), FanError> {
    if labels.len() != rows {
        return Err(FanError::Input(format!("{} labels for {rows} rows", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(FanError::Input(format!("label {bad} outside {classes} head classes")));
    }
    Ok(())
}

/// Mean cross-entropy of `softmax(fan(x)·head)` against `labels`.
pub fn fan_loss(stack: &FanStack, x: &Matrix, labels: &[usize]) -> Result<f64, FanError> {
    check_labels(labels, x.rows(), stack.head.cols())?;
    let p = softmax_rows(&fan_forward(stack, x)?.matmul(&stack.head)?);
    let n = labels.len().max(1) as f64;
    Ok(-labels.iter().enumerate().map(|(i, &y)| p[(i, y)].max(f64::MIN_POSITIVE).ln()).sum::<f64>() / n)
}

/// Loss and gradients in the order of [`FanStack::trainable`].
pub fn fan_gradient(stack: &FanStack, x: &Matrix, labels: &[usize]) -> Result<(f64, Vec<Matrix>), FanError> {
    check_width(stack, x)?;
    check_labels(labels, x.rows(), stack.head.cols())?;
    let mut h = stack.normalization.apply(x);
    let mut caches = Vec::with_capacity(stack.layers.len());
    for layer in &stack.layers {
        let (out, cache) = layer_forward(layer, &h)?;
        caches.push(cache);
        h = out;
    }
    let p = softmax_rows(&h.matmul(&stack.head)?);
    let n = labels.len().max(1) as f64;
    let loss = -labels.iter().enumerate().map(|(i, &y)| p[(i, y)].max(f64::MIN_POSITIVE).ln()).sum::<f64>() / n;

    let mut d_logits = p;
    for (i, &y) in labels.iter().enumerate() {
        d_logits[(i, y)] -= 1.0;
    }
    d_logits.scale_assign(1.0 / n);
    let d_head = h.t_matmul(&d_logits)?;
    let mut d_h = d_logits.matmul_t(&stack.head)?;

    let mut layer_grads: Vec<[Matrix; 3]> = Vec::with_capacity(stack.layers.len());
    for (l, (layer, cache)) in stack.layers.iter().zip(&caches).enumerate().rev() {
        let dp = layer.periodic_width();
        let mut d_u = Matrix::zeros(cache.periodic_pre.rows(), dp);
        let mut d_v = Matrix::zeros(cache.branch_pre.rows(), cache.branch_pre.cols());
        for r in 0..d_h.rows() {
            let g = d_h.row(r);
            for c in 0..dp {
                let z = cache.periodic_pre[(r, c)];
                d_u[(r, c)] = -z.sin() * g[c] + z.cos() * g[dp + c];
            }
            for c in 0..d_v.cols() {
                d_v[(r, c)] = layer.activation.derivative(cache.branch_pre[(r, c)]) * g[2 * dp + c];
            }
        }
        let d_wp = cache.input.t_matmul(&d_u)?;
        let d_wpbar = cache.input.t_matmul(&d_v)?;
        let d_b = Matrix::from_vec(1, d_v.cols(), d_v.col_sums())?;
        if l > 0 {
            let mut next = d_u.matmul_t(&layer.w_p)?;
            next.add_assign(&d_v.matmul_t(&layer.w_pbar)?)?;
            d_h = next;
        }
        layer_grads.push([d_wp, d_wpbar, d_b]);
    }
    layer_grads.reverse();
    let mut grads: Vec<Matrix> = layer_grads.into_iter().flatten().collect();
    grads.push(d_head);
    Ok((loss, grads))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamWConfig {
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Rows per step; 0 means full batch.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            epochs: 200,
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
            batch_size: 0,
            seed: 0,
        }
    }
}

struct AdamW {
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    step: i32,
}

impl AdamW {
    fn new(shapes: &[&Matrix]) -> Self {
        let zeros = || shapes.iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect();
        AdamW { m: zeros(), v: zeros(), step: 0 }
    }

    fn update(&mut self, params: Vec<&mut Matrix>, grads: &[Matrix], cfg: &AdamWConfig) {
        self.step += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.step);
        let bc2 = 1.0 - cfg.beta2.powi(self.step);
        for (k, p) in params.into_iter().enumerate() {
            let g = grads[k].as_slice();
            let m = self.m[k].as_mut_slice();
            let v = self.v[k].as_mut_slice();
            for (i, w) in p.as_mut_slice().iter_mut().enumerate() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *w -= cfg.lr * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * *w);
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct FanTrainReport {
    pub losses: Vec<f64>,
}

/// Fits the normalization on `x`, trains layers and head jointly, and freezes the stack.
pub fn train_fan(
    mut stack: FanStack,
    x: &Matrix,
    labels: &[usize],
    config: &AdamWConfig,
) -> Result<(FanStack, FanTrainReport), FanError> {
    if stack.is_frozen() {
        return Err(FanError::Frozen);
    }
    if x.cols() != stack.input_width() {
        return Err(FanError::Input(format!("input width {} vs stack {}", x.cols(), stack.input_width())));
    }
    check_labels(labels, x.rows(), stack.head.cols())?;
    stack.normalization = Normalization::fit(x);
    let mut opt = AdamW::new(&stack.trainable());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = x.rows();
    let batch = if config.batch_size == 0 { n.max(1) } else { config.batch_size };
    let mut order: Vec<usize> = (0..n).collect();
    let mut losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        if batch < n {
            order.shuffle(&mut rng);
        }
        let mut total = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(batch) {
            let xb = x.select_rows(chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (loss, grads) = fan_gradient(&stack, &xb, &yb)?;
            if !loss.is_finite() {
                return Err(FanError::NonFiniteLoss { epoch, loss, last_finite: losses.last().copied() });
            }
            opt.update(stack.trainable_mut()?, &grads, config);
            total += loss;
            steps += 1;
        }
        losses.push(total / steps.max(1) as f64);
    }
    stack.freeze();
    Ok((stack, FanTrainReport { losses }))
}

/// Training accuracy of the head on `x`.
pub fn head_accuracy(stack: &FanStack, x: &Matrix, labels: &[usize]) -> Result<f64, FanError> {
    let scores = fan_forward(stack, x)?.matmul(&stack.head)?;
    let hits = scores.argmax_rows().iter().zip(labels).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / labels.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_stack(d_in: usize, activation: Activation) -> FanStack {
        let cfg = FanConfig { layers: 1, width: 4, p_ratio: 0.5, activation, periodic_init_scale: 1.0 };
        let mut s = FanStack::init(d_in, 2, &cfg, 0).unwrap();
        let l = &mut s.layers[0];
        l.w_p = Matrix::zeros(d_in, 2);
        l.w_pbar = Matrix::zeros(d_in, 2);
        s
    }

    #[test]
    fn zero_weights_give_constant_blocks() {
        let s = zero_stack(3, Activation::Relu);
        let x = Matrix::from_rows(&[[0.3, -1.0, 2.0], [5.0, 1.0, 0.0]]);
        let out = fan_forward(&s, &x).unwrap();
        for r in 0..2 {
            assert_eq!(out.row(r), &[1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn two_pi_weight_is_periodic_on_integers() {
        let mut s = zero_stack(1, Activation::Gelu);
        s.layers[0].w_p = Matrix::from_rows(&[[2.0 * std::f64::consts::PI, 0.0]]);
        let x = Matrix::column_vector(&[-3.0, 0.0, 1.0, 4.0]);
        let out = fan_forward(&s, &x).unwrap();
        for r in 0..4 {
            assert!((out[(r, 0)] - 1.0).abs() < 1e-12);
            assert!(out[(r, 2)].abs() < 1e-12);
        }
    }

    #[test]
    fn widths_follow_ratio() {
        let cfg = FanConfig::default();
        let s = FanStack::init(10, 3, &cfg, 1).unwrap();
        assert_eq!(s.layers[0].periodic_width(), 16);
        assert_eq!(s.layers[0].output_width(), 2 * 16 + 48);
        assert_eq!(s.layers[1].input_width(), 80);
        assert_eq!(s.output_width(), 80);
        assert!(fan_forward(&s, &Matrix::zeros(2, 9)).is_err());
    }

    #[test]
    fn zero_epochs_only_freezes() {
        let s = FanStack::init(2, 2, &FanConfig { width: 8, ..FanConfig::default() }, 4).unwrap();
        let x = Matrix::from_rows(&[[1.0, 2.0], [3.0, 5.0]]);
        let cfg = AdamWConfig { epochs: 0, ..AdamWConfig::default() };
        let (trained, _) = train_fan(s.clone(), &x, &[0, 1], &cfg).unwrap();
        assert!(trained.is_frozen());
        assert_eq!(trained.trainable(), s.trainable());
        assert!(matches!(train_fan(trained, &x, &[0, 1], &cfg), Err(FanError::Frozen)));
    }

    #[test]
    fn gelu_derivative_matches_difference_quotient() {
        for &x in &[-3.0, -0.5, 0.0, 0.7, 2.5] {
            let h = 1e-6;
            let fd = (Activation::Gelu.apply(x + h) - Activation::Gelu.apply(x - h)) / (2.0 * h);
            assert!((fd - Activation::Gelu.derivative(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn save_load_roundtrip() {
        let mut s = FanStack::init(3, 2, &FanConfig { width: 8, ..FanConfig::default() }, 2).unwrap();
        s.normalization = Normalization { mean: vec![0.5, -1.0, 2.0], std: vec![1.0, 2.0, 0.25] };
        s.freeze();
        let mut buf = Vec::new();
        s.save(&mut buf).unwrap();
        let back = FanStack::load(buf.as_slice()).unwrap();
        assert_eq!(back, s);
        buf[0] = b'X';
        assert!(FanStack::load(buf.as_slice()).is_err());
    }
}
