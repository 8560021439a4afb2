//! Concatenated recursive least squares over a growing label space.
//!
//! The state holds the weight matrix `W` (`d × c_k`), the inverse of the
//! regularized autocorrelation `Φ = γI + Σ XᵀX` and, optionally, the
//! cross-correlation `Z = Σ XᵀY`. Each phase applies
//!
//! ```text
//! Φ_k = βΦ_{k−1} + XᵀX,   Z_k = βZ_{k−1} + XᵀY,   W_k = W_{k−1} + Φ_k⁻¹Xᵀ(Y − XW_{k−1})
//! ```
//!
//! so that `W_k = Φ_k⁻¹Z_k` holds after every phase. With `β = 1` this is
//! exactly ridge regression on all phases seen so far, although no sample is
//! kept once its phase is over. The forgetting factor is applied once per
//! phase, whichever update path is used.

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::codec::{bad_data, Reader, Writer};
use crate::linalg::{sherman_morrison_update, woodbury_block_update, LinalgError, Matrix};

#[derive(Debug, Error)]
pub enum AnalyticError {
    #[error("gamma must be positive and finite, got {0}")]
    InvalidGamma(f64),
    #[error("beta must lie in (0, 1], got {0}")]
    InvalidBeta(f64),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("inverse autocorrelation lost positive definiteness after phase {0}")]
    NotPositiveDefinite(usize),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// How the rows of one phase are folded into the state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdatePath {
    /// One rank-one update per row.
    PerSample,
    /// One Woodbury update for the whole phase block.
    Block,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticState {
    weights: Matrix,
    phi_inv: Matrix,
    cross: Option<Matrix>,
    phase: usize,
    gamma: f64,
    beta: f64,
}

impl AnalyticState {
    /// `Φ₀ = γI`, no classes, phase 0.
    pub fn init(d: usize, gamma: f64, beta: f64) -> Result<Self, AnalyticError> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(AnalyticError::InvalidGamma(gamma));
        }
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(AnalyticError::InvalidBeta(beta));
        }
        Ok(AnalyticState {
            weights: Matrix::zeros(d, 0),
            phi_inv: Matrix::identity(d).scale(1.0 / gamma),
            cross: Some(Matrix::zeros(d, 0)),
            phase: 0,
            gamma,
            beta,
        })
    }

    /// Stops maintaining the cross-correlation matrix, which the update never reads.
    pub fn without_cross_correlation(mut self) -> Self {
        self.cross = None;
        self
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn phi_inv(&self) -> &Matrix {
        &self.phi_inv
    }

    pub fn cross_correlation(&self) -> Option<&Matrix> {
        self.cross.as_ref()
    }

    pub fn phase(&self) -> usize {
        self.phase
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn feature_width(&self) -> usize {
        self.weights.rows()
    }

    pub fn seen_class_count(&self) -> usize {
        self.weights.cols()
    }

    /// Appends zero columns for classes that have not been seen yet.
    pub fn expand_labels(&mut self, new_classes: usize) {
        if new_classes == 0 {
            return;
        }
        self.weights = self.weights.pad_columns(new_classes);
        if let Some(z) = &mut self.cross {
            *z = z.pad_columns(new_classes);
        }
    }

    /// Folds one phase into the state.
    ///
    /// `targets` may be narrower than the current label space; it is then
    /// aligned to the most recent classes and left-padded with zeros.
    pub fn phase_update(&mut self, x: &Matrix, targets: &Matrix, path: UpdatePath) -> Result<(), AnalyticError> {
        let d = self.feature_width();
        let c = self.seen_class_count();
        if x.cols() != d {
            return Err(AnalyticError::Dimension(format!("features have width {}, state expects {d}", x.cols())));
        }
        if targets.rows() != x.rows() {
            return Err(AnalyticError::Dimension(format!("{} target rows for {} samples", targets.rows(), x.rows())));
        }
        if targets.cols() > c {
            return Err(AnalyticError::Dimension(format!(
                "targets have {} columns but only {c} classes are registered; expand labels first",
                targets.cols()
            )));
        }
        if x.rows() == 0 {
            return Ok(());
        }
        let y = pad_left(targets, c);

        match path {
            UpdatePath::PerSample => {
                let mut p = self.phi_inv.scale(1.0 / self.beta);
                for r in 0..x.rows() {
                    let xr = x.row(r);
                    p = sherman_morrison_update(&p, xr, xr)?;
                    let gain = p.matvec(xr)?;
                    let pred = self.weights.t_matvec(xr)?;
                    let innovation: Vec<f64> = y.row(r).iter().zip(&pred).map(|(t, p)| t - p).collect();
                    for (i, g) in gain.iter().enumerate() {
                        crate::linalg::axpy(*g, &innovation, self.weights.row_mut(i));
                    }
                }
                self.phi_inv = p;
            }
            UpdatePath::Block => {
                let p = woodbury_block_update(&self.phi_inv, x, self.beta)?;
                let resid = y.sub(&x.matmul(&self.weights)?)?;
                let step = p.matmul(&x.t_matmul(&resid)?)?;
                self.weights.add_assign(&step)?;
                self.phi_inv = p;
            }
        }
        self.phi_inv.symmetrize();
        if let Some(z) = &mut self.cross {
            z.scale_assign(self.beta);
            z.add_assign(&x.t_matmul(&y)?)?;
        }
        self.phase += 1;
        if !self.phi_inv.is_positive_definite() || !self.weights.is_finite() {
            return Err(AnalyticError::NotPositiveDefinite(self.phase));
        }
        Ok(())
    }

    /// `X · W`.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix, AnalyticError> {
        if x.cols() != self.feature_width() {
            return Err(AnalyticError::Dimension(format!(
                "features have width {}, state expects {}",
                x.cols(),
                self.feature_width()
            )));
        }
        Ok(x.matmul(&self.weights)?)
    }

    /// Binary checkpoint, little-endian:
    ///
    /// ```text
    /// b"MCGLRLS1"  u32 version=1  u64 phase  f64 gamma  f64 beta
    /// matrix weights  matrix phi_inv  u8 has_cross  [matrix cross]
    /// ```
    ///
    /// `matrix` is `u64 rows, u64 cols` followed by row-major `f64` values.
    /// The size depends only on the feature width and class count.
    pub fn save<W: Write>(&self, out: W) -> io::Result<()> {
        let mut w = Writer::new(out);
        w.bytes(RLS_MAGIC)?;
        w.u32(1)?;
        w.u64(self.phase as u64)?;
        w.f64(self.gamma)?;
        w.f64(self.beta)?;
        w.matrix(&self.weights)?;
        w.matrix(&self.phi_inv)?;
        match &self.cross {
            Some(z) => {
                w.u8(1)?;
                w.matrix(z)
            }
            None => w.u8(0),
        }
    }

    pub fn load<R: Read>(input: R) -> io::Result<Self> {
        let mut r = Reader::new(input);
        r.expect_magic(RLS_MAGIC)?;
        let version = r.u32()?;
        if version != 1 {
            return Err(bad_data(format!("unsupported checkpoint version {version}")));
        }
        let phase = r.usize()?;
        let gamma = r.f64()?;
        let beta = r.f64()?;
        let weights = r.matrix()?;
        let phi_inv = r.matrix()?;
        let cross = if r.u8()? != 0 { Some(r.matrix()?) } else { None };
        let d = weights.rows();
        if phi_inv.shape() != (d, d) || cross.as_ref().map_or(false, |z| z.shape() != weights.shape()) {
            return Err(bad_data("checkpoint matrices have inconsistent shapes"));
        }
        Ok(AnalyticState { weights, phi_inv, cross, phase, gamma, beta })
    }
}

const RLS_MAGIC: &[u8] = b"MCGLRLS1";

fn pad_left(m: &Matrix, width: usize) -> Matrix {
    if m.cols() == width {
        return m.clone();
    }
    Matrix::zeros(m.rows(), width - m.cols()).hstack(m).expect("same rows")
}

/// One-hot rows over `num_classes` columns.
pub fn one_hot(labels: &[usize], num_classes: usize) -> Result<Matrix, AnalyticError> {
    let mut y = Matrix::zeros(labels.len(), num_classes);
    for (i, &l) in labels.iter().enumerate() {
        if l >= num_classes {
            return Err(AnalyticError::Dimension(format!("label {l} outside {num_classes} classes")));
        }
        y[(i, l)] = 1.0;
    }
    Ok(y)
}
