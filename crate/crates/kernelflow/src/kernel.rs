//! Squared Exponential kernel evaluation and cross-matrix computation.
//!
//! Every coupling layer evaluates `k(x, y) = exp(-gamma * ||x - y||^2)`
//! between the untransformed half of a batch and a set of auxiliary points.
//! All numerics are f64; the squared distance is accumulated directly as
//! `sum((x_i - y_i)^2)` to avoid cancellation for near-duplicate points.

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of the Squared Exponential kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    gamma: f64,
}

impl KernelParams {
    /// `gamma` is the inverse squared length scale; must be positive and finite.
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::Argument(format!(
                "kernel gamma must be positive and finite, got {gamma}"
            )));
        }
        Ok(Self { gamma })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

/// `exp(-gamma * ||x - y||^2)`, in (0, 1].
pub fn rbf_eval(x: ArrayView1<f64>, y: ArrayView1<f64>, params: &KernelParams) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch(x.len(), y.len()));
    }
    let mut sq = 0.0;
    for (a, b) in x.iter().zip(y.iter()) {
        if !a.is_finite() || !b.is_finite() {
            return Err(Error::NonFiniteInput("rbf_eval operand".into()));
        }
        let d = a - b;
        sq += d * d;
    }
    Ok((-params.gamma * sq).exp())
}

/// Cross-kernel matrix: entry (i, m) = k(u_i, w_m).
pub fn kernel_cross_matrix(
    u: ArrayView2<f64>,
    w: ArrayView2<f64>,
    params: &KernelParams,
) -> Result<Array2<f64>> {
    if u.ncols() != w.ncols() {
        return Err(Error::DimensionMismatch(u.ncols(), w.ncols()));
    }
    let mut k = Array2::zeros((u.nrows(), w.nrows()));
    for (i, ui) in u.rows().into_iter().enumerate() {
        for (m, wm) in w.rows().into_iter().enumerate() {
            k[[i, m]] = rbf_eval(ui, wm, params)?;
        }
    }
    Ok(k)
}
