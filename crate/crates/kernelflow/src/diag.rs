//! Numerical diagnostics: finite-difference Jacobians and gradients, and 2-D
//! grid quadrature of the model density. These deliberately avoid the analytic
//! code paths they are used to check.

use ndarray::{Array2, ArrayView1};

use crate::error::Result;
use crate::flow::FlowModel;

/// log|det A| via LU with partial pivoting.
pub fn log_abs_det(a: &Array2<f64>) -> f64 {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    let mut m = a.clone();
    let mut logdet = 0.0;
    for col in 0..n {
        let mut piv = col;
        for r in (col + 1)..n {
            if m[[r, col]].abs() > m[[piv, col]].abs() {
                piv = r;
            }
        }
        if piv != col {
            for c in 0..n {
                let tmp = m[[col, c]];
                m[[col, c]] = m[[piv, c]];
                m[[piv, c]] = tmp;
            }
        }
        let p = m[[col, col]];
        if p == 0.0 {
            return f64::NEG_INFINITY;
        }
        logdet += p.abs().ln();
        for r in (col + 1)..n {
            let f = m[[r, col]] / p;
            for c in col..n {
                m[[r, c]] -= f * m[[col, c]];
            }
        }
    }
    logdet
}

/// Central-difference Jacobian of the flow at one input row.
pub fn numerical_jacobian(model: &FlowModel, x: ArrayView1<f64>, h: f64) -> Array2<f64> {
    let d = x.len();
    let mut jac = Array2::zeros((d, d));
    for j in 0..d {
        let mut xp = x.to_owned();
        let mut xm = x.to_owned();
        xp[j] += h;
        xm[j] -= h;
        let (zp, _) = model
            .forward(xp.view().insert_axis(ndarray::Axis(0)))
            .expect("forward perturbation failed");
        let (zm, _) = model
            .forward(xm.view().insert_axis(ndarray::Axis(0)))
            .expect("forward perturbation failed");
        for i in 0..d {
            jac[[i, j]] = (zp[[0, i]] - zm[[0, i]]) / (2.0 * h);
        }
    }
    jac
}

/// log|det| of the central-difference Jacobian.
pub fn numerical_logdet(model: &FlowModel, x: ArrayView1<f64>, h: f64) -> f64 {
    log_abs_det(&numerical_jacobian(model, x, h))
}

/// Central-difference gradient of a scalar function of a parameter vector.
pub fn finite_diff_grad<F>(mut f: F, params: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut grad = vec![0.0; params.len()];
    let mut p = params.to_vec();
    for i in 0..params.len() {
        let orig = p[i];
        p[i] = orig + h;
        let fp = f(&p);
        p[i] = orig - h;
        let fm = f(&p);
        p[i] = orig;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    grad
}

/// Worst relative error between two gradient vectors, with an absolute floor
/// below which entries are considered equal.
pub fn max_rel_error(a: &[f64], b: &[f64], abs_floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| {
            let diff = (x - y).abs();
            if diff < abs_floor {
                0.0
            } else {
                diff / x.abs().max(y.abs()).max(abs_floor)
            }
        })
        .fold(0.0, f64::max)
}

/// Integrates exp(log_prob) over [lo, hi]^2 on a bins x bins midpoint grid.
/// Only valid for 2-D models.
pub fn grid_quadrature_2d(model: &FlowModel, lo: f64, hi: f64, bins: usize) -> Result<f64> {
    let step = (hi - lo) / bins as f64;
    let mut total = 0.0;
    let mut row = Array2::zeros((bins, 2));
    for i in 0..bins {
        let x = lo + (i as f64 + 0.5) * step;
        for j in 0..bins {
            let y = lo + (j as f64 + 0.5) * step;
            row[[j, 0]] = x;
            row[[j, 1]] = y;
        }
        let lp = model.log_prob(row.view())?;
        total += lp.iter().map(|v| v.exp()).sum::<f64>();
    }
    Ok(total * step * step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::arr2;

    #[test]
    fn logdet_of_known_matrices() {
        let a = arr2(&[[2.0, 0.0], [0.0, 3.0]]);
        assert_relative_eq!(log_abs_det(&a), 6.0f64.ln(), max_relative = 1e-12);
        let b = arr2(&[[0.0, 1.0], [1.0, 0.0]]); // det -1
        assert_relative_eq!(log_abs_det(&b), 0.0, epsilon = 1e-12);
        let c = arr2(&[[1.0, 2.0], [2.0, 4.0]]); // singular
        assert_eq!(log_abs_det(&c), f64::NEG_INFINITY);
    }

    #[test]
    fn finite_diff_on_quadratic() {
        let g = finite_diff_grad(|p| 0.5 * p.iter().map(|v| v * v).sum::<f64>(), &[1.0, -2.0], 1e-6);
        assert_relative_eq!(g[0], 1.0, max_relative = 1e-8);
        assert_relative_eq!(g[1], -2.0, max_relative = 1e-8);
    }

    #[test]
    fn quadrature_of_identity_model_is_one() {
        let model = crate::flow::FlowModel::identity(2);
        let mass = grid_quadrature_2d(&model, -6.0, 6.0, 128).unwrap();
        assert!((mass - 1.0).abs() < 1e-3, "mass {mass}");
    }
}
