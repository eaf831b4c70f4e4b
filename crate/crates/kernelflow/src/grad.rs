//! Hand-derived reverse-mode differentiation of the mean-NLL objective with
//! respect to every learnable scalar: coupling weight matrices, auxiliary
//! points (accumulated across layers in shared mode), MLP weights, and
//! ActNorm scale/bias.
//!
//! The loss for a batch of B rows is
//! `L = (1/B) sum_b [ D/2 ln(2pi) + |z_b|^2 / 2 - logdet_b ]`,
//! so the backward pass starts from dL/dz = z/B and every row's log-det terms
//! carry a coefficient of -1/B.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::Result;
use crate::flow::{
    clamp_scale, clamp_scale_deriv, CouplingFn, CouplingLayer, FlowModel, Layer, LN_2PI,
};

enum LayerCache {
    ActNorm {
        input: Array2<f64>,
    },
    Perm,
    Coupling {
        u1: Array2<f64>,
        u2: Array2<f64>,
        s_raw: Array2<f64>,
        exp_s: Array2<f64>,
        extra: CouplingCache,
    },
}

enum CouplingCache {
    Kernel { k: Array2<f64> },
    Mlp { h1: Array2<f64>, h2: Array2<f64> },
}

pub struct Trace {
    caches: Vec<LayerCache>,
    pub z: Array2<f64>,
    pub logdet: Array1<f64>,
}

/// Forward pass that records the intermediates needed by [`backward`].
pub fn forward_trace(model: &FlowModel, x: ArrayView2<f64>) -> Result<Trace> {
    let mut h = x.to_owned();
    let mut logdet = Array1::zeros(x.nrows());
    let mut caches = Vec::with_capacity(model.layers.len());
    for layer in &model.layers {
        match layer {
            Layer::ActNorm(a) => {
                caches.push(LayerCache::ActNorm { input: h.clone() });
                let (y, ld) = a.forward(h.view())?;
                h = y;
                logdet += &ld;
            }
            Layer::Perm(p) => {
                caches.push(LayerCache::Perm);
                h = p.forward(h.view());
            }
            Layer::Coupling(c) => {
                let d = c.d;
                let u1 = h.slice(ndarray::s![.., ..d]).to_owned();
                let u2 = h.slice(ndarray::s![.., d..]).to_owned();
                let (s_raw, t, extra) = coupling_st_cached(c, model, u1.view())?;
                let s = s_raw.mapv(|v| clamp_scale(v, c.s_clamp));
                let exp_s = s.mapv(f64::exp);
                let y2 = &exp_s * &u2 + &t;
                for (b, row) in y2.rows().into_iter().enumerate() {
                    if row.iter().any(|v| !v.is_finite()) {
                        return Err(crate::error::Error::NumericOverflow {
                            context: "coupling_forward".into(),
                            row: b,
                        });
                    }
                }
                logdet += &s.sum_axis(Axis(1));
                let mut y = h.clone();
                y.slice_mut(ndarray::s![.., d..]).assign(&y2);
                caches.push(LayerCache::Coupling {
                    u1,
                    u2,
                    s_raw,
                    exp_s,
                    extra,
                });
                h = y;
            }
        }
    }
    Ok(Trace {
        caches,
        z: h,
        logdet,
    })
}

fn coupling_st_cached(
    layer: &CouplingLayer,
    model: &FlowModel,
    u1: ArrayView2<f64>,
) -> Result<(Array2<f64>, Array2<f64>, CouplingCache)> {
    match &layer.func {
        CouplingFn::Kernel {
            aux_idx,
            a_s,
            a_t,
            kernel,
        } => {
            let w = &model.aux[*aux_idx].w;
            let k = crate::kernel::kernel_cross_matrix(u1, w.view(), kernel)?;
            let s_raw = k.dot(&a_s.t());
            let t = k.dot(&a_t.t());
            Ok((s_raw, t, CouplingCache::Kernel { k }))
        }
        CouplingFn::Mlp(mlp) => {
            let h1 = (u1.dot(&mlp.w1.t()) + &mlp.b1).mapv(f64::tanh);
            let h2 = (h1.dot(&mlp.w2.t()) + &mlp.b2).mapv(f64::tanh);
            let out = h2.dot(&mlp.w3.t()) + &mlp.b3;
            let half = out.ncols() / 2;
            let s_raw = out.slice(ndarray::s![.., ..half]).to_owned();
            let t = out.slice(ndarray::s![.., half..]).to_owned();
            Ok((s_raw, t, CouplingCache::Mlp { h1, h2 }))
        }
    }
}

/// Mean NLL of the traced batch.
pub fn trace_nll(trace: &Trace, dim: usize) -> f64 {
    let b = trace.z.nrows() as f64;
    let mut total = 0.0;
    for (row, ld) in trace.z.rows().into_iter().zip(trace.logdet.iter()) {
        total += 0.5 * dim as f64 * LN_2PI + 0.5 * row.iter().map(|v| v * v).sum::<f64>() - ld;
    }
    total / b
}

/// Gradient of the mean NLL, flattened in the model's parameter-vector order.
/// Frozen auxiliary points get zero entries.
pub fn backward(model: &FlowModel, trace: &Trace) -> Vec<f64> {
    let batch = trace.z.nrows();
    let ld_coeff = -1.0 / batch as f64;
    let mut dy = &trace.z / batch as f64;

    // per-layer parameter grads in layer order, aux grads accumulated apart
    let mut layer_grads: Vec<Vec<f64>> = vec![Vec::new(); model.layers.len()];
    let mut aux_grads: Vec<Array2<f64>> = model
        .aux
        .iter()
        .map(|a| Array2::zeros(a.w.raw_dim()))
        .collect();

    for (idx, layer) in model.layers.iter().enumerate().rev() {
        match (layer, &trace.caches[idx]) {
            (Layer::ActNorm(a), LayerCache::ActNorm { input }) => {
                let mut dscale = Array1::zeros(a.scale.len());
                let mut dbias = Array1::zeros(a.bias.len());
                for j in 0..a.scale.len() {
                    let mut ds = 0.0;
                    let mut db = 0.0;
                    for b in 0..batch {
                        ds += dy[[b, j]] * input[[b, j]];
                        db += dy[[b, j]];
                    }
                    dscale[j] = ds + ld_coeff * batch as f64 / a.scale[j];
                    dbias[j] = db;
                }
                dy = &dy * &a.scale;
                let mut g = Vec::with_capacity(2 * a.scale.len());
                g.extend(dscale.iter());
                g.extend(dbias.iter());
                layer_grads[idx] = g;
            }
            (Layer::Perm(p), LayerCache::Perm) => {
                let mut du = Array2::zeros(dy.raw_dim());
                for (j, &q) in p.perm.iter().enumerate() {
                    du.column_mut(q).assign(&dy.column(j));
                }
                dy = du;
            }
            (
                Layer::Coupling(c),
                LayerCache::Coupling {
                    u1,
                    u2,
                    s_raw,
                    exp_s,
                    extra,
                },
            ) => {
                let d = c.d;
                let dy1 = dy.slice(ndarray::s![.., ..d]).to_owned();
                let dy2 = dy.slice(ndarray::s![.., d..]).to_owned();
                // ds_bj = dy2 * exp(s) * u2 + ld_coeff; dt = dy2
                let mut ds = &dy2 * exp_s * u2;
                ds += ld_coeff;
                let dclamp = s_raw.mapv(|v| clamp_scale_deriv(v, c.s_clamp));
                let ds_raw = &ds * &dclamp;
                let du2 = &dy2 * exp_s;
                let mut du1 = dy1;

                match (&c.func, extra) {
                    (
                        CouplingFn::Kernel {
                            aux_idx,
                            a_s,
                            a_t,
                            kernel,
                        },
                        CouplingCache::Kernel { k },
                    ) => {
                        let da_s = ds_raw.t().dot(k);
                        let da_t = dy2.t().dot(k);
                        // dK = ds_raw A_s + dt A_t
                        let dk = ds_raw.dot(a_s) + dy2.dot(a_t);
                        let gamma = kernel.gamma();
                        let w = &model.aux[*aux_idx].w;
                        let dw = &mut aux_grads[*aux_idx];
                        for b in 0..batch {
                            for m in 0..w.nrows() {
                                let f = dk[[b, m]] * 2.0 * gamma * k[[b, m]];
                                if f != 0.0 {
                                    for c2 in 0..d {
                                        let diff = u1[[b, c2]] - w[[m, c2]];
                                        du1[[b, c2]] -= f * diff;
                                        dw[[m, c2]] += f * diff;
                                    }
                                }
                            }
                        }
                        let mut g = Vec::with_capacity(da_s.len() + da_t.len());
                        g.extend(da_s.iter());
                        g.extend(da_t.iter());
                        layer_grads[idx] = g;
                    }
                    (CouplingFn::Mlp(mlp), CouplingCache::Mlp { h1, h2 }) => {
                        let dout = ndarray::concatenate![Axis(1), ds_raw, dy2];
                        let dw3 = dout.t().dot(h2);
                        let db3 = dout.sum_axis(Axis(0));
                        let dh2 = dout.dot(&mlp.w3);
                        let dpre2 = &dh2 * &h2.mapv(|v| 1.0 - v * v);
                        let dw2 = dpre2.t().dot(h1);
                        let db2 = dpre2.sum_axis(Axis(0));
                        let dh1 = dpre2.dot(&mlp.w2);
                        let dpre1 = &dh1 * &h1.mapv(|v| 1.0 - v * v);
                        let dw1 = dpre1.t().dot(u1);
                        let db1 = dpre1.sum_axis(Axis(0));
                        du1 += &dpre1.dot(&mlp.w1);
                        let mut g = Vec::new();
                        g.extend(dw1.iter());
                        g.extend(db1.iter());
                        g.extend(dw2.iter());
                        g.extend(db2.iter());
                        g.extend(dw3.iter());
                        g.extend(db3.iter());
                        layer_grads[idx] = g;
                    }
                    _ => unreachable!("cache kind mismatch"),
                }

                let mut du = Array2::zeros(dy.raw_dim());
                du.slice_mut(ndarray::s![.., ..d]).assign(&du1);
                du.slice_mut(ndarray::s![.., d..]).assign(&du2);
                dy = du;
            }
            _ => unreachable!("cache kind mismatch"),
        }
    }

    let mut flat = Vec::new();
    for g in layer_grads {
        flat.extend(g);
    }
    for dw in aux_grads {
        if model.aux_learnable {
            flat.extend(dw.iter());
        } else {
            flat.extend(std::iter::repeat(0.0).take(dw.len()));
        }
    }
    flat
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{CouplingKind, ModelSpec};
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use rand_distr::StandardNormal;

    fn random_model(
        dim: usize,
        blocks: usize,
        coupling: CouplingKind,
        shared: bool,
        clamp: Option<f64>,
        seed: u64,
    ) -> FlowModel {
        let mut model = FlowModel::new(ModelSpec {
            dim,
            blocks,
            coupling,
            aux_points: 8,
            shared_aux: shared,
            gamma: 0.8,
            s_clamp: clamp,
            seed,
        })
        .unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0xabcd);
        let v: Vec<f64> = (0..model.param_vector().len())
            .map(|_| rng.sample::<f64, _>(StandardNormal) * 0.3)
            .collect();
        model.set_param_vector(&v);
        for layer in &mut model.layers {
            if let Layer::ActNorm(a) = layer {
                a.scale.mapv_inplace(|s| 1.0 + 0.4 * s.tanh());
                a.initialized = true;
            }
        }
        model
    }

    fn check_against_fd(model: &FlowModel, batch: &Array2<f64>) -> f64 {
        let trace = forward_trace(model, batch.view()).unwrap();
        let analytic = backward(model, &trace);
        let params = model.param_vector();
        let mut probe = model.clone();
        let fd = crate::diag::finite_diff_grad(
            |p| {
                probe.set_param_vector(p);
                let t = forward_trace(&probe, batch.view()).unwrap();
                trace_nll(&t, probe.dim())
            },
            &params,
            1e-6,
        );
        // frozen aux entries are zeroed in the analytic gradient
        let aux_range = model.aux_param_range();
        let fd: Vec<f64> = fd
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                if !model.aux_learnable && aux_range.contains(&i) {
                    0.0
                } else {
                    v
                }
            })
            .collect();
        crate::diag::max_rel_error(&analytic, &fd, 1e-8)
    }

    fn batch(rows: usize, dim: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, dim), |_| rng.sample(StandardNormal))
    }

    #[test]
    fn kernel_gradient_matches_finite_differences() {
        let model = random_model(4, 2, CouplingKind::Kernel, false, Some(5.0), 1);
        let err = check_against_fd(&model, &batch(16, 4, 2));
        assert!(err < 1e-4, "max rel err {err}");
    }

    #[test]
    fn kernel_gradient_clamp_off() {
        let model = random_model(4, 2, CouplingKind::Kernel, false, None, 3);
        let err = check_against_fd(&model, &batch(16, 4, 4));
        assert!(err < 1e-4, "max rel err {err}");
    }

    #[test]
    fn shared_aux_gradient_accumulates() {
        let model = random_model(4, 2, CouplingKind::Kernel, true, Some(5.0), 5);
        let err = check_against_fd(&model, &batch(16, 4, 6));
        assert!(err < 1e-4, "max rel err {err}");
    }

    #[test]
    fn frozen_aux_gradient_absent() {
        let mut model = random_model(4, 2, CouplingKind::Kernel, true, Some(5.0), 7);
        model.aux_learnable = false;
        let trace = forward_trace(&model, batch(8, 4, 8).view()).unwrap();
        let g = backward(&model, &trace);
        let range = model.aux_param_range();
        assert!(g[range].iter().all(|&v| v == 0.0));
        let err = check_against_fd(&model, &batch(16, 4, 9));
        assert!(err < 1e-4, "max rel err {err}");
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let model = random_model(4, 2, CouplingKind::Mlp { hidden: 6 }, false, Some(5.0), 11);
        let err = check_against_fd(&model, &batch(16, 4, 12));
        assert!(err < 1e-4, "max rel err {err}");
    }

    #[test]
    fn odd_dimension_gradient() {
        let model = random_model(5, 2, CouplingKind::Kernel, false, Some(5.0), 13);
        let err = check_against_fd(&model, &batch(8, 5, 14));
        assert!(err < 1e-4, "max rel err {err}");
    }

    #[test]
    fn trace_nll_consistent_with_log_prob() {
        let model = random_model(4, 3, CouplingKind::Kernel, false, Some(5.0), 15);
        let x = batch(32, 4, 16);
        let trace = forward_trace(&model, x.view()).unwrap();
        let nll = trace_nll(&trace, 4);
        let lp = model.log_prob(x.view()).unwrap();
        let mean_lp = lp.sum() / 32.0;
        approx::assert_relative_eq!(nll, -mean_lp, max_relative = 1e-12);
    }
}
