//! Maximum-likelihood training: objective, exact gradients, Adam with StepLR
//! or cosine-annealed learning rates, data-dependent initialisation of
//! ActNorm and auxiliary points, and a coarse-to-fine gamma search.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::flow::{CouplingFn, CouplingKind, FlowModel, Layer, ModelSpec};
use crate::grad::{backward, forward_trace, trace_nll};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Schedule {
    StepLr { period: usize, factor: f64 },
    Cosine { t: usize },
}

/// Learning rate at a given step.
pub fn lr_at(schedule: &Schedule, step: usize, base_lr: f64) -> f64 {
    match schedule {
        Schedule::StepLr { period, factor } => base_lr * factor.powi((step / period) as i32),
        Schedule::Cosine { t } => {
            if step >= *t {
                0.0
            } else {
                base_lr * (1.0 + (std::f64::consts::PI * step as f64 / *t as f64).cos()) / 2.0
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub blocks: usize,
    pub aux_points: usize,
    pub shared_aux: bool,
    pub gamma: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub schedule: Schedule,
    pub seed: u64,
    pub s_clamp: Option<f64>,
    pub deterministic: bool,
    /// Validation NLL is recorded every this many iterations; 0 disables it.
    pub val_cadence: usize,
    pub learn_aux: bool,
    pub coupling: CouplingKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            blocks: 5,
            aux_points: 50,
            shared_aux: false,
            gamma: 1.0,
            batch_size: 200,
            iterations: 10_000,
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            schedule: Schedule::Cosine { t: 10_000 },
            seed: 0,
            s_clamp: Some(5.0),
            deterministic: true,
            val_cadence: 200,
            learn_aux: true,
            coupling: CouplingKind::Kernel,
        }
    }
}

impl TrainConfig {
    /// Defaults for the tabular runs: 5 blocks with 100 auxiliary points for
    /// the kernel coupling, 128-wide hidden layers for the MLP baseline.
    pub fn tabular_default() -> Self {
        Self {
            aux_points: 100,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.iterations < 1 {
            return Err(Error::Config("iterations must be >= 1".into()));
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return Err(Error::Config("beta1, beta2 must lie in (0, 1)".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("lr must be positive".into()));
        }
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::Config("gamma must be positive and finite".into()));
        }
        if let CouplingKind::Mlp { hidden } = self.coupling {
            if hidden == 0 {
                return Err(Error::Config("baseline hidden width must be >= 1".into()));
            }
        }
        if self.coupling == CouplingKind::Kernel && self.aux_points == 0 {
            return Err(Error::Config("aux_points must be >= 1".into()));
        }
        Ok(())
    }

    pub fn build_model(&self, dim: usize) -> Result<FlowModel> {
        self.validate()?;
        let mut model = FlowModel::new(ModelSpec {
            dim,
            blocks: self.blocks,
            coupling: self.coupling,
            aux_points: self.aux_points,
            shared_aux: self.shared_aux,
            gamma: self.gamma,
            s_clamp: self.s_clamp,
            seed: self.seed,
        })?;
        model.aux_learnable = self.learn_aux;
        Ok(model)
    }
}

/// Mean NLL of a batch, in nats.
pub fn objective(model: &FlowModel, batch: ArrayView2<f64>) -> Result<f64> {
    let trace = forward_trace(model, batch)?;
    let nll = trace_nll(&trace, model.dim());
    if !nll.is_finite() {
        return Err(Error::NonFiniteInput("objective".into()));
    }
    Ok(nll)
}

/// Gradient of the mean NLL in the model's parameter-vector order.
pub fn gradient(model: &FlowModel, batch: ArrayView2<f64>) -> Result<Vec<f64>> {
    let trace = forward_trace(model, batch)?;
    let g = backward(model, &trace);
    if let Some(i) = g.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput(format!(
            "gradient entry {i} is non-finite"
        )));
    }
    Ok(g)
}

/// Adam first/second-moment accumulators; shapes mirror the parameter vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: usize,
}

impl OptimizerState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }
}

/// Standard bias-corrected Adam update, in place.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut OptimizerState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    for i in 0..params.len() {
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * grads[i];
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * grads[i] * grads[i];
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Initialise ActNorm layers and auxiliary points from one batch, walking the
/// stack in order: each ActNorm whitens the current activations; each kernel
/// coupling sets its auxiliary points to a random subset of the batch's
/// untransformed half (once, from the first coupling, in shared mode).
/// Couplings start as the identity, so activations pass through unchanged.
pub fn data_dependent_init(model: &mut FlowModel, batch: ArrayView2<f64>, seed: u64) -> Result<()> {
    if batch.nrows() == 0 {
        return Err(Error::Argument("init batch is empty".into()));
    }
    if batch.nrows() < 2 {
        return Err(Error::Argument("init batch needs at least 2 rows".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut h = batch.to_owned();
    let mut shared_set = false;
    let shared_aux = model.spec.shared_aux;
    let FlowModel { layers, aux, .. } = model;
    for layer in layers.iter_mut() {
        match layer {
            Layer::ActNorm(a) => {
                let n = h.nrows() as f64;
                let mean = h.mean_axis(Axis(0)).unwrap();
                for j in 0..h.ncols() {
                    let var = h.column(j).iter().map(|v| (v - mean[j]).powi(2)).sum::<f64>() / n;
                    let sd = var.sqrt().max(1e-6);
                    a.scale[j] = 1.0 / sd;
                    a.bias[j] = -mean[j] / sd;
                }
                a.initialized = true;
                let (y, _) = a.forward(h.view())?;
                h = y;
            }
            Layer::Perm(p) => h = p.forward(h.view()),
            Layer::Coupling(c) => {
                let d = c.d;
                if let CouplingFn::Kernel { aux_idx, .. } = &c.func {
                    let aux_idx = *aux_idx;
                    if !shared_aux || !shared_set {
                        let u1 = h.slice(ndarray::s![.., ..d]);
                        let n_aux = aux[aux_idx].w.nrows();
                        let rows = sample_rows(batch.nrows(), n_aux, &mut rng);
                        for (r, &src) in rows.iter().enumerate() {
                            aux[aux_idx].w.row_mut(r).assign(&u1.row(src));
                        }
                        shared_set = true;
                    }
                }
                // couplings are identity at init (A = 0, zero final MLP layer)
            }
        }
    }
    Ok(())
}

fn sample_rows(batch: usize, n: usize, rng: &mut ChaCha20Rng) -> Vec<usize> {
    if batch >= n {
        let mut idx: Vec<usize> = (0..batch).collect();
        idx.shuffle(rng);
        idx.truncate(n);
        idx
    } else {
        (0..n).map(|_| rng.gen_range(0..batch)).collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurveRecord {
    pub iteration: usize,
    pub split: String,
    pub nll: f64,
    pub lr: f64,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub curve: Vec<CurveRecord>,
    pub best_val_nll: Option<f64>,
    pub final_train_nll: f64,
    pub init_nll: f64,
}

/// Runs data-dependent init then minibatch Adam. Minibatches come from
/// per-epoch shuffles with the run seed; records a train entry per iteration
/// and a validation entry every `val_cadence` iterations. The model is left
/// at the best-validation parameters (or the final ones when validation is
/// disabled). On divergence the model keeps the last finite parameters and an
/// error is returned.
pub fn train(model: &mut FlowModel, dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let start = Instant::now();
    let n = dataset.train.nrows();
    let bs = config.batch_size.min(n);
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed.wrapping_add(0x5eed));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);

    let init_batch = take_rows(&dataset.train, &order[..bs.max(2).min(n)]);
    data_dependent_init(model, init_batch.view(), config.seed)?;
    let init_nll = objective(model, init_batch.view())?;

    let mut params = model.param_vector();
    let mut state = OptimizerState::new(params.len());
    let mut curve = Vec::new();
    let mut best_val: Option<f64> = None;
    let mut best_params = params.clone();
    let mut cursor = 0usize;
    let mut last_train = init_nll;

    let elapsed = |start: &Instant, det: bool| {
        if det {
            0.0
        } else {
            start.elapsed().as_secs_f64()
        }
    };

    for iter in 0..config.iterations {
        if cursor + bs > n {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let batch = take_rows(&dataset.train, &order[cursor..cursor + bs]);
        cursor += bs;

        let lr = lr_at(&config.schedule, iter, config.lr);
        model.set_param_vector(&params);
        let trace = forward_trace(model, batch.view()).map_err(|e| Error::Diverged {
            iteration: iter,
            msg: e.to_string(),
        })?;
        let nll = trace_nll(&trace, model.dim());
        if !nll.is_finite() || nll > init_nll + 1e3 {
            model.set_param_vector(&best_params);
            return Err(Error::Diverged {
                iteration: iter,
                msg: format!("loss {nll} (init {init_nll})"),
            });
        }
        last_train = nll;
        curve.push(CurveRecord {
            iteration: iter,
            split: "train".into(),
            nll,
            lr,
            elapsed_s: elapsed(&start, config.deterministic),
        });

        let grads = backward(model, &trace);
        adam_step(
            &mut params,
            &grads,
            &mut state,
            lr,
            config.beta1,
            config.beta2,
            config.eps,
        );

        if config.val_cadence > 0
            && dataset.val.nrows() > 0
            && ((iter + 1) % config.val_cadence == 0 || iter + 1 == config.iterations)
        {
            model.set_param_vector(&params);
            let val_nll = objective(model, dataset.val.view())?;
            curve.push(CurveRecord {
                iteration: iter,
                split: "val".into(),
                nll: val_nll,
                lr,
                elapsed_s: elapsed(&start, config.deterministic),
            });
            if best_val.map_or(true, |b| val_nll < b) {
                best_val = Some(val_nll);
                best_params = params.clone();
            }
        }
    }

    if best_val.is_some() {
        model.set_param_vector(&best_params);
    } else {
        model.set_param_vector(&params);
    }
    Ok(TrainOutcome {
        curve,
        best_val_nll: best_val,
        final_train_nll: last_train,
        init_nll,
    })
}

fn take_rows(x: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((idx.len(), x.ncols()));
    for (r, &i) in idx.iter().enumerate() {
        out.row_mut(r).assign(&x.row(i));
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GammaTrial {
    pub gamma: f64,
    pub val_nll: Option<f64>,
    pub phase: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GammaSearchResult {
    pub best_gamma: f64,
    pub trials: Vec<GammaTrial>,
}

/// Coarse-to-fine gamma search: trains one short-budget model per coarse grid
/// value, then samples `refine_count` gammas log-uniformly around the best
/// coarse value and returns the argmin of validation NLL. Ties within 1e-9
/// break toward the smaller gamma.
pub fn gamma_search(
    dataset: &Dataset,
    config: &TrainConfig,
    coarse_grid: &[f64],
    refine_count: usize,
) -> Result<GammaSearchResult> {
    if coarse_grid.is_empty() {
        return Err(Error::Argument("coarse grid is empty".into()));
    }
    let mut trials = Vec::new();
    let run = |gamma: f64, phase: &str, trials: &mut Vec<GammaTrial>| -> Option<f64> {
        let cfg = TrainConfig {
            gamma,
            ..config.clone()
        };
        let val = cfg
            .build_model(dataset.dim)
            .and_then(|mut m| {
                let out = train(&mut m, dataset, &cfg)?;
                out.best_val_nll
                    .ok_or_else(|| Error::Argument("gamma search requires a validation split".into()))
            })
            .ok();
        trials.push(GammaTrial {
            gamma,
            val_nll: val,
            phase: phase.into(),
        });
        val
    };

    let mut best: Option<(f64, f64)> = None; // (val_nll, gamma)
    let better = |val: Option<f64>, gamma: f64, best: &mut Option<(f64, f64)>| {
        if let Some(v) = val {
            let replace = match best {
                None => true,
                Some((bv, bg)) => v < *bv - 1e-9 || ((v - *bv).abs() <= 1e-9 && gamma < *bg),
            };
            if replace {
                *best = Some((v, gamma));
            }
        }
    };

    for &g in coarse_grid {
        let val = run(g, "coarse", &mut trials);
        better(val, g, &mut best);
    }
    let (_, coarse_best) = best.ok_or_else(|| {
        Error::SearchFailed(format!("all {} coarse trials diverged", coarse_grid.len()))
    })?;

    if coarse_grid.len() > 1 && refine_count > 0 {
        // log-scale interval spanning the neighbouring grid ratio
        let mut sorted = coarse_grid.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let ratio = if sorted.len() > 1 {
            (sorted[1] / sorted[0]).max(1.0 + 1e-6)
        } else {
            2.0
        };
        let lo = (coarse_best / ratio).ln();
        let hi = (coarse_best * ratio).ln();
        let mut rng = ChaCha20Rng::seed_from_u64(config.seed.wrapping_add(0x6a));
        for _ in 0..refine_count {
            let g = rng.gen_range(lo..hi).exp();
            let val = run(g, "refine", &mut trials);
            better(val, g, &mut best);
        }
    }

    let (_, best_gamma) = best.unwrap();
    Ok(GammaSearchResult { best_gamma, trials })
}
