//! Invertible layer stack: ActNorm, fixed permutations, and affine coupling
//! layers whose scale/translation come either from kernel evaluations against
//! auxiliary points or from a small MLP (the baseline).
//!
//! A model is a chain of blocks. Each block is
//! `ActNorm -> random permutation -> coupling -> reversal permutation -> coupling`,
//! mapping data to a standard-normal base with an exact log-det accumulated
//! layer by layer.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{kernel_cross_matrix, KernelParams};

pub const LN_2PI: f64 = 1.8378770664093453;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PermKind {
    Random,
    Reversal,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PermutationLayer {
    pub perm: Vec<usize>,
    pub kind: PermKind,
}

impl PermutationLayer {
    pub fn reversal(dim: usize) -> Self {
        Self {
            perm: (0..dim).rev().collect(),
            kind: PermKind::Reversal,
        }
    }

    /// y_j = u_{perm(j)}
    pub fn forward(&self, u: ArrayView2<f64>) -> Array2<f64> {
        let mut y = Array2::zeros(u.raw_dim());
        for (j, &p) in self.perm.iter().enumerate() {
            y.column_mut(j).assign(&u.column(p));
        }
        y
    }

    pub fn inverse(&self, y: ArrayView2<f64>) -> Array2<f64> {
        let mut u = Array2::zeros(y.raw_dim());
        for (j, &p) in self.perm.iter().enumerate() {
            u.column_mut(p).assign(&y.column(j));
        }
        u
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ActNormLayer {
    pub scale: Array1<f64>,
    pub bias: Array1<f64>,
    pub initialized: bool,
}

impl ActNormLayer {
    pub fn identity(dim: usize) -> Self {
        Self {
            scale: Array1::ones(dim),
            bias: Array1::zeros(dim),
            initialized: true,
        }
    }

    pub fn uninitialized(dim: usize) -> Self {
        Self {
            scale: Array1::ones(dim),
            bias: Array1::zeros(dim),
            initialized: false,
        }
    }

    pub fn forward(&self, u: ArrayView2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
        if !self.initialized {
            return Err(Error::Uninitialized("ActNorm".into()));
        }
        let y = &u * &self.scale + &self.bias;
        let ld: f64 = self.scale.iter().map(|s| s.abs().ln()).sum();
        Ok((y, Array1::from_elem(u.nrows(), ld)))
    }

    pub fn inverse(&self, y: ArrayView2<f64>) -> Result<Array2<f64>> {
        if !self.initialized {
            return Err(Error::Uninitialized("ActNorm".into()));
        }
        Ok((&y - &self.bias) / &self.scale)
    }
}

/// Learnable auxiliary points, N rows in the d-dimensional untransformed-half
/// space. In shared mode a single instance backs every coupling layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuxiliaryPoints {
    pub w: Array2<f64>,
}

/// Soft clamp of the scale logits: `c * tanh(s / c)`.
pub fn clamp_scale(raw: f64, clamp: Option<f64>) -> f64 {
    match clamp {
        Some(c) => c * (raw / c).tanh(),
        None => raw,
    }
}

pub fn clamp_scale_deriv(raw: f64, clamp: Option<f64>) -> f64 {
    match clamp {
        Some(c) => {
            let t = (raw / c).tanh();
            1.0 - t * t
        }
        None => 1.0,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    pub w1: Array2<f64>, // H x d
    pub b1: Array1<f64>,
    pub w2: Array2<f64>, // H x H
    pub b2: Array1<f64>,
    pub w3: Array2<f64>, // 2(D-d) x H
    pub b3: Array1<f64>,
}

impl Mlp {
    /// Two tanh hidden layers; final layer zero so the coupling starts as the
    /// identity.
    pub fn new(d: usize, out: usize, hidden: usize, rng: &mut ChaCha20Rng) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::Config("baseline hidden width must be >= 1".into()));
        }
        let mut init = |rows: usize, cols: usize, fan_in: usize| {
            let sd = 1.0 / (fan_in as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| {
                let g: f64 = rng.sample(StandardNormal);
                g * sd
            })
        };
        Ok(Self {
            w1: init(hidden, d, d),
            b1: Array1::zeros(hidden),
            w2: init(hidden, hidden, hidden),
            b2: Array1::zeros(hidden),
            w3: Array2::zeros((2 * out, hidden)),
            b3: Array1::zeros(2 * out),
        })
    }

    pub fn scalar_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len() + self.w3.len() + self.b3.len()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum CouplingFn {
    Kernel {
        aux_idx: usize,
        a_s: Array2<f64>, // (D-d) x N
        a_t: Array2<f64>,
        kernel: KernelParams,
    },
    Mlp(Mlp),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CouplingLayer {
    pub func: CouplingFn,
    pub d: usize,
    pub s_clamp: Option<f64>,
}

/// Scale logits (pre-clamp) and translations for the batch's untransformed half.
pub(crate) fn coupling_st(
    layer: &CouplingLayer,
    aux: &[AuxiliaryPoints],
    u1: ArrayView2<f64>,
) -> Result<(Array2<f64>, Array2<f64>)> {
    match &layer.func {
        CouplingFn::Kernel {
            aux_idx,
            a_s,
            a_t,
            kernel,
        } => {
            let w = &aux[*aux_idx].w;
            let k = kernel_cross_matrix(u1, w.view(), kernel)?;
            Ok((k.dot(&a_s.t()), k.dot(&a_t.t())))
        }
        CouplingFn::Mlp(mlp) => {
            let h1 = (u1.dot(&mlp.w1.t()) + &mlp.b1).mapv(f64::tanh);
            let h2 = (h1.dot(&mlp.w2.t()) + &mlp.b2).mapv(f64::tanh);
            let out = h2.dot(&mlp.w3.t()) + &mlp.b3;
            let half = out.ncols() / 2;
            let s_raw = out.slice(ndarray::s![.., ..half]).to_owned();
            let t = out.slice(ndarray::s![.., half..]).to_owned();
            Ok((s_raw, t))
        }
    }
}

pub fn coupling_forward(
    layer: &CouplingLayer,
    aux: &[AuxiliaryPoints],
    u: ArrayView2<f64>,
) -> Result<(Array2<f64>, Array1<f64>)> {
    let d = layer.d;
    let u1 = u.slice(ndarray::s![.., ..d]);
    let u2 = u.slice(ndarray::s![.., d..]);
    let (s_raw, t) = coupling_st(layer, aux, u1)?;
    let s = s_raw.mapv(|v| clamp_scale(v, layer.s_clamp));
    let mut y = u.to_owned();
    let mut logdet = Array1::zeros(u.nrows());
    for b in 0..u.nrows() {
        for j in 0..u2.ncols() {
            let yv = s[[b, j]].exp() * u2[[b, j]] + t[[b, j]];
            if !yv.is_finite() {
                return Err(Error::NumericOverflow {
                    context: "coupling_forward".into(),
                    row: b,
                });
            }
            y[[b, d + j]] = yv;
            logdet[b] += s[[b, j]];
        }
    }
    Ok((y, logdet))
}

pub fn coupling_inverse(
    layer: &CouplingLayer,
    aux: &[AuxiliaryPoints],
    y: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    let d = layer.d;
    let y1 = y.slice(ndarray::s![.., ..d]);
    let (s_raw, t) = coupling_st(layer, aux, y1)?;
    let s = s_raw.mapv(|v| clamp_scale(v, layer.s_clamp));
    let mut u = y.to_owned();
    for b in 0..y.nrows() {
        for j in 0..(y.ncols() - d) {
            let uv = (y[[b, d + j]] - t[[b, j]]) * (-s[[b, j]]).exp();
            if !uv.is_finite() {
                return Err(Error::NumericOverflow {
                    context: "coupling_inverse".into(),
                    row: b,
                });
            }
            u[[b, d + j]] = uv;
        }
    }
    Ok(u)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Layer {
    ActNorm(ActNormLayer),
    Perm(PermutationLayer),
    Coupling(CouplingLayer),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CouplingKind {
    Kernel,
    Mlp { hidden: usize },
}

/// Construction-time choices for a flow model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSpec {
    pub dim: usize,
    pub blocks: usize,
    pub coupling: CouplingKind,
    pub aux_points: usize,
    pub shared_aux: bool,
    pub gamma: f64,
    pub s_clamp: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowModel {
    pub spec: ModelSpec,
    pub layers: Vec<Layer>,
    pub aux: Vec<AuxiliaryPoints>,
    /// When false, auxiliary points are excluded from optimiser updates.
    pub aux_learnable: bool,
}

/// Parameter-count breakdown in learnable scalars.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub coupling_weights: usize,
    pub aux_points: usize,
    pub actnorm: usize,
    pub total: usize,
}

fn coverage_ok(perm: &[usize], d: usize) -> bool {
    let dim = perm.len();
    // position of input dim i after the permutation
    let mut pos = vec![0usize; dim];
    for (j, &p) in perm.iter().enumerate() {
        pos[p] = j;
    }
    (0..dim).all(|i| pos[i] >= d || (dim - 1 - pos[i]) >= d)
}

impl FlowModel {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        if spec.dim < 2 {
            return Err(Error::Config("model dimension must be >= 2".into()));
        }
        if spec.blocks == 0 {
            return Err(Error::Config("blocks must be >= 1".into()));
        }
        let dim = spec.dim;
        let d = dim / 2;
        let out = dim - d;
        let kernel = KernelParams::new(spec.gamma)?;
        let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);

        let n_couplings = 2 * spec.blocks;
        let n_aux_sets = if spec.shared_aux { 1 } else { n_couplings };
        let aux = match spec.coupling {
            CouplingKind::Kernel => (0..n_aux_sets)
                .map(|_| AuxiliaryPoints {
                    w: Array2::zeros((spec.aux_points, d)),
                })
                .collect(),
            CouplingKind::Mlp { .. } => Vec::new(),
        };

        let mut layers = Vec::new();
        let mut coupling_idx = 0usize;
        for _ in 0..spec.blocks {
            layers.push(Layer::ActNorm(ActNormLayer::uninitialized(dim)));
            // random permutation, resampled if it would leave a dimension
            // untransformed by both couplings of the block
            let mut perm: Vec<usize> = (0..dim).collect();
            let mut ok = false;
            for _ in 0..100 {
                perm.shuffle(&mut rng);
                if coverage_ok(&perm, d) {
                    ok = true;
                    break;
                }
            }
            if !ok {
                return Err(Error::Config(
                    "could not sample a permutation covering all dimensions".into(),
                ));
            }
            layers.push(Layer::Perm(PermutationLayer {
                perm,
                kind: PermKind::Random,
            }));
            layers.push(Layer::Coupling(Self::make_coupling(
                &spec,
                d,
                out,
                kernel,
                coupling_idx,
                &mut rng,
            )?));
            coupling_idx += 1;
            layers.push(Layer::Perm(PermutationLayer::reversal(dim)));
            layers.push(Layer::Coupling(Self::make_coupling(
                &spec,
                d,
                out,
                kernel,
                coupling_idx,
                &mut rng,
            )?));
            coupling_idx += 1;
        }

        Ok(Self {
            spec,
            layers,
            aux,
            aux_learnable: true,
        })
    }

    fn make_coupling(
        spec: &ModelSpec,
        d: usize,
        out: usize,
        kernel: KernelParams,
        idx: usize,
        rng: &mut ChaCha20Rng,
    ) -> Result<CouplingLayer> {
        let func = match spec.coupling {
            CouplingKind::Kernel => {
                if spec.aux_points == 0 {
                    return Err(Error::Config("aux_points must be >= 1".into()));
                }
                CouplingFn::Kernel {
                    aux_idx: if spec.shared_aux { 0 } else { idx },
                    a_s: Array2::zeros((out, spec.aux_points)),
                    a_t: Array2::zeros((out, spec.aux_points)),
                    kernel,
                }
            }
            CouplingKind::Mlp { hidden } => CouplingFn::Mlp(Mlp::new(d, out, hidden, rng)?),
        };
        Ok(CouplingLayer {
            func,
            d,
            s_clamp: spec.s_clamp,
        })
    }

    /// A model with no layers: z = x exactly, logdet = 0.
    pub fn identity(dim: usize) -> Self {
        Self {
            spec: ModelSpec {
                dim,
                blocks: 0,
                coupling: CouplingKind::Kernel,
                aux_points: 1,
                shared_aux: false,
                gamma: 1.0,
                s_clamp: None,
                seed: 0,
            },
            layers: Vec::new(),
            aux: Vec::new(),
            aux_learnable: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    /// Marks every ActNorm as the initialized identity. Handy for tests and
    /// for models evaluated without data-dependent init.
    pub fn init_identity_actnorm(&mut self) {
        for layer in &mut self.layers {
            if let Layer::ActNorm(a) = layer {
                *a = ActNormLayer::identity(self.spec.dim);
            }
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
        if x.ncols() != self.spec.dim {
            return Err(Error::DimensionMismatch(x.ncols(), self.spec.dim));
        }
        let mut h = x.to_owned();
        let mut logdet = Array1::zeros(x.nrows());
        for layer in &self.layers {
            match layer {
                Layer::ActNorm(a) => {
                    let (y, ld) = a.forward(h.view())?;
                    h = y;
                    logdet += &ld;
                }
                Layer::Perm(p) => h = p.forward(h.view()),
                Layer::Coupling(c) => {
                    let (y, ld) = coupling_forward(c, &self.aux, h.view())?;
                    h = y;
                    logdet += &ld;
                }
            }
        }
        Ok((h, logdet))
    }

    pub fn inverse(&self, z: ArrayView2<f64>) -> Result<Array2<f64>> {
        if z.ncols() != self.spec.dim {
            return Err(Error::DimensionMismatch(z.ncols(), self.spec.dim));
        }
        let mut h = z.to_owned();
        for layer in self.layers.iter().rev() {
            match layer {
                Layer::ActNorm(a) => h = a.inverse(h.view())?,
                Layer::Perm(p) => h = p.inverse(h.view()),
                Layer::Coupling(c) => h = coupling_inverse(c, &self.aux, h.view())?,
            }
        }
        Ok(h)
    }

    /// Log-density in nats under the standard-normal base.
    pub fn log_prob(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        let (z, logdet) = self.forward(x)?;
        let d = self.spec.dim as f64;
        let base = z.map_axis(Axis(1), |row| {
            -0.5 * d * LN_2PI - 0.5 * row.iter().map(|v| v * v).sum::<f64>()
        });
        Ok(base + logdet)
    }

    /// Draws `count` base samples with the given seed and maps them through
    /// the inverse flow. Deterministic given the seed.
    pub fn sample(&self, seed: u64, count: usize) -> Result<Array2<f64>> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let z = Array2::from_shape_fn((count, self.spec.dim), |_| rng.sample(StandardNormal));
        if count == 0 {
            return Ok(z);
        }
        self.inverse(z.view())
    }

    pub fn param_count(&self) -> ParamCount {
        let mut coupling_weights = 0;
        let mut actnorm = 0;
        for layer in &self.layers {
            match layer {
                Layer::ActNorm(a) => actnorm += a.scale.len() + a.bias.len(),
                Layer::Coupling(c) => match &c.func {
                    CouplingFn::Kernel { a_s, a_t, .. } => {
                        coupling_weights += a_s.len() + a_t.len()
                    }
                    CouplingFn::Mlp(m) => coupling_weights += m.scalar_count(),
                },
                Layer::Perm(_) => {}
            }
        }
        let aux_points: usize = self.aux.iter().map(|a| a.w.len()).sum();
        ParamCount {
            coupling_weights,
            aux_points,
            actnorm,
            total: coupling_weights + aux_points + actnorm,
        }
    }

    /// Flattened learnable parameters, in a fixed layer order with auxiliary
    /// point sets appended at the end.
    pub fn param_vector(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::ActNorm(a) => {
                    v.extend(a.scale.iter());
                    v.extend(a.bias.iter());
                }
                Layer::Coupling(c) => match &c.func {
                    CouplingFn::Kernel { a_s, a_t, .. } => {
                        v.extend(a_s.iter());
                        v.extend(a_t.iter());
                    }
                    CouplingFn::Mlp(m) => {
                        v.extend(m.w1.iter());
                        v.extend(m.b1.iter());
                        v.extend(m.w2.iter());
                        v.extend(m.b2.iter());
                        v.extend(m.w3.iter());
                        v.extend(m.b3.iter());
                    }
                },
                Layer::Perm(_) => {}
            }
        }
        for a in &self.aux {
            v.extend(a.w.iter());
        }
        v
    }

    pub fn set_param_vector(&mut self, v: &[f64]) {
        let mut it = v.iter();
        let mut take = |arr: &mut [f64]| {
            for x in arr {
                *x = *it.next().expect("parameter vector too short");
            }
        };
        for layer in &mut self.layers {
            match layer {
                Layer::ActNorm(a) => {
                    take(a.scale.as_slice_mut().unwrap());
                    take(a.bias.as_slice_mut().unwrap());
                }
                Layer::Coupling(c) => match &mut c.func {
                    CouplingFn::Kernel { a_s, a_t, .. } => {
                        take(a_s.as_slice_mut().unwrap());
                        take(a_t.as_slice_mut().unwrap());
                    }
                    CouplingFn::Mlp(m) => {
                        take(m.w1.as_slice_mut().unwrap());
                        take(m.b1.as_slice_mut().unwrap());
                        take(m.w2.as_slice_mut().unwrap());
                        take(m.b2.as_slice_mut().unwrap());
                        take(m.w3.as_slice_mut().unwrap());
                        take(m.b3.as_slice_mut().unwrap());
                    }
                },
                Layer::Perm(_) => {}
            }
        }
        for a in &mut self.aux {
            take(a.w.as_slice_mut().unwrap());
        }
        assert!(it.next().is_none(), "parameter vector too long");
    }

    /// Index range of the auxiliary-point block within the parameter vector.
    pub fn aux_param_range(&self) -> std::ops::Range<usize> {
        let total = self.param_vector().len();
        let aux: usize = self.aux.iter().map(|a| a.w.len()).sum();
        (total - aux)..total
    }
}
