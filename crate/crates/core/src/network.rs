//! Fully-connected encoder with hand-written backward pass, the clustering
//! head parameters, learnable log-temperatures, and SGD with momentum.

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

/// Initial value of both log-temperatures.
pub const INITIAL_LOG_TAU: f64 = -2.995_732_273_553_991; // ln 0.05

/// Upper clamp on the log-temperatures (τ ≤ 1).
pub const LOG_TAU_CAP: f64 = 0.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// out × in
    pub weight: DenseMatrix,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: DenseMatrix::zeros(output, input),
            bias: vec![0.0; output],
        }
    }

    /// Xavier/Glorot uniform weights, zero bias.
    pub fn xavier<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        Self {
            weight: xavier_matrix(output, input, rng),
            bias: vec![0.0; output],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }
}

fn xavier_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DenseMatrix {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    DenseMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-bound..bound))
}

/// All trainable state. Rectifiers sit between layers, none after the last.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub layers: Vec<Linear>,
    /// K × D, unconstrained; unit-normalized on use.
    pub prototypes: DenseMatrix,
    pub log_tau_a: f64,
    pub log_tau_c: f64,
    pub tau_cap: f64,
    /// Bumped on every parameter update; stamps forward caches.
    pub version: u64,
}

impl ModelState {
    /// Builds `dims[0] → dims[1] → … → dims[last]` with `num_clusters`
    /// prototypes of width `dims[last]`.
    pub fn init<R: Rng + ?Sized>(dims: &[usize], num_clusters: usize, rng: &mut R) -> Result<Self> {
        if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument(format!("bad layer widths {dims:?}")));
        }
        if num_clusters < 2 {
            return Err(Error::InvalidArgument("need at least two clusters".into()));
        }
        let layers = dims
            .windows(2)
            .map(|w| Linear::xavier(w[0], w[1], rng))
            .collect();
        let embed = *dims.last().unwrap();
        Ok(Self {
            layers,
            prototypes: xavier_matrix(num_clusters, embed, rng),
            log_tau_a: INITIAL_LOG_TAU,
            log_tau_c: INITIAL_LOG_TAU,
            tau_cap: LOG_TAU_CAP,
            version: 0,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn embed_dim(&self) -> usize {
        self.layers.last().map_or(0, Linear::out_dim)
    }

    pub fn num_clusters(&self) -> usize {
        self.prototypes.rows()
    }

    pub fn tau_a(&self) -> f64 {
        self.log_tau_a.min(self.tau_cap).exp()
    }

    pub fn tau_c(&self) -> f64 {
        self.log_tau_c.min(self.tau_cap).exp()
    }

    /// `∂τ/∂log τ` under the clamp: τ when free, zero above the cap.
    pub fn tau_a_slope(&self) -> f64 {
        clamp_slope(self.log_tau_a, self.tau_cap)
    }

    pub fn tau_c_slope(&self) -> f64 {
        clamp_slope(self.log_tau_c, self.tau_cap)
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(2 * self.layers.len() + 3);
        for layer in &mut self.layers {
            out.push(layer.weight.as_mut_slice());
            out.push(layer.bias.as_mut_slice());
        }
        out.push(self.prototypes.as_mut_slice());
        out.push(std::slice::from_mut(&mut self.log_tau_a));
        out.push(std::slice::from_mut(&mut self.log_tau_c));
        out
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.is_finite() && l.bias.iter().all(|b| b.is_finite()))
            && self.prototypes.is_finite()
            && self.log_tau_a.is_finite()
            && self.log_tau_c.is_finite()
    }
}

fn clamp_slope(log_tau: f64, cap: f64) -> f64 {
    if log_tau <= cap {
        log_tau.exp()
    } else {
        0.0
    }
}

/// Activations saved by [`forward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer (post-rectifier for all but the first).
    inputs: Vec<DenseMatrix>,
    /// Pre-activation output of each layer.
    preacts: Vec<DenseMatrix>,
    version: u64,
}

/// Encoder forward pass; returns the raw (pre-orthogonalization) embedding.
pub fn forward(state: &ModelState, x: &DenseMatrix) -> Result<(DenseMatrix, ForwardCache)> {
    if x.cols() != state.input_dim() {
        return Err(Error::Dimension(format!(
            "input has {} features, encoder expects {}",
            x.cols(),
            state.input_dim()
        )));
    }
    let last = state.layers.len() - 1;
    let mut inputs = Vec::with_capacity(state.layers.len());
    let mut preacts = Vec::with_capacity(state.layers.len());
    let mut h = x.clone();
    for (idx, layer) in state.layers.iter().enumerate() {
        let mut a = h.matmul_t(&layer.weight)?;
        for i in 0..a.rows() {
            for (v, b) in a.row_mut(i).iter_mut().zip(&layer.bias) {
                *v += b;
            }
        }
        inputs.push(h);
        h = if idx < last {
            a.map(|v| v.max(0.0))
        } else {
            a.clone()
        };
        preacts.push(a);
    }
    Ok((
        h,
        ForwardCache {
            inputs,
            preacts,
            version: state.version,
        },
    ))
}

/// Gradients with the same layout as [`ModelState`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Linear>,
    pub prototypes: DenseMatrix,
    pub log_tau_a: f64,
    pub log_tau_c: f64,
}

impl Gradients {
    pub fn zeros_like(state: &ModelState) -> Self {
        Self {
            layers: state
                .layers
                .iter()
                .map(|l| Linear::zeros(l.in_dim(), l.out_dim()))
                .collect(),
            prototypes: DenseMatrix::zeros(state.prototypes.rows(), state.prototypes.cols()),
            log_tau_a: 0.0,
            log_tau_c: 0.0,
        }
    }

    pub fn accumulate(&mut self, other: &Gradients) -> Result<()> {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.add_assign_scaled(&b.weight, 1.0)?;
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
        self.prototypes.add_assign_scaled(&other.prototypes, 1.0)?;
        self.log_tau_a += other.log_tau_a;
        self.log_tau_c += other.log_tau_c;
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.weight = l.weight.scale(s);
            l.bias.iter_mut().for_each(|b| *b *= s);
        }
        self.prototypes = self.prototypes.scale(s);
        self.log_tau_a *= s;
        self.log_tau_c *= s;
    }

    fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(2 * self.layers.len() + 3);
        for layer in &self.layers {
            out.push(layer.weight.as_slice());
            out.push(&layer.bias);
        }
        out.push(self.prototypes.as_slice());
        out.push(std::slice::from_ref(&self.log_tau_a));
        out.push(std::slice::from_ref(&self.log_tau_c));
        out
    }

    pub fn is_finite(&self) -> bool {
        self.slices()
            .iter()
            .all(|s| s.iter().all(|v| v.is_finite()))
    }
}

/// Reverse pass through the encoder. Fills the layer gradients; prototype and
/// temperature entries are left at zero for the caller to fill.
pub fn backward(
    state: &ModelState,
    cache: &ForwardCache,
    grad_z: &DenseMatrix,
) -> Result<Gradients> {
    if cache.version != state.version {
        return Err(Error::Contract(format!(
            "forward cache from parameter version {} used at version {}",
            cache.version, state.version
        )));
    }
    let last = state.layers.len() - 1;
    if grad_z.shape() != cache.preacts[last].shape() {
        return Err(Error::Dimension(format!(
            "output gradient {:?} vs activations {:?}",
            grad_z.shape(),
            cache.preacts[last].shape()
        )));
    }
    let mut grads = Gradients::zeros_like(state);
    let mut delta = grad_z.clone();
    for idx in (0..state.layers.len()).rev() {
        if idx < last {
            // rectifier, zero subgradient at 0
            let a = &cache.preacts[idx];
            for (d, &v) in delta.as_mut_slice().iter_mut().zip(a.as_slice()) {
                if v <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        grads.layers[idx].weight = delta.t_matmul(&cache.inputs[idx])?;
        grads.layers[idx].bias = delta.col_sums();
        if idx > 0 {
            delta = delta.matmul(&state.layers[idx].weight)?;
        }
    }
    Ok(grads)
}

/// Gradient w.r.t. the encoder input, for checking the chain end to end.
pub fn backward_input(
    state: &ModelState,
    cache: &ForwardCache,
    grad_z: &DenseMatrix,
) -> Result<DenseMatrix> {
    let last = state.layers.len() - 1;
    let mut delta = grad_z.clone();
    for idx in (0..state.layers.len()).rev() {
        if idx < last {
            for (d, &v) in delta
                .as_mut_slice()
                .iter_mut()
                .zip(cache.preacts[idx].as_slice())
            {
                if v <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        delta = delta.matmul(&state.layers[idx].weight)?;
    }
    Ok(delta)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub momentum_buffers: Vec<Vec<f64>>,
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub restart_period: usize,
}

impl OptimizerState {
    pub fn new(
        state: &ModelState,
        base_lr: f64,
        momentum: f64,
        weight_decay: f64,
        restart_period: usize,
    ) -> Result<Self> {
        if !(base_lr > 0.0)
            || !(0.0..1.0).contains(&momentum)
            || !(weight_decay >= 0.0)
            || restart_period == 0
        {
            return Err(Error::InvalidArgument(format!(
                "optimizer lr={base_lr} momentum={momentum} wd={weight_decay} period={restart_period}"
            )));
        }
        let momentum_buffers = Gradients::zeros_like(state)
            .slices()
            .iter()
            .map(|s| vec![0.0; s.len()])
            .collect();
        Ok(Self {
            momentum_buffers,
            base_lr,
            momentum,
            weight_decay,
            restart_period,
        })
    }
}

/// One heavy-ball SGD update: `g' = g + wd·p; buf = μ·buf + g'; p -= lr·buf`.
/// Log-temperatures are not decayed. Refuses the whole step if any gradient
/// is non-finite.
pub fn sgd_step(
    state: &mut ModelState,
    opt: &mut OptimizerState,
    grads: &Gradients,
    lr: f64,
) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradient; update refused".into()));
    }
    let grad_slices = grads.slices();
    let n_params = grad_slices.len();
    let mut params = state.param_slices_mut();
    if params.len() != opt.momentum_buffers.len() {
        return Err(Error::Contract(
            "optimizer buffers do not match the model".into(),
        ));
    }
    for (idx, ((p, g), buf)) in params
        .iter_mut()
        .zip(&grad_slices)
        .zip(opt.momentum_buffers.iter_mut())
        .enumerate()
    {
        if p.len() != g.len() || p.len() != buf.len() {
            return Err(Error::Contract(format!("parameter {idx} shape mismatch")));
        }
        let decay = if idx + 2 >= n_params {
            0.0
        } else {
            opt.weight_decay
        };
        for ((pv, &gv), bv) in p.iter_mut().zip(g.iter()).zip(buf.iter_mut()) {
            let g_total = gv + decay * *pv;
            *bv = opt.momentum * *bv + g_total;
            *pv -= lr * *bv;
        }
    }
    state.version += 1;
    Ok(())
}

/// Cosine decay restarted every `restart_period` epochs.
pub fn cosine_lr(epoch: usize, opt: &OptimizerState) -> f64 {
    let period = opt.restart_period.max(1);
    let t = (epoch % period) as f64;
    opt.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * t / period as f64).cos())
}
