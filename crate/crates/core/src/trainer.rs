//! The bootstrap training loop: two augmented views, Sinkhorn targets on
//! detached logits, swapped-prediction cross entropies, and SGD.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::cluster_head::{assignment_logits, PrototypeBank};
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::network::{
    self, cosine_lr, forward, sgd_step, ForwardCache, Gradients, ModelState, OptimizerState,
};
use crate::spectral::{
    affinity_loss, cross_affinity, drop_diagonal, gram_backward, orthogonal_penalty, orthogonalize,
    restore_diagonal, row_normalize, scale_normalize, softmax_cross_entropy, straight_through,
    OrthMode, RowNormalized, ScaleNormalized,
};
use crate::transport::sinkhorn_algorithm1;

/// How embeddings are orthogonalized during training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OrthSetting {
    Mode(OrthMode),
    /// No re-parameterization; `ρ‖ZᵀZ − I‖²` is added to the loss instead.
    Penalty(f64),
}

impl fmt::Display for OrthSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OrthSetting::Mode(m) => write!(f, "{m}"),
            OrthSetting::Penalty(rho) => write!(f, "penalty({rho})"),
        }
    }
}

impl FromStr for OrthSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(inner) = s.strip_prefix("penalty(").and_then(|r| r.strip_suffix(')')) {
            let rho: f64 = inner
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad penalty weight in {s:?}")))?;
            if !(rho >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "penalty weight must be >= 0, got {rho}"
                )));
            }
            return Ok(OrthSetting::Penalty(rho));
        }
        Ok(OrthSetting::Mode(s.parse()?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Augmentation {
    /// Gaussian noise std as a fraction of each feature's std.
    pub noise_sigma: f64,
    pub feature_dropout_prob: f64,
    /// Per-sample scale drawn from `1 ± scale_jitter`.
    pub scale_jitter: f64,
}

impl Default for Augmentation {
    fn default() -> Self {
        Self {
            noise_sigma: 0.1,
            feature_dropout_prob: 0.1,
            scale_jitter: 0.1,
        }
    }
}

impl Augmentation {
    pub const NONE: Augmentation = Augmentation {
        noise_sigma: 0.0,
        feature_dropout_prob: 0.0,
        scale_jitter: 0.0,
    };
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub eta: f64,
    pub sinkhorn_iters: usize,
    pub lambda: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    pub num_clusters: usize,
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub restart_period: usize,
    pub augmentation: Augmentation,
    pub seed: u64,
    pub orth: OrthSetting,
    /// Keep self-affinities in the affinity target (trivial-solution ablation).
    pub keep_diagonal: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let batch_size = 128;
        Self {
            eta: crate::transport::DEFAULT_ETA,
            sinkhorn_iters: crate::transport::DEFAULT_ITERATIONS,
            lambda: 1.0,
            batch_size,
            epochs: 200,
            hidden: vec![64, 64],
            embed_dim: 16,
            num_clusters: 2,
            base_lr: 0.04 * batch_size as f64 / 256.0,
            momentum: 0.9,
            weight_decay: 0.0005,
            restart_period: 200,
            augmentation: Augmentation::default(),
            seed: 0,
            orth: OrthSetting::Mode(OrthMode::Procrustes),
            keep_diagonal: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.batch_size < 2 {
            return bad(format!("batch_size must be >= 2, got {}", self.batch_size));
        }
        if self.embed_dim == 0 || self.embed_dim >= self.batch_size {
            return bad(format!(
                "embed_dim must be in [1, batch_size), got {} with batch_size {}",
                self.embed_dim, self.batch_size
            ));
        }
        if self.num_clusters < 2 {
            return bad(format!(
                "num_clusters must be >= 2, got {}",
                self.num_clusters
            ));
        }
        if !(self.eta > 0.0) || self.sinkhorn_iters == 0 {
            return bad("eta and sinkhorn_iters must be positive".into());
        }
        if !(self.lambda >= 0.0) {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(self.base_lr > 0.0)
            || !(0.0..1.0).contains(&self.momentum)
            || !(self.weight_decay >= 0.0)
        {
            return bad("invalid optimizer settings".into());
        }
        if self.restart_period == 0 {
            return bad("restart_period must be positive".into());
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return bad("hidden widths must be positive".into());
        }
        let a = &self.augmentation;
        if !(a.noise_sigma >= 0.0)
            || !(0.0..1.0).contains(&a.feature_dropout_prob)
            || !(0.0..1.0).contains(&a.scale_jitter)
        {
            return bad("invalid augmentation strengths".into());
        }
        Ok(())
    }

    pub fn layer_dims(&self, input_dim: usize) -> Vec<usize> {
        let mut dims = vec![input_dim];
        dims.extend(&self.hidden);
        dims.push(self.embed_dim);
        dims
    }
}

/// Random view of a batch: `(x ⊙ mask + noise) · (1 + jitter)`.
pub fn augment<R: Rng + ?Sized>(
    x: &DenseMatrix,
    aug: &Augmentation,
    feature_std: &[f64],
    rng: &mut R,
) -> DenseMatrix {
    let mut out = x.clone();
    let d = x.cols();
    for i in 0..x.rows() {
        let jitter = if aug.scale_jitter > 0.0 {
            1.0 + rng.gen_range(-aug.scale_jitter..aug.scale_jitter)
        } else {
            1.0
        };
        let row = out.row_mut(i);
        for j in 0..d {
            let keep =
                aug.feature_dropout_prob == 0.0 || rng.gen::<f64>() >= aug.feature_dropout_prob;
            let mut v = if keep { row[j] } else { 0.0 };
            if aug.noise_sigma > 0.0 {
                let n: f64 = rng.sample(StandardNormal);
                v += n * aug.noise_sigma * feature_std.get(j).copied().unwrap_or(1.0);
            }
            row[j] = v * jitter;
        }
    }
    out
}

/// Per-feature standard deviation (population).
pub fn feature_std(x: &DenseMatrix) -> Vec<f64> {
    let n = x.rows().max(1) as f64;
    let means: Vec<f64> = x.col_sums().iter().map(|s| s / n).collect();
    let mut var = vec![0.0; x.cols()];
    for r in x.row_iter() {
        for ((v, &x), m) in var.iter_mut().zip(r).zip(&means) {
            *v += (x - m) * (x - m);
        }
    }
    var.into_iter().map(|v| (v / n).sqrt()).collect()
}

/// Detached quantities of one view: its Sinkhorn targets and the
/// straight-through offset applied to its embedding.
#[derive(Debug, Clone)]
pub struct FrozenView {
    pub affinity_target: DenseMatrix,
    pub assignment_target: DenseMatrix,
    pub offset: Option<DenseMatrix>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepLosses {
    /// Sum of both swapped affinity cross entropies, per sample.
    pub affinity: f64,
    /// Sum of both swapped clustering cross entropies, per sample.
    pub clustering: f64,
    /// `affinity + λ·clustering (+ orthogonal penalty)`.
    pub total: f64,
    pub penalty: f64,
    /// Mean over views of `‖Z − Z_new‖_F`.
    pub inconsistency: f64,
    /// Mean over views of the off-diagonal mass of the affinity target.
    pub intensity: f64,
}

struct ViewPass {
    cache: ForwardCache,
    z_raw: DenseMatrix,
    /// Rescaled output for the straight-through path; `None` when the raw
    /// output is used directly.
    scaled: Option<ScaleNormalized>,
    normed: RowNormalized,
    affinity_logits: DenseMatrix,
    assignment_logits: DenseMatrix,
    offset: Option<DenseMatrix>,
    inconsistency: f64,
}

fn view_pass(
    model: &ModelState,
    bank: &PrototypeBank,
    x: &DenseMatrix,
    cfg: &TrainConfig,
    frozen_offset: Option<&DenseMatrix>,
) -> Result<ViewPass> {
    let (z_raw, cache) = forward(model, x)?;
    let scaled = scale_normalize(&z_raw);
    let (z_used, offset, inconsistency, scaled) = match cfg.orth {
        OrthSetting::Mode(OrthMode::None) | OrthSetting::Penalty(_) => {
            let diag = orthogonalize(&scaled.value, OrthMode::Procrustes)?.inconsistency;
            (z_raw.clone(), None, diag, None)
        }
        OrthSetting::Mode(mode) => match frozen_offset {
            Some(off) => (
                scaled.value.add(off)?,
                Some(off.clone()),
                off.frobenius_norm(),
                Some(scaled),
            ),
            None => {
                let orth = orthogonalize(&scaled.value, mode)?;
                let st = straight_through(&scaled.value, &orth.z_new)?;
                (st.value, Some(st.offset), orth.inconsistency, Some(scaled))
            }
        },
    };
    let normed = row_normalize(&z_used);
    let affinity_logits = if cfg.keep_diagonal {
        normed.value.matmul_t(&normed.value)?
    } else {
        cross_affinity(&normed.value)?
    };
    let assignment_logits = assignment_logits(&normed.value, bank)?;
    Ok(ViewPass {
        cache,
        z_raw,
        scaled,
        normed,
        affinity_logits,
        assignment_logits,
        offset,
        inconsistency,
    })
}

fn off_diagonal_mass(target: &DenseMatrix, keep_diagonal: bool) -> f64 {
    if keep_diagonal {
        target.sum() - target.trace()
    } else {
        target.sum()
    }
}

/// Swapped-prediction loss of a pair of views and its gradient w.r.t. every
/// parameter.
///
/// When `frozen` is given, targets and straight-through offsets are taken
/// from it instead of being recomputed; this makes the returned gradient the
/// exact derivative of the returned loss, which is what a finite-difference
/// probe needs. The frozen quantities actually used are returned either way.
pub fn objective(
    model: &ModelState,
    views: [&DenseMatrix; 2],
    cfg: &TrainConfig,
    frozen: Option<&[FrozenView; 2]>,
) -> Result<(StepLosses, Gradients, [FrozenView; 2])> {
    let bank = PrototypeBank::from_raw(&model.prototypes)?;
    let b = views[0].rows();
    if views[1].rows() != b {
        return Err(Error::Dimension("views differ in batch size".into()));
    }
    let passes = [
        view_pass(
            model,
            &bank,
            views[0],
            cfg,
            frozen.and_then(|f| f[0].offset.as_ref()),
        )?,
        view_pass(
            model,
            &bank,
            views[1],
            cfg,
            frozen.and_then(|f| f[1].offset.as_ref()),
        )?,
    ];

    let frozen_views: [FrozenView; 2] = match frozen {
        Some(f) => f.clone(),
        None => {
            let mk = |p: &ViewPass| -> Result<FrozenView> {
                Ok(FrozenView {
                    affinity_target: sinkhorn_algorithm1(
                        &p.affinity_logits,
                        cfg.eta,
                        cfg.sinkhorn_iters,
                    )?
                    .plan,
                    assignment_target: sinkhorn_algorithm1(
                        &p.assignment_logits,
                        cfg.eta,
                        cfg.sinkhorn_iters,
                    )?
                    .plan,
                    offset: p.offset.clone(),
                })
            };
            [mk(&passes[0])?, mk(&passes[1])?]
        }
    };

    let tau_a = model.tau_a();
    let tau_c = model.tau_c();
    let scale = 1.0 / b as f64;
    let mut losses = StepLosses::default();
    let mut grads = Gradients::zeros_like(model);
    let mut grad_protos = DenseMatrix::zeros(bank.count(), bank.dim());

    for v in 0..2 {
        let u = 1 - v;
        let pass = &passes[v];
        let la = affinity_loss(
            &frozen_views[u].affinity_target,
            &pass.affinity_logits,
            tau_a,
        )?;
        let lc = softmax_cross_entropy(
            &frozen_views[u].assignment_target,
            &pass.assignment_logits,
            tau_c,
        )?;
        losses.affinity += la.loss * scale;
        losses.clustering += lc.loss * scale;
        losses.inconsistency += 0.5 * pass.inconsistency;
        losses.intensity +=
            0.5 * off_diagonal_mass(&frozen_views[v].affinity_target, cfg.keep_diagonal);

        grads.log_tau_a += scale * la.grad_tau * model.tau_a_slope();
        grads.log_tau_c += scale * cfg.lambda * lc.grad_tau * model.tau_c_slope();

        let grad_aff = la.grad_logits.scale(scale);
        let grad_assign = lc.grad_logits.scale(scale * cfg.lambda);
        let grad_gram = if cfg.keep_diagonal {
            grad_aff
        } else {
            restore_diagonal(&grad_aff)
        };
        let z = &pass.normed.value;
        let mut grad_z = gram_backward(&grad_gram, z)?;
        grad_z.add_assign_scaled(&grad_assign.matmul(bank.prototypes())?, 1.0)?;
        grad_protos.add_assign_scaled(&grad_assign.t_matmul(z)?, 1.0)?;

        // straight-through: the orthogonalization offset passes gradients unchanged
        let grad_used = pass.normed.backward(&grad_z);
        let mut grad_raw = match &pass.scaled {
            Some(sc) => sc.backward(&grad_used),
            None => grad_used,
        };
        if let OrthSetting::Penalty(rho) = cfg.orth {
            // on the rescaled output, like the straight-through path
            let sc = scale_normalize(&pass.z_raw);
            let (pen, g) = orthogonal_penalty(&sc.value, rho);
            losses.penalty += pen;
            grad_raw.add_assign_scaled(&sc.backward(&g), 1.0)?;
        }
        grads.accumulate(&network::backward(model, &pass.cache, &grad_raw)?)?;
    }
    grads.prototypes = bank.backward(&grad_protos);
    losses.total = losses.affinity + cfg.lambda * losses.clustering + losses.penalty;
    Ok((losses, grads, frozen_views))
}

/// Augments `x` twice, evaluates the swapped-prediction objective and takes
/// one SGD step at `lr`.
pub fn train_step(
    x: &DenseMatrix,
    model: &mut ModelState,
    opt: &mut OptimizerState,
    cfg: &TrainConfig,
    feature_std: &[f64],
    rng: &mut ChaCha8Rng,
    lr: f64,
) -> Result<StepLosses> {
    if x.rows() < 2 {
        return Err(Error::InvalidArgument(
            "batch needs at least two samples".into(),
        ));
    }
    let x1 = augment(x, &cfg.augmentation, feature_std, rng);
    let x2 = augment(x, &cfg.augmentation, feature_std, rng);
    if is_degenerate(&x1) || is_degenerate(&x2) {
        log::warn!("degenerate batch: all augmented rows identical");
    }
    let (losses, grads, _) = objective(model, [&x1, &x2], cfg, None)?;
    if !losses.total.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    sgd_step(model, opt, &grads, lr)?;
    Ok(losses)
}

fn is_degenerate(x: &DenseMatrix) -> bool {
    let first = x.row(0);
    x.row_iter().all(|r| r == first)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub affinity_loss: f64,
    pub clustering_loss: f64,
    pub total_loss: f64,
    pub tau_a: f64,
    pub tau_c: f64,
    pub inconsistency: f64,
    pub intensity: f64,
    pub lr: f64,
}

impl EpochRecord {
    /// One `key=value` line; fixed key order.
    pub fn to_line(&self) -> String {
        format!(
            "epoch={} affinity_loss={:e} clustering_loss={:e} total_loss={:e} tau_a={:e} tau_c={:e} inconsistency={:e} intensity={:e} lr={:e}",
            self.epoch,
            self.affinity_loss,
            self.clustering_loss,
            self.total_loss,
            self.tau_a,
            self.tau_c,
            self.inconsistency,
            self.intensity,
            self.lr
        )
    }

    /// Inverse of [`EpochRecord::to_line`].
    pub fn from_line(line: &str) -> Result<Self> {
        let mut fields = std::collections::HashMap::new();
        for tok in line.split_whitespace() {
            let (k, v) = tok.split_once('=').ok_or_else(|| {
                Error::InvalidArgument(format!("malformed history field {tok:?}"))
            })?;
            fields.insert(k, v);
        }
        let num = |k: &str| -> Result<f64> {
            fields
                .get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::InvalidArgument(format!("history line lacks {k}")))
        };
        Ok(Self {
            epoch: fields
                .get("epoch")
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::InvalidArgument("history line lacks epoch".into()))?,
            affinity_loss: num("affinity_loss")?,
            clustering_loss: num("clustering_loss")?,
            total_loss: num("total_loss")?,
            tau_a: num("tau_a")?,
            tau_c: num("tau_c")?,
            inconsistency: num("inconsistency")?,
            intensity: num("intensity")?,
            lr: num("lr")?,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn to_text(&self) -> String {
        self.records.iter().map(|r| r.to_line() + "\n").collect()
    }
}

/// Mutable training state: model, optimizer, RNG, and progress.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub model: ModelState,
    pub optimizer: OptimizerState,
    pub rng: ChaCha8Rng,
    pub epoch: usize,
    pub history: TrainHistory,
    pub(crate) feature_std: Vec<f64>,
}

impl Trainer {
    pub fn new(cfg: &TrainConfig, data: &DenseMatrix) -> Result<Self> {
        cfg.validate()?;
        if data.rows() < cfg.batch_size {
            return Err(Error::InvalidArgument(format!(
                "dataset has {} samples, fewer than one batch of {}",
                data.rows(),
                cfg.batch_size
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let model = ModelState::init(&cfg.layer_dims(data.cols()), cfg.num_clusters, &mut rng)?;
        let optimizer = OptimizerState::new(
            &model,
            cfg.base_lr,
            cfg.momentum,
            cfg.weight_decay,
            cfg.restart_period,
        )?;
        Ok(Self {
            config: cfg.clone(),
            model,
            optimizer,
            rng,
            epoch: 0,
            history: TrainHistory::default(),
            feature_std: feature_std(data),
        })
    }

    /// One shuffled pass over `data`; the trailing partial batch is dropped.
    pub fn run_epoch(&mut self, data: &DenseMatrix) -> Result<&EpochRecord> {
        let cfg = &self.config;
        let lr = cosine_lr(self.epoch, &self.optimizer);
        let mut order: Vec<usize> = (0..data.rows()).collect();
        order.shuffle(&mut self.rng);
        let steps = data.rows() / cfg.batch_size;
        let mut acc = StepLosses::default();
        for step in 0..steps {
            let idx = &order[step * cfg.batch_size..(step + 1) * cfg.batch_size];
            let batch = data.select_rows(idx);
            let l = train_step(
                &batch,
                &mut self.model,
                &mut self.optimizer,
                cfg,
                &self.feature_std,
                &mut self.rng,
                lr,
            )
            .map_err(|e| match e {
                Error::NonFinite(_) => Error::NanLoss {
                    epoch: self.epoch,
                    step,
                },
                other => other,
            })?;
            acc.affinity += l.affinity;
            acc.clustering += l.clustering;
            acc.total += l.total;
            acc.inconsistency += l.inconsistency;
            acc.intensity += l.intensity;
        }
        let n = steps as f64;
        self.history.records.push(EpochRecord {
            epoch: self.epoch,
            affinity_loss: acc.affinity / n,
            clustering_loss: acc.clustering / n,
            total_loss: acc.total / n,
            tau_a: self.model.tau_a(),
            tau_c: self.model.tau_c(),
            inconsistency: acc.inconsistency / n,
            intensity: acc.intensity / n,
            lr,
        });
        self.epoch += 1;
        Ok(self.history.records.last().unwrap())
    }

    pub fn run_until(&mut self, data: &DenseMatrix, epochs: usize) -> Result<()> {
        while self.epoch < epochs {
            let rec = self.run_epoch(data)?;
            log::debug!("{}", rec.to_line());
        }
        Ok(())
    }
}

/// Trains from scratch for `cfg.epochs` epochs.
pub fn fit(data: &DenseMatrix, cfg: &TrainConfig) -> Result<(ModelState, TrainHistory)> {
    let mut trainer = Trainer::new(cfg, data)?;
    trainer.run_until(data, cfg.epochs)?;
    Ok((trainer.model, trainer.history))
}

/// Inference: unit-normalized encoder output (no orthogonalization) and the
/// nearest-prototype label per row.
pub fn predict(model: &ModelState, x: &DenseMatrix) -> Result<(Vec<usize>, DenseMatrix)> {
    let (z, _) = forward(model, x)?;
    let z = row_normalize(&z).value;
    let bank = PrototypeBank::from_raw(&model.prototypes)?;
    let labels = assignment_logits(&z, &bank)?.row_argmax();
    Ok((labels, z))
}

/// Affinity logits of a normalized embedding, diagonal-free or complete.
pub fn affinity_logits(z: &DenseMatrix, keep_diagonal: bool) -> Result<DenseMatrix> {
    let gram = z.matmul_t(z)?;
    Ok(if keep_diagonal {
        gram
    } else {
        drop_diagonal(&gram)
    })
}
