//! Affinity modeling, the diagonal-free affinity loss, and orthogonalization
//! of spectral embeddings.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::{dot, qr_decompose, thin_svd, DenseMatrix};

const UNIT_NORM_TOL: f64 = 1e-8;
const STOCHASTIC_TOL: f64 = 1e-8;

/// Relative singular value below which the polar factor is flagged as
/// ill-conditioned.
pub const POLAR_CONDITION_FLOOR: f64 = 1e-10;

/// Softmax cross-entropy against a row-stochastic target, with the
/// derivatives the backward pass needs.
#[derive(Debug, Clone)]
pub struct CrossEntropy {
    /// `−Σ_ij target_ij · log softmax(logits/τ)_ij`
    pub loss: f64,
    /// `(softmax(logits/τ) − target) / τ`
    pub grad_logits: DenseMatrix,
    /// `∂loss/∂τ`
    pub grad_tau: f64,
    /// `softmax(logits/τ)`
    pub probabilities: DenseMatrix,
}

pub(crate) fn check_row_stochastic(target: &DenseMatrix, what: &str) -> Result<()> {
    if target.as_slice().iter().any(|&v| !(v >= -STOCHASTIC_TOL)) {
        return Err(Error::Contract(format!(
            "{what} has negative or NaN entries"
        )));
    }
    for (i, s) in target.row_sums().into_iter().enumerate() {
        if (s - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::Contract(format!(
                "{what} row {i} sums to {s}, not 1"
            )));
        }
    }
    Ok(())
}

/// Row-wise softmax of `logits / tau`.
pub fn row_softmax(logits: &DenseMatrix, tau: f64) -> DenseMatrix {
    let mut out = logits.scale(1.0 / tau);
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut s = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            s += *x;
        }
        for x in row.iter_mut() {
            *x /= s;
        }
    }
    out
}

pub(crate) fn softmax_cross_entropy(
    target: &DenseMatrix,
    logits: &DenseMatrix,
    tau: f64,
) -> Result<CrossEntropy> {
    if target.shape() != logits.shape() {
        return Err(Error::Dimension(format!(
            "target {:?} vs logits {:?}",
            target.shape(),
            logits.shape()
        )));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    check_row_stochastic(target, "target")?;

    let (m, n) = logits.shape();
    let mut loss = 0.0;
    let mut probabilities = DenseMatrix::zeros(m, n);
    for i in 0..m {
        let row = logits.row(i);
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b)) / tau;
        let lse = max + row.iter().map(|&v| (v / tau - max).exp()).sum::<f64>().ln();
        for j in 0..n {
            let log_p = row[j] / tau - lse;
            probabilities[(i, j)] = log_p.exp();
            let t = target[(i, j)];
            if t != 0.0 {
                loss -= t * log_p;
            }
        }
    }
    let grad_s = probabilities.sub(target)?;
    // s = logits/τ: ∂s/∂τ = −logits/τ²
    let grad_tau = -dot(grad_s.as_slice(), logits.as_slice()) / (tau * tau);
    Ok(CrossEntropy {
        loss,
        grad_logits: grad_s.scale(1.0 / tau),
        grad_tau,
        probabilities,
    })
}

/// Rows with a smaller norm have no direction.
pub const ROW_NORM_FLOOR: f64 = 1e-12;

/// Rows scaled to unit ℓ2 norm, with the norms kept for the backward pass.
#[derive(Debug, Clone)]
pub struct RowNormalized {
    pub value: DenseMatrix,
    /// Infinite for rows below [`ROW_NORM_FLOOR`], which makes their
    /// gradient zero.
    pub norms: Vec<f64>,
}

/// Scales each row to unit length. A row with norm below
/// [`ROW_NORM_FLOOR`] (e.g. every rectifier of a sample switched off) is
/// replaced by the first basis vector and receives no gradient.
pub fn row_normalize(z: &DenseMatrix) -> RowNormalized {
    let mut value = z.clone();
    let mut norms = Vec::with_capacity(z.rows());
    for i in 0..z.rows() {
        let row = value.row_mut(i);
        let n = dot(row, row).sqrt();
        if n < ROW_NORM_FLOOR {
            row.fill(0.0);
            if let Some(first) = row.first_mut() {
                *first = 1.0;
            }
            norms.push(f64::INFINITY);
            continue;
        }
        for x in row.iter_mut() {
            *x /= n;
        }
        norms.push(n);
    }
    RowNormalized { value, norms }
}

impl RowNormalized {
    /// Applies the per-row projection Jacobian `(I − ẑẑᵀ)/‖z‖`.
    pub fn backward(&self, grad: &DenseMatrix) -> DenseMatrix {
        let mut out = grad.clone();
        for i in 0..out.rows() {
            let zhat = self.value.row(i);
            let g = out.row_mut(i);
            let along = dot(zhat, g);
            for (x, &u) in g.iter_mut().zip(zhat) {
                *x = (*x - along * u) / self.norms[i];
            }
        }
        out
    }
}

fn check_unit_rows(z: &DenseMatrix, what: &str) -> Result<()> {
    for (i, r) in z.row_iter().enumerate() {
        let n = dot(r, r).sqrt();
        if (n - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::Contract(format!(
                "{what} row {i} has norm {n}, expected 1"
            )));
        }
    }
    Ok(())
}

/// Pairwise cosine similarities with the diagonal removed: entry `(i, j′)`
/// is `z_i·z_j` where `j′` enumerates the `B−1` indices other than `i` in
/// their original order.
pub fn cross_affinity(z: &DenseMatrix) -> Result<DenseMatrix> {
    let b = z.rows();
    if b < 2 {
        return Err(Error::InvalidArgument(format!(
            "cross affinity needs B >= 2, got {b}"
        )));
    }
    check_unit_rows(z, "embedding")?;
    let gram = z.matmul_t(z)?;
    Ok(drop_diagonal(&gram))
}

/// `B×B → B×(B−1)` by deleting the diagonal.
pub fn drop_diagonal(square: &DenseMatrix) -> DenseMatrix {
    let b = square.rows();
    let mut out = DenseMatrix::zeros(b, b - 1);
    for i in 0..b {
        let src = square.row(i);
        let dst = out.row_mut(i);
        dst[..i].copy_from_slice(&src[..i]);
        dst[i..].copy_from_slice(&src[i + 1..]);
    }
    out
}

/// Inverse of [`drop_diagonal`] for gradients: zeros on the diagonal.
pub fn restore_diagonal(off: &DenseMatrix) -> DenseMatrix {
    let b = off.rows();
    let mut out = DenseMatrix::zeros(b, b);
    for i in 0..b {
        let src = off.row(i);
        let dst = out.row_mut(i);
        dst[..i].copy_from_slice(&src[..i]);
        dst[i + 1..].copy_from_slice(&src[i..]);
    }
    out
}

/// Gradient of a loss w.r.t. `Z` given its gradient w.r.t. the Gram matrix
/// `G = ZZᵀ`: `(dG + dGᵀ)·Z`.
pub fn gram_backward(grad_gram: &DenseMatrix, z: &DenseMatrix) -> Result<DenseMatrix> {
    let sym = grad_gram.add(&grad_gram.transpose())?;
    sym.matmul(z)
}

/// Row-wise cross entropy of `softmax(logits/τ)` against a row-stochastic
/// affinity target.
pub fn affinity_loss(target: &DenseMatrix, logits: &DenseMatrix, tau: f64) -> Result<CrossEntropy> {
    softmax_cross_entropy(target, logits, tau)
}

/// `Tr(ZᵀWZ)` evaluated as `Σ_ij W_ij G_ij` with `G = ZZᵀ`.
pub fn spectral_objective(w: &DenseMatrix, z: &DenseMatrix) -> Result<f64> {
    let n = w.rows();
    if w.cols() != n || z.rows() != n {
        return Err(Error::Dimension(format!(
            "spectral objective with W {:?} and Z {:?}",
            w.shape(),
            z.shape()
        )));
    }
    let gram = z.matmul_t(z)?;
    Ok(dot(w.as_slice(), gram.as_slice()))
}

/// The same quantity through the trace of `ZᵀWZ`.
pub fn spectral_objective_trace(w: &DenseMatrix, z: &DenseMatrix) -> Result<f64> {
    Ok(z.t_matmul(&w.matmul(z)?)?.trace())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrthMode {
    Procrustes,
    Qr,
    None,
}

impl fmt::Display for OrthMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OrthMode::Procrustes => "procrustes",
            OrthMode::Qr => "qr",
            OrthMode::None => "none",
        })
    }
}

impl FromStr for OrthMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "procrustes" => Ok(OrthMode::Procrustes),
            "qr" => Ok(OrthMode::Qr),
            "none" => Ok(OrthMode::None),
            other => Err(Error::InvalidArgument(format!(
                "unknown orthogonalization mode {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct OrthogonalizationResult {
    pub z_new: DenseMatrix,
    /// `‖Z − Z_new‖_F`
    pub inconsistency: f64,
    pub mode: OrthMode,
    /// Set when the polar factor was formed with floored singular values.
    pub ill_conditioned: bool,
}

/// Column-orthonormalizes `z`.
///
/// * `Procrustes` returns the polar factor `UVᵀ` of `z = UΣVᵀ`, the
///   column-orthonormal matrix nearest to `z` in Frobenius norm.
/// * `Qr` returns `Q` from `z = QR` with every column of `Q` sign-fixed to a
///   nonnegative leading entry, i.e. `Z·R′⁻¹` for the matching `R′`.
/// * `None` passes `z` through.
pub fn orthogonalize(z: &DenseMatrix, mode: OrthMode) -> Result<OrthogonalizationResult> {
    let (b, d) = z.shape();
    if b < d {
        return Err(Error::Dimension(format!(
            "orthogonalization needs B >= D, got {b}x{d}"
        )));
    }
    let (z_new, ill_conditioned) = match mode {
        OrthMode::Procrustes => {
            let svd = thin_svd(z)?;
            let flagged = svd.inverse_condition() < POLAR_CONDITION_FLOOR;
            if flagged {
                log::warn!(
                    "polar factor of an ill-conditioned embedding (sigma ratio {:e})",
                    svd.inverse_condition()
                );
            }
            (svd.u.matmul_t(&svd.v)?, flagged)
        }
        OrthMode::Qr => {
            let mut q = qr_decompose(z)?.q;
            for j in 0..d {
                let lead = (0..b).map(|i| q[(i, j)]).find(|v| *v != 0.0).unwrap_or(0.0);
                if lead < 0.0 {
                    for i in 0..b {
                        q[(i, j)] = -q[(i, j)];
                    }
                }
            }
            (q, false)
        }
        OrthMode::None => (z.clone(), false),
    };
    let inconsistency = z.frobenius_distance(&z_new);
    Ok(OrthogonalizationResult {
        z_new,
        inconsistency,
        mode,
        ill_conditioned,
    })
}

/// Straight-through re-parameterization `z + sg(z_new − z)`.
///
/// The forward value is `z_new`; the backward pass hands the upstream
/// gradient to `z` untouched because the offset is a constant.
#[derive(Debug, Clone)]
pub struct StraightThrough {
    pub value: DenseMatrix,
    /// The detached `z_new − z`.
    pub offset: DenseMatrix,
}

pub fn straight_through(z: &DenseMatrix, z_new: &DenseMatrix) -> Result<StraightThrough> {
    let offset = z_new.sub(z)?;
    Ok(StraightThrough {
        value: z_new.clone(),
        offset,
    })
}

impl StraightThrough {
    /// Re-applies a frozen offset to a perturbed input; used when probing the
    /// surrogate objective numerically.
    pub fn apply(&self, z: &DenseMatrix) -> Result<DenseMatrix> {
        z.add(&self.offset)
    }

    pub fn backward(&self, grad: &DenseMatrix) -> DenseMatrix {
        grad.clone()
    }
}

/// `Z·√D/‖Z‖_F`: the encoder output rescaled to the Frobenius norm of a
/// column-orthonormal `B×D` matrix.
#[derive(Debug, Clone)]
pub struct ScaleNormalized {
    pub value: DenseMatrix,
    pub norm: f64,
}

pub fn scale_normalize(z: &DenseMatrix) -> ScaleNormalized {
    let norm = z.frobenius_norm().max(1e-300);
    let value = z.scale((z.cols() as f64).sqrt() / norm);
    ScaleNormalized { value, norm }
}

impl ScaleNormalized {
    /// `(√D/‖Z‖)(G − ẑ⟨ẑ, G⟩)` with `ẑ = Z/‖Z‖`.
    pub fn backward(&self, grad: &DenseMatrix) -> DenseMatrix {
        let d = self.value.cols() as f64;
        // value = √D·ẑ
        let along = self
            .value
            .as_slice()
            .iter()
            .zip(grad.as_slice())
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / d;
        let mut out = grad.clone();
        for (o, v) in out.as_mut_slice().iter_mut().zip(self.value.as_slice()) {
            *o = (*o - along * v) * d.sqrt() / self.norm;
        }
        out
    }
}

/// `ρ·‖ZᵀZ − I‖_F²` and its gradient `4ρ·Z(ZᵀZ − I)`.
pub fn orthogonal_penalty(z: &DenseMatrix, rho: f64) -> (f64, DenseMatrix) {
    let d = z.cols();
    let mut resid = z.t_matmul(z).expect("ZᵀZ conforms");
    for i in 0..d {
        resid[(i, i)] -= 1.0;
    }
    let norm2 = resid.as_slice().iter().map(|v| v * v).sum::<f64>();
    let grad = z.matmul(&resid).expect("Z·R conforms").scale(4.0 * rho);
    (rho * norm2, grad)
}
