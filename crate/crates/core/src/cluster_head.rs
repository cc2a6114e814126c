//! Prototype-based cluster assignment and its losses.

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::spectral::{
    check_row_stochastic, row_normalize, softmax_cross_entropy, CrossEntropy, RowNormalized,
};
use crate::transport::{sinkhorn_algorithm1, TransportPlan};

/// Unit-norm prototypes `μ_k`, derived from unconstrained parameters.
#[derive(Debug, Clone)]
pub struct PrototypeBank {
    normalized: RowNormalized,
}

impl PrototypeBank {
    /// Normalizes each row of `raw`. Needs at least two prototypes.
    pub fn from_raw(raw: &DenseMatrix) -> Result<Self> {
        if raw.rows() < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least two prototypes, got {}",
                raw.rows()
            )));
        }
        Ok(Self {
            normalized: row_normalize(raw),
        })
    }

    pub fn prototypes(&self) -> &DenseMatrix {
        &self.normalized.value
    }

    pub fn count(&self) -> usize {
        self.normalized.value.rows()
    }

    pub fn dim(&self) -> usize {
        self.normalized.value.cols()
    }

    /// Pulls a gradient w.r.t. the unit prototypes back to the raw rows.
    pub fn backward(&self, grad_unit: &DenseMatrix) -> DenseMatrix {
        self.normalized.backward(grad_unit)
    }
}

#[derive(Debug, Clone)]
pub struct AssignmentBatch {
    /// `H_ik = z_i · μ_k`
    pub logits: DenseMatrix,
    /// `softmax(H / τ_c)` per row.
    pub probabilities: DenseMatrix,
    pub temperature: f64,
}

impl AssignmentBatch {
    /// Row argmax of the logits, lowest index on ties.
    pub fn hard_labels(&self) -> Vec<usize> {
        self.logits.row_argmax()
    }
}

pub fn assignment_logits(z: &DenseMatrix, bank: &PrototypeBank) -> Result<DenseMatrix> {
    if z.cols() != bank.dim() {
        return Err(Error::Dimension(format!(
            "embeddings have {} columns, prototypes {}",
            z.cols(),
            bank.dim()
        )));
    }
    z.matmul_t(bank.prototypes())
}

pub fn assignment_probabilities(
    z: &DenseMatrix,
    bank: &PrototypeBank,
    tau_c: f64,
) -> Result<AssignmentBatch> {
    if !(tau_c > 0.0 && tau_c.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {tau_c}"
        )));
    }
    let logits = assignment_logits(z, bank)?;
    let probabilities = crate::spectral::row_softmax(&logits, tau_c);
    Ok(AssignmentBatch {
        logits,
        probabilities,
        temperature: tau_c,
    })
}

/// `−Σ target · log P`, with gradients w.r.t. the logits and `τ_c`.
pub fn clustering_loss(target: &DenseMatrix, batch: &AssignmentBatch) -> Result<CrossEntropy> {
    softmax_cross_entropy(target, &batch.logits, batch.temperature)
}

/// Balanced assignment target: fixed-iteration Sinkhorn over `H / η`.
pub fn assignment_target(
    logits: &DenseMatrix,
    eta: f64,
    iterations: usize,
) -> Result<TransportPlan> {
    sinkhorn_algorithm1(logits, eta, iterations)
}

/// `Σ_ik P_ik ‖z_i − μ_k‖²`
pub fn soft_kmeans_objective(
    z: &DenseMatrix,
    bank: &PrototypeBank,
    p: &DenseMatrix,
) -> Result<f64> {
    let mu = bank.prototypes();
    if z.cols() != mu.cols() || p.shape() != (z.rows(), mu.rows()) {
        return Err(Error::Dimension(format!(
            "soft k-means with Z {:?}, prototypes {:?}, P {:?}",
            z.shape(),
            mu.shape(),
            p.shape()
        )));
    }
    check_row_stochastic(p, "assignment matrix")?;
    let mut total = 0.0;
    for i in 0..z.rows() {
        let zi = z.row(i);
        for k in 0..mu.rows() {
            let d2: f64 = zi
                .iter()
                .zip(mu.row(k))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            total += p[(i, k)] * d2;
        }
    }
    Ok(total)
}
