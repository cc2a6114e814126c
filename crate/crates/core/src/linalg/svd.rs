use super::{dot, sym_eig, DenseMatrix};
use crate::error::{Error, Result};

/// Singular values below this fraction of the largest are floored before
/// dividing to recover left singular vectors.
pub const SIGMA_FLOOR: f64 = 1e-12;

/// Thin SVD `A = U·diag(σ)·Vᵀ` of a tall matrix.
#[derive(Debug, Clone)]
pub struct SvdResult {
    /// m×n, orthonormal columns.
    pub u: DenseMatrix,
    /// Nonincreasing, nonnegative.
    pub singular_values: Vec<f64>,
    /// n×n, orthonormal columns.
    pub v: DenseMatrix,
}

impl SvdResult {
    pub fn reconstruct(&self) -> DenseMatrix {
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for (x, s) in us.row_mut(i).iter_mut().zip(&self.singular_values) {
                *x *= s;
            }
        }
        us.matmul_t(&self.v).expect("conforming factors")
    }

    /// `σ_min / σ_max`, zero for an all-zero input.
    pub fn inverse_condition(&self) -> f64 {
        match (self.singular_values.first(), self.singular_values.last()) {
            (Some(&hi), Some(&lo)) if hi > 0.0 => lo / hi,
            _ => 0.0,
        }
    }
}

/// Thin SVD of an `m×n` matrix with `m ≥ n`, computed from the symmetric
/// eigenproblem of `AᵀA`.
pub fn thin_svd(a: &DenseMatrix) -> Result<SvdResult> {
    let (m, n) = a.shape();
    if m < n {
        return Err(Error::Dimension(format!(
            "thin_svd needs rows >= cols, got {m}x{n}; transpose first"
        )));
    }
    if !a.is_finite() {
        return Err(Error::NonFinite("thin_svd input".into()));
    }
    let gram = a.t_matmul(a)?;
    let eig = sym_eig(&gram, 1e-15)?;
    let v = eig.eigenvectors;
    let singular_values: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()).collect();
    let sigma_max = singular_values.first().copied().unwrap_or(0.0);
    let floor = (SIGMA_FLOOR * sigma_max).max(f64::MIN_POSITIVE);

    let mut u = a.matmul(&v)?;
    for i in 0..m {
        for (x, &s) in u.row_mut(i).iter_mut().zip(&singular_values) {
            *x /= s.max(floor);
        }
    }
    orthonormalize_columns(&mut u);

    Ok(SvdResult {
        u,
        singular_values,
        v,
    })
}

/// Two-pass modified Gram–Schmidt in place. Columns that collapse are replaced
/// by the first coordinate direction that survives projection, so the result
/// always has orthonormal columns.
pub(crate) fn orthonormalize_columns(u: &mut DenseMatrix) {
    let (m, n) = u.shape();
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| u.col(j)).collect();
    for j in 0..n {
        let original = super::norm(&cols[j]);
        for _pass in 0..2 {
            for k in 0..j {
                let (head, tail) = cols.split_at_mut(j);
                let proj = dot(&head[k], &tail[0]);
                for (x, y) in tail[0].iter_mut().zip(&head[k]) {
                    *x -= proj * y;
                }
            }
        }
        let mut len = super::norm(&cols[j]);
        if len <= 1e-8 * original.max(f64::MIN_POSITIVE) || len == 0.0 {
            // rank-deficient direction: complete the basis
            for e in 0..m {
                let mut cand = vec![0.0; m];
                cand[e] = 1.0;
                for _pass in 0..2 {
                    for prev in cols.iter().take(j) {
                        let proj = dot(prev, &cand);
                        for (x, y) in cand.iter_mut().zip(prev) {
                            *x -= proj * y;
                        }
                    }
                }
                let l = super::norm(&cand);
                if l > 0.5 {
                    cols[j] = cand;
                    len = l;
                    break;
                }
            }
        }
        for x in cols[j].iter_mut() {
            *x /= len;
        }
    }
    for (j, c) in cols.iter().enumerate() {
        for (i, &x) in c.iter().enumerate() {
            u[(i, j)] = x;
        }
    }
}
