use super::{dot, DenseMatrix};
use crate::error::{Error, Result};

const RANK_TOL: f64 = 1e-12;

/// Thin QR factors; `r` has a nonnegative diagonal.
#[derive(Debug, Clone)]
pub struct QrResult {
    pub q: DenseMatrix,
    pub r: DenseMatrix,
}

/// Modified Gram–Schmidt QR with one reorthogonalization pass.
pub fn qr_decompose(a: &DenseMatrix) -> Result<QrResult> {
    let (m, n) = a.shape();
    if m < n {
        return Err(Error::Dimension(format!(
            "qr needs rows >= cols, got {m}x{n}"
        )));
    }
    if !a.is_finite() {
        return Err(Error::NonFinite("qr input".into()));
    }
    let scale = a.frobenius_norm();
    let mut q_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut r = DenseMatrix::zeros(n, n);

    for j in 0..n {
        let mut v = a.col(j);
        for _pass in 0..2 {
            for (k, qk) in q_cols.iter().enumerate() {
                let proj = dot(qk, &v);
                r[(k, j)] += proj;
                for (x, y) in v.iter_mut().zip(qk) {
                    *x -= proj * y;
                }
            }
        }
        let len = super::norm(&v);
        if len <= RANK_TOL * scale || len == 0.0 {
            return Err(Error::RankDeficient {
                column: j,
                norm: len,
            });
        }
        r[(j, j)] = len;
        for x in v.iter_mut() {
            *x /= len;
        }
        q_cols.push(v);
    }

    let q = DenseMatrix::from_fn(m, n, |i, j| q_cols[j][i]);
    Ok(QrResult { q, r })
}
