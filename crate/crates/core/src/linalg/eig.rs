use super::DenseMatrix;
use crate::error::{Error, Result};

/// Symmetric inputs up to this order use cyclic Jacobi; larger ones go
/// through Householder tridiagonalization and implicit QL.
const JACOBI_MAX_ORDER: usize = 64;

const SYMMETRY_TOL: f64 = 1e-10;

/// Full spectrum of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct EigResult {
    /// Nonincreasing.
    pub eigenvalues: Vec<f64>,
    /// Column `j` is the unit eigenvector paired with `eigenvalues[j]`.
    pub eigenvectors: DenseMatrix,
}

impl EigResult {
    /// `Q Λ Qᵀ`
    pub fn reconstruct(&self) -> DenseMatrix {
        let q = &self.eigenvectors;
        let n = q.rows();
        let mut out = DenseMatrix::zeros(n, n);
        for (k, &lambda) in self.eigenvalues.iter().enumerate() {
            for i in 0..n {
                let qi = q[(i, k)] * lambda;
                if qi == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out[(i, j)] += qi * q[(j, k)];
                }
            }
        }
        out
    }
}

/// Eigendecomposition of a symmetric matrix, eigenvalues sorted nonincreasing.
///
/// `tol` is the relative off-diagonal threshold at which Jacobi sweeps stop.
pub fn sym_eig(a: &DenseMatrix, tol: f64) -> Result<EigResult> {
    let (n, m) = a.shape();
    if n != m {
        return Err(Error::Dimension(format!(
            "sym_eig needs a square matrix, got {n}x{m}"
        )));
    }
    if !a.is_finite() {
        return Err(Error::NonFinite("sym_eig input".into()));
    }
    let scale = a.max_abs().max(1.0);
    let asym = a.asymmetry();
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::Asymmetric { asymmetry: asym });
    }
    if n == 0 {
        return Ok(EigResult {
            eigenvalues: vec![],
            eigenvectors: DenseMatrix::zeros(0, 0),
        });
    }

    let (values, vectors) = if n <= JACOBI_MAX_ORDER {
        jacobi(a, tol.max(f64::EPSILON))
    } else {
        tridiagonal_ql(a)
    };
    Ok(sorted_descending(values, vectors))
}

fn sorted_descending(values: Vec<f64>, vectors: DenseMatrix) -> EigResult {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[j].total_cmp(&values[i]).then(i.cmp(&j)));
    let eigenvalues = order.iter().map(|&i| values[i]).collect();
    let eigenvectors = DenseMatrix::from_fn(n, n, |r, c| vectors[(r, order[c])]);
    EigResult {
        eigenvalues,
        eigenvectors,
    }
}

fn off_diagonal_norm(a: &DenseMatrix) -> f64 {
    let n = a.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[(i, j)] * a[(i, j)];
            }
        }
    }
    s.sqrt()
}

fn jacobi(input: &DenseMatrix, tol: f64) -> (Vec<f64>, DenseMatrix) {
    let n = input.rows();
    // symmetrize to remove sub-tolerance asymmetry
    let mut a = DenseMatrix::from_fn(n, n, |i, j| 0.5 * (input[(i, j)] + input[(j, i)]));
    let mut v = DenseMatrix::identity(n);
    let total = a.frobenius_norm();
    if total == 0.0 {
        return (vec![0.0; n], v);
    }

    for _sweep in 0..100 {
        if off_diagonal_norm(&a) <= tol * total {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                a[(p, p)] -= t * apq;
                a[(q, q)] += t * apq;
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for r in 0..n {
                    if r == p || r == q {
                        continue;
                    }
                    let g = a[(r, p)];
                    let h = a[(r, q)];
                    let rp = c * g - s * h;
                    let rq = s * g + c * h;
                    a[(r, p)] = rp;
                    a[(p, r)] = rp;
                    a[(r, q)] = rq;
                    a[(q, r)] = rq;
                }
                for r in 0..n {
                    let g = v[(r, p)];
                    let h = v[(r, q)];
                    v[(r, p)] = c * g - s * h;
                    v[(r, q)] = s * g + c * h;
                }
            }
        }
    }
    ((0..n).map(|i| a[(i, i)]).collect(), v)
}

/// Householder reduction to tridiagonal form followed by implicit QL with
/// Wilkinson-style shifts (the classic tred2/tql2 pair).
fn tridiagonal_ql(input: &DenseMatrix) -> (Vec<f64>, DenseMatrix) {
    let n = input.rows();
    let mut v = DenseMatrix::from_fn(n, n, |i, j| 0.5 * (input[(i, j)] + input[(j, i)]));
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];

    tred2(&mut v, &mut d, &mut e);
    tql2(&mut v, &mut d, &mut e);
    (d, v)
}

fn tred2(v: &mut DenseMatrix, d: &mut [f64], e: &mut [f64]) {
    let n = d.len();
    for j in 0..n {
        d[j] = v[(n - 1, j)];
    }

    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for k in 0..i {
            scale += d[k].abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[(i - 1, j)];
                v[(i, j)] = 0.0;
                v[(j, i)] = 0.0;
            }
        } else {
            for k in 0..i {
                d[k] /= scale;
                h += d[k] * d[k];
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in e.iter_mut().take(i) {
                *ej = 0.0;
            }

            for j in 0..i {
                f = d[j];
                v[(j, i)] = f;
                g = e[j] + v[(j, j)] * f;
                for k in (j + 1)..i {
                    g += v[(k, j)] * d[k];
                    e[k] += v[(k, j)] * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    let upd = f * e[k] + g * d[k];
                    v[(k, j)] -= upd;
                }
                d[j] = v[(i - 1, j)];
                v[(i, j)] = 0.0;
            }
        }
        d[i] = h;
    }

    // accumulate transformations
    for i in 0..n.saturating_sub(1) {
        v[(n - 1, i)] = v[(i, i)];
        v[(i, i)] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v[(k, i + 1)] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v[(k, i + 1)] * v[(k, j)];
                }
                for k in 0..=i {
                    let upd = g * d[k];
                    v[(k, j)] -= upd;
                }
            }
        }
        for k in 0..=i {
            v[(k, i + 1)] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[(n - 1, j)];
        v[(n - 1, j)] = 0.0;
    }
    v[(n - 1, n - 1)] = 1.0;
    e[0] = 0.0;
}

fn tql2(v: &mut DenseMatrix, d: &mut [f64], e: &mut [f64]) {
    let n = d.len();
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;

    let mut f = 0.0;
    let mut tst1: f64 = 0.0;
    let eps = f64::EPSILON;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m == n {
            m = n - 1;
        }

        if m > l {
            for _iter in 0..200 {
                let g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    let g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    for k in 0..n {
                        let hk = v[(k, i + 1)];
                        let vk = v[(k, i)];
                        v[(k, i + 1)] = s * vk + c * hk;
                        v[(k, i)] = c * vk - s * hk;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
}
