//! Entropic optimal transport by Sinkhorn scaling, plus an exact solver used
//! as a reference on small instances.
//!
//! Two Sinkhorn variants live here:
//!
//! * [`sinkhorn_algorithm1`] exponentiates `logits / eta` and alternates a
//!   column normalization and a row normalization a fixed number of times.
//!   This is the form used to produce training targets.
//! * [`sinkhorn_marginal`] solves `min <Q, C> − eta·H(Q)` subject to
//!   arbitrary consistent marginals, iterating in the log domain until both
//!   marginal residuals fall under a tolerance.

use crate::assignment::min_cost_assignment;
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

pub const DEFAULT_ETA: f64 = 0.05;
pub const DEFAULT_ITERATIONS: usize = 5;

/// Below this entropic weight the fixed-iteration variant normalizes in the
/// log domain.
pub const LOG_DOMAIN_ETA: f64 = 0.01;

const MARGINAL_TOTAL_TOL: f64 = 1e-9;
const ORACLE_MAX_CELLS: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub plan: DenseMatrix,
    /// Max-norm deviation of row sums from the requested row marginals.
    pub row_marginal_residual: f64,
    /// Max-norm deviation of column sums from the requested column marginals.
    pub col_marginal_residual: f64,
    pub iterations_used: usize,
}

impl TransportPlan {
    fn with_marginals(
        plan: DenseMatrix,
        rows: &[f64],
        cols: &[f64],
        iterations_used: usize,
    ) -> Self {
        let row_marginal_residual = max_deviation(&plan.row_sums(), rows);
        let col_marginal_residual = max_deviation(&plan.col_sums(), cols);
        Self {
            plan,
            row_marginal_residual,
            col_marginal_residual,
            iterations_used,
        }
    }

    /// `Σ Q_ij C_ij`
    pub fn cost(&self, cost: &DenseMatrix) -> f64 {
        self.plan
            .as_slice()
            .iter()
            .zip(cost.as_slice())
            .map(|(q, c)| q * c)
            .sum()
    }
}

/// Scaling vectors of a consistent-marginal Sinkhorn solve, kept in log form
/// so that small `eta` does not overflow them.
#[derive(Debug, Clone)]
pub struct SinkhornState {
    pub log_alpha: Vec<f64>,
    pub log_beta: Vec<f64>,
    pub eta: f64,
    /// L1 row-marginal deviation after each full sweep (columns are exact at
    /// that point).
    pub residual_trace: Vec<f64>,
}

impl SinkhornState {
    pub fn alpha(&self) -> Vec<f64> {
        self.log_alpha.iter().map(|v| v.exp()).collect()
    }

    pub fn beta(&self) -> Vec<f64> {
        self.log_beta.iter().map(|v| v.exp()).collect()
    }

    /// `Diag(α)·exp(−C/η)·Diag(β)`
    pub fn reconstruct(&self, cost: &DenseMatrix) -> DenseMatrix {
        DenseMatrix::from_fn(cost.rows(), cost.cols(), |i, j| {
            (self.log_alpha[i] - cost[(i, j)] / self.eta + self.log_beta[j]).exp()
        })
    }
}

fn max_deviation(actual: &[f64], wanted: &[f64]) -> f64 {
    actual
        .iter()
        .zip(wanted)
        .fold(0.0, |m, (a, w)| m.max((a - w).abs()))
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "eta must be positive, got {eta}"
        )));
    }
    Ok(())
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Fixed-iteration Sinkhorn on `exp(logits / eta)`: each iteration normalizes
/// columns to sum 1, then rows to sum 1. Rows of the result sum to one.
///
/// The reported column residual is measured against the uniform column mass
/// `m / n` that a row-stochastic `m×n` plan would need to be balanced.
pub fn sinkhorn_algorithm1(
    logits: &DenseMatrix,
    eta: f64,
    iterations: usize,
) -> Result<TransportPlan> {
    check_eta(eta)?;
    if iterations == 0 {
        return Err(Error::InvalidArgument(
            "sinkhorn needs at least one iteration".into(),
        ));
    }
    if !logits.is_finite() {
        return Err(Error::NonFinite("sinkhorn logits".into()));
    }
    let (m, n) = logits.shape();
    let plan = if eta <= LOG_DOMAIN_ETA {
        algorithm1_log_domain(logits, eta, iterations)
    } else {
        algorithm1_direct(logits, eta, iterations)?
    };
    let rows = vec![1.0; m];
    let cols = vec![m as f64 / n as f64; n];
    Ok(TransportPlan::with_marginals(
        plan, &rows, &cols, iterations,
    ))
}

fn algorithm1_direct(logits: &DenseMatrix, eta: f64, iterations: usize) -> Result<DenseMatrix> {
    let (m, n) = logits.shape();
    let shift = logits
        .as_slice()
        .iter()
        .fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut w = logits.map(|v| ((v - shift) / eta).exp());
    for _ in 0..iterations {
        let col_sums = w.col_sums();
        for (j, &s) in col_sums.iter().enumerate() {
            if !(s > 0.0) {
                return Err(Error::Underflow {
                    eta,
                    axis: "column",
                    index: j,
                });
            }
        }
        for i in 0..m {
            for (x, s) in w.row_mut(i).iter_mut().zip(&col_sums) {
                *x /= s;
            }
        }
        for i in 0..m {
            let row = w.row_mut(i);
            let s: f64 = row.iter().sum();
            if !(s > 0.0) {
                return Err(Error::Underflow {
                    eta,
                    axis: "row",
                    index: i,
                });
            }
            for x in row.iter_mut() {
                *x /= s;
            }
        }
    }
    debug_assert_eq!(w.shape(), (m, n));
    Ok(w)
}

fn algorithm1_log_domain(logits: &DenseMatrix, eta: f64, iterations: usize) -> DenseMatrix {
    let (m, n) = logits.shape();
    let mut lw = logits.map(|v| v / eta);
    for _ in 0..iterations {
        for j in 0..n {
            let lse = log_sum_exp((0..m).map(|i| lw[(i, j)]));
            for i in 0..m {
                lw[(i, j)] -= lse;
            }
        }
        for i in 0..m {
            let row = lw.row_mut(i);
            let lse = log_sum_exp(row.iter().copied());
            for x in row.iter_mut() {
                *x -= lse;
            }
        }
    }
    lw.map(f64::exp)
}

/// Entropic OT with explicit marginals, iterated to tolerance in the log
/// domain. Returns the plan and the scaling vectors that reproduce it.
pub fn sinkhorn_marginal(
    cost: &DenseMatrix,
    row_marginals: &[f64],
    col_marginals: &[f64],
    eta: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(TransportPlan, SinkhornState)> {
    check_eta(eta)?;
    let (m, n) = cost.shape();
    check_marginals(m, n, row_marginals, col_marginals)?;
    if !cost.is_finite() {
        return Err(Error::NonFinite("transport cost".into()));
    }

    let kernel = cost.map(|c| -c / eta);
    let log_r: Vec<f64> = row_marginals.iter().map(|v| v.ln()).collect();
    let log_c: Vec<f64> = col_marginals.iter().map(|v| v.ln()).collect();
    let mut log_alpha = vec![0.0; m];
    let mut log_beta = vec![0.0; n];
    let mut residual_trace = Vec::new();
    let mut iterations_used = 0;

    for it in 0..max_iter {
        for i in 0..m {
            let lse = log_sum_exp((0..n).map(|j| kernel[(i, j)] + log_beta[j]));
            if lse == f64::NEG_INFINITY {
                return Err(Error::Underflow {
                    eta,
                    axis: "row",
                    index: i,
                });
            }
            log_alpha[i] = log_r[i] - lse;
        }
        for j in 0..n {
            let lse = log_sum_exp((0..m).map(|i| kernel[(i, j)] + log_alpha[i]));
            if lse == f64::NEG_INFINITY {
                return Err(Error::Underflow {
                    eta,
                    axis: "column",
                    index: j,
                });
            }
            log_beta[j] = log_c[j] - lse;
        }
        iterations_used = it + 1;

        let plan = scaled_plan(&kernel, &log_alpha, &log_beta);
        let rows = plan.row_sums();
        residual_trace.push(
            rows.iter()
                .zip(row_marginals)
                .map(|(a, b)| (a - b).abs())
                .sum(),
        );
        let row_res = max_deviation(&rows, row_marginals);
        let col_res = max_deviation(&plan.col_sums(), col_marginals);
        if row_res <= tol && col_res <= tol {
            break;
        }
    }

    let plan = scaled_plan(&kernel, &log_alpha, &log_beta);
    let result = TransportPlan::with_marginals(plan, row_marginals, col_marginals, iterations_used);
    let state = SinkhornState {
        log_alpha,
        log_beta,
        eta,
        residual_trace,
    };
    Ok((result, state))
}

fn scaled_plan(kernel: &DenseMatrix, log_alpha: &[f64], log_beta: &[f64]) -> DenseMatrix {
    DenseMatrix::from_fn(kernel.rows(), kernel.cols(), |i, j| {
        (log_alpha[i] + kernel[(i, j)] + log_beta[j]).exp()
    })
}

fn check_marginals(m: usize, n: usize, rows: &[f64], cols: &[f64]) -> Result<()> {
    if rows.len() != m || cols.len() != n {
        return Err(Error::Dimension(format!(
            "marginals {}+{} for a {m}x{n} cost",
            rows.len(),
            cols.len()
        )));
    }
    if rows
        .iter()
        .chain(cols)
        .any(|&v| !(v > 0.0 && v.is_finite()))
    {
        return Err(Error::InvalidArgument("marginals must be positive".into()));
    }
    let row_total: f64 = rows.iter().sum();
    let col_total: f64 = cols.iter().sum();
    if (row_total - col_total).abs() > MARGINAL_TOTAL_TOL * row_total.max(1.0) {
        return Err(Error::Infeasible {
            row_total,
            col_total,
        });
    }
    Ok(())
}

/// Exact minimizer of `Σ Q_ij C_ij` over the transportation polytope.
///
/// Square instances with all-unit marginals are solved as a linear
/// assignment; everything else by successive shortest augmenting paths on
/// the bipartite flow network. Limited to 256 cells.
pub fn exact_ot_oracle(
    cost: &DenseMatrix,
    row_marginals: &[f64],
    col_marginals: &[f64],
) -> Result<TransportPlan> {
    let (m, n) = cost.shape();
    if m * n > ORACLE_MAX_CELLS {
        return Err(Error::TooLarge(m * n));
    }
    check_marginals(m, n, row_marginals, col_marginals)?;

    let unit = |v: &[f64]| v.iter().all(|&x| x == 1.0);
    let plan = if m == n && unit(row_marginals) && unit(col_marginals) {
        let (assign, _) = min_cost_assignment(cost)?;
        let mut p = DenseMatrix::zeros(m, n);
        for (i, j) in assign.into_iter().enumerate() {
            p[(i, j)] = 1.0;
        }
        p
    } else {
        min_cost_flow(cost, row_marginals, col_marginals)
    };
    Ok(TransportPlan::with_marginals(
        plan,
        row_marginals,
        col_marginals,
        0,
    ))
}

/// Successive shortest paths (Bellman–Ford) on source → rows → cols → sink.
fn min_cost_flow(cost: &DenseMatrix, supply: &[f64], demand: &[f64]) -> DenseMatrix {
    let (m, n) = cost.shape();
    let total: f64 = supply.iter().sum();
    let eps = 1e-12 * total.max(1.0);
    let mut flow = DenseMatrix::zeros(m, n);
    let mut sent = vec![0.0; m];
    let mut received = vec![0.0; n];

    // nodes: rows 0..m, cols m..m+n; source/sink handled implicitly
    loop {
        let mut dist = vec![f64::INFINITY; m + n];
        let mut pred: Vec<Option<usize>> = vec![None; m + n];
        for i in 0..m {
            if supply[i] - sent[i] > eps {
                dist[i] = 0.0;
            }
        }
        for _round in 0..(m + n) {
            let mut changed = false;
            for i in 0..m {
                if dist[i].is_finite() {
                    for j in 0..n {
                        let d = dist[i] + cost[(i, j)];
                        if d < dist[m + j] - 1e-15 {
                            dist[m + j] = d;
                            pred[m + j] = Some(i);
                            changed = true;
                        }
                    }
                }
            }
            for j in 0..n {
                if dist[m + j].is_finite() {
                    for i in 0..m {
                        if flow[(i, j)] > eps {
                            let d = dist[m + j] - cost[(i, j)];
                            if d < dist[i] - 1e-15 {
                                dist[i] = d;
                                pred[i] = Some(m + j);
                                changed = true;
                            }
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }

        let target = (0..n)
            .filter(|&j| demand[j] - received[j] > eps && dist[m + j].is_finite())
            .min_by(|&a, &b| dist[m + a].total_cmp(&dist[m + b]));
        let Some(target) = target else { break };

        // walk back to a source row, collecting the bottleneck
        let mut path = Vec::new();
        let mut node = m + target;
        let mut bottleneck = demand[target] - received[target];
        while let Some(p) = pred[node] {
            path.push((p, node));
            if node < m {
                // backward edge col p -> row node
                bottleneck = bottleneck.min(flow[(node, p - m)]);
            }
            node = p;
        }
        let source_row = node;
        bottleneck = bottleneck.min(supply[source_row] - sent[source_row]);
        if bottleneck <= eps {
            break;
        }
        for &(from, to) in &path {
            if from < m {
                flow[(from, to - m)] += bottleneck;
            } else {
                flow[(to, from - m)] -= bottleneck;
            }
        }
        sent[source_row] += bottleneck;
        received[target] += bottleneck;
    }
    flow.map(|v| if v.abs() <= eps { 0.0 } else { v })
}
