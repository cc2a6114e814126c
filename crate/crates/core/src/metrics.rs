//! Clustering agreement metrics: NMI, Hungarian-matched accuracy, ARI.

use std::collections::BTreeMap;

use crate::assignment::min_cost_assignment;
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusteringReport {
    pub nmi: f64,
    pub acc: f64,
    pub ari: f64,
    /// Rows are true classes, columns predicted clusters, both in ascending
    /// label order.
    pub contingency: Vec<Vec<usize>>,
    /// `(predicted label, true label)` pairs used for the accuracy.
    pub matching: Vec<(usize, usize)>,
    pub n: usize,
}

impl ClusteringReport {
    /// Flat `key=value` record with a fixed key order.
    pub fn to_line(&self) -> String {
        format!(
            "nmi={:.17e} acc={:.17e} ari={:.17e} n={} k_true={} k_pred={}",
            self.nmi,
            self.acc,
            self.ari,
            self.n,
            self.contingency.len(),
            self.contingency.first().map_or(0, Vec::len)
        )
    }
}

fn compact(labels: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let uniq: BTreeMap<usize, usize> = labels
        .iter()
        .copied()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .enumerate()
        .map(|(i, l)| (l, i))
        .collect();
    let ids = labels.iter().map(|l| uniq[l]).collect();
    (ids, uniq.into_keys().collect())
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

fn pairs(c: usize) -> f64 {
    let c = c as f64;
    c * (c - 1.0) / 2.0
}

pub fn evaluate(y_true: &[usize], y_pred: &[usize]) -> Result<ClusteringReport> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Dimension(format!(
            "label vectors differ in length: {} vs {}",
            y_true.len(),
            y_pred.len()
        )));
    }
    if y_true.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot evaluate an empty labeling".into(),
        ));
    }
    let n = y_true.len();
    let nf = n as f64;
    let (t_ids, t_labels) = compact(y_true);
    let (p_ids, p_labels) = compact(y_pred);
    let (kt, kp) = (t_labels.len(), p_labels.len());

    let mut contingency = vec![vec![0usize; kp]; kt];
    for (&t, &p) in t_ids.iter().zip(&p_ids) {
        contingency[t][p] += 1;
    }
    let row_tot: Vec<usize> = contingency.iter().map(|r| r.iter().sum()).collect();
    let col_tot: Vec<usize> = (0..kp)
        .map(|j| contingency.iter().map(|r| r[j]).sum())
        .collect();

    // NMI, arithmetic-mean normalization
    let h_true = entropy(row_tot.iter().copied(), nf);
    let h_pred = entropy(col_tot.iter().copied(), nf);
    let mut mi = 0.0;
    for i in 0..kt {
        for j in 0..kp {
            let c = contingency[i][j];
            if c > 0 {
                let c = c as f64;
                mi += c / nf * (nf * c / (row_tot[i] as f64 * col_tot[j] as f64)).ln();
            }
        }
    }
    let nmi = if h_true == 0.0 && h_pred == 0.0 {
        1.0
    } else {
        (mi / (0.5 * (h_true + h_pred))).clamp(0.0, 1.0)
    };

    // ACC via max-weight matching on the padded square contingency
    let size = kt.max(kp);
    let cost = DenseMatrix::from_fn(size, size, |p, t| {
        if p < kp && t < kt {
            -(contingency[t][p] as f64)
        } else {
            0.0
        }
    });
    let (assign, _) = min_cost_assignment(&cost)?;
    let mut matched = 0usize;
    let mut matching = Vec::new();
    for (p, &t) in assign.iter().enumerate() {
        if p < kp && t < kt {
            matched += contingency[t][p];
            matching.push((p_labels[p], t_labels[t]));
        }
    }
    let acc = matched as f64 / nf;

    // ARI, pair counting
    let index: f64 = contingency.iter().flatten().map(|&c| pairs(c)).sum();
    let sum_rows: f64 = row_tot.iter().map(|&c| pairs(c)).sum();
    let sum_cols: f64 = col_tot.iter().map(|&c| pairs(c)).sum();
    let total = pairs(n);
    let expected = if total > 0.0 {
        sum_rows * sum_cols / total
    } else {
        0.0
    };
    let max_index = 0.5 * (sum_rows + sum_cols);
    let ari = if max_index == expected {
        1.0
    } else {
        (index - expected) / (max_index - expected)
    };

    Ok(ClusteringReport {
        nmi,
        acc,
        ari,
        contingency,
        matching,
        n,
    })
}

/// Best accuracy over every relabeling of predicted clusters onto true
/// classes; exhaustive, for checking the Hungarian path.
pub fn brute_force_accuracy(y_true: &[usize], y_pred: &[usize]) -> f64 {
    let (t_ids, t_labels) = compact(y_true);
    let (p_ids, p_labels) = compact(y_pred);
    let size = t_labels.len().max(p_labels.len());
    assert!(size <= 8, "exhaustive search is factorial");
    let mut counts = vec![vec![0usize; size]; size];
    for (&t, &p) in t_ids.iter().zip(&p_ids) {
        counts[p][t] += 1;
    }
    let cost = DenseMatrix::from_fn(size, size, |p, t| -(counts[p][t] as f64));
    let (_, best) = crate::assignment::brute_force_assignment(&cost);
    -best / y_true.len() as f64
}
