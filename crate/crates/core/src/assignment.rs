//! Exact minimum-cost linear assignment (Hungarian method with potentials).

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

/// Minimum-cost assignment of every row to a distinct column.
///
/// Requires `rows <= cols`. Returns the column chosen for each row and the
/// total cost. Runs in O(rows² · cols).
pub fn min_cost_assignment(cost: &DenseMatrix) -> Result<(Vec<usize>, f64)> {
    let (n, m) = cost.shape();
    if n > m {
        return Err(Error::Dimension(format!(
            "assignment needs rows <= cols, got {n}x{m}"
        )));
    }
    if n == 0 {
        return Ok((vec![], 0.0));
    }
    // 1-based potentials formulation; index 0 is a sentinel column.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];

    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![usize::MAX; n];
    for j in 1..=m {
        if owner[j] != 0 {
            assignment[owner[j] - 1] = j - 1;
        }
    }
    let total = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[(i, j)])
        .sum();
    Ok((assignment, total))
}

/// Exhaustive search over all permutations; test oracle for small squares.
pub fn brute_force_assignment(cost: &DenseMatrix) -> (Vec<usize>, f64) {
    let n = cost.rows();
    assert_eq!(n, cost.cols(), "brute force needs a square matrix");
    assert!(n <= 9, "brute force is exponential");
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = (perm.clone(), f64::INFINITY);
    permute(&mut perm, 0, cost, &mut best);
    best
}

fn permute(perm: &mut Vec<usize>, k: usize, cost: &DenseMatrix, best: &mut (Vec<usize>, f64)) {
    if k == perm.len() {
        let c: f64 = perm.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum();
        if c < best.1 {
            *best = (perm.clone(), c);
        }
        return;
    }
    for i in k..perm.len() {
        perm.swap(k, i);
        permute(perm, k + 1, cost, best);
        perm.swap(k, i);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn picks_off_diagonal_zeros() {
        let c =
            DenseMatrix::from_rows(&[[1.0, 0.0, 1.0], [0.0, 1.0, 1.0], [1.0, 1.0, 0.0]]).unwrap();
        let (a, total) = min_cost_assignment(&c).unwrap();
        assert_eq!(a, vec![1, 0, 2]);
        assert_eq!(total, 0.0);
    }

    #[test]
    fn rectangular_uses_best_columns() {
        let c = DenseMatrix::from_rows(&[[5.0, 1.0, 9.0, 3.0], [4.0, 8.0, 0.5, 2.0]]).unwrap();
        let (a, total) = min_cost_assignment(&c).unwrap();
        assert_eq!(a, vec![1, 2]);
        assert!((total - 1.5).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn matches_brute_force(n in 1usize..7, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let c = DenseMatrix::from_fn(n, n, |_, _| rng.gen_range(-5.0..5.0));
            let (_, fast) = min_cost_assignment(&c).unwrap();
            let (_, slow) = brute_force_assignment(&c);
            prop_assert!((fast - slow).abs() < 1e-9);
        }
    }
}
