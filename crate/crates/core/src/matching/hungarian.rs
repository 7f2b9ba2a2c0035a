use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::MatchError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    /// `(prediction, ground truth)` pairs sorted by prediction index.
    pub assignment: Vec<(usize, usize)>,
    pub total_cost: f64,
}

/// Minimum-cost assignment of rows to columns for an `n × m` cost matrix,
/// matching `min(n, m)` pairs.
///
/// Shortest augmenting paths with row/column potentials, `O(n² m)` for
/// `n ≤ m`; wider-than-tall inputs are solved on the transpose.
pub fn hungarian(cost: &Array2<f64>) -> Result<MatchResult, MatchError> {
    if cost.iter().any(|v| !v.is_finite()) {
        return Err(MatchError::NonFinite("cost matrix"));
    }
    let (n, m) = cost.dim();
    if n == 0 || m == 0 {
        return Ok(MatchResult {
            assignment: Vec::new(),
            total_cost: 0.0,
        });
    }
    let mut assignment = if n <= m {
        solve(n, m, |i, j| cost[[i, j]])
    } else {
        solve(m, n, |i, j| cost[[j, i]])
            .into_iter()
            .map(|(c, r)| (r, c))
            .collect()
    };
    assignment.sort_unstable();
    let total_cost = assignment.iter().map(|&(i, j)| cost[[i, j]]).sum();
    Ok(MatchResult {
        assignment,
        total_cost,
    })
}

/// Rows `0..n` to columns `0..m` with `n ≤ m`. Index 0 of the potential and
/// `way` arrays is a sentinel; rows and columns are 1-based inside.
fn solve(n: usize, m: usize, c: impl Fn(usize, usize) -> f64) -> Vec<(usize, usize)> {
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut row_of = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = c(i0 - 1, j - 1) - u[i0] - v[j];
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
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=m)
        .filter(|&j| row_of[j] != 0)
        .map(|j| (row_of[j] - 1, j - 1))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(cost: &Array2<f64>) -> f64 {
        let (n, m) = cost.dim();
        fn rec(cost: &Array2<f64>, row: usize, used: &mut Vec<bool>, left: usize, acc: f64, best: &mut f64) {
            if left == 0 {
                *best = best.min(acc);
                return;
            }
            if row == cost.nrows() {
                return;
            }
            // Skip this row only if enough rows remain to fill the quota.
            if cost.nrows() - row > left {
                rec(cost, row + 1, used, left, acc, best);
            }
            for j in 0..cost.ncols() {
                if !used[j] {
                    used[j] = true;
                    rec(cost, row + 1, used, left - 1, acc + cost[[row, j]], best);
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(cost, 0, &mut vec![false; m], n.min(m), 0.0, &mut best);
        best
    }

    #[test]
    fn small_examples() {
        let r = hungarian(&array![[1.0, 3.0], [2.0, 0.0]]).unwrap();
        assert_eq!(r.assignment, vec![(0, 0), (1, 1)]);
        assert_eq!(r.total_cost, 1.0);
        let r = hungarian(&array![[4.5]]).unwrap();
        assert_eq!(r.assignment, vec![(0, 0)]);
        let r = hungarian(&Array2::zeros((0, 3))).unwrap();
        assert!(r.assignment.is_empty());
        assert!(hungarian(&array![[f64::NAN]]).is_err());
    }

    #[test]
    fn rectangular_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..300 {
            let n = rng.gen_range(1..6);
            let m = rng.gen_range(1..6);
            let cost = Array2::from_shape_simple_fn((n, m), || rng.gen_range(-5.0..5.0));
            let r = hungarian(&cost).unwrap();
            assert_eq!(r.assignment.len(), n.min(m));
            let mut rows: Vec<_> = r.assignment.iter().map(|a| a.0).collect();
            let mut cols: Vec<_> = r.assignment.iter().map(|a| a.1).collect();
            rows.dedup();
            cols.sort_unstable();
            cols.dedup();
            assert_eq!(rows.len(), n.min(m));
            assert_eq!(cols.len(), n.min(m));
            assert!((r.total_cost - brute(&cost)).abs() < 1e-9);
        }
    }

    #[test]
    fn integer_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let n = rng.gen_range(1..6);
            let cost = Array2::from_shape_simple_fn((n, n), || rng.gen_range(0..3) as f64);
            assert_eq!(hungarian(&cost).unwrap().total_cost, brute(&cost));
        }
    }
}
