//! Minimum-cost rectangular assignment (Hungarian method with potentials).

use crate::error::{Error, Result};

/// Optimal injective assignment of rows to columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Association {
    /// `(row, column)` pairs, one per row, ordered by row.
    pub pairs: Vec<(usize, usize)>,
    pub total_cost: f64,
}

impl Association {
    pub fn column_of(&self, row: usize) -> usize {
        self.pairs[row].1
    }
}

/// Solves `min sum_r cost[r][col(r)]` over injective `col`, for a
/// `rows x cols` matrix with `rows <= cols`. Runs in `O(rows^2 cols)`.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<Association> {
    let n = cost.len();
    if n == 0 {
        return Ok(Association { pairs: vec![], total_cost: 0.0 });
    }
    let m = cost[0].len();
    if cost.iter().any(|r| r.len() != m) {
        return Err(Error::Domain("cost matrix rows differ in length".into()));
    }
    if n > m {
        return Err(Error::Config(format!("{n} rows cannot be assigned to {m} columns")));
    }
    if cost.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::Domain("cost matrix must be finite".into()));
    }

    // 1-based potentials and matching; column 0 is a virtual source.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut row_of_col = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for row in 1..=n {
        row_of_col[0] = row;
        let mut col0 = 0;
        let mut min_to = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[col0] = true;
            let r0 = row_of_col[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let reduced = cost[r0 - 1][j - 1] - u[r0] - v[j];
                if reduced < min_to[j] {
                    min_to[j] = reduced;
                    way[j] = col0;
                }
                if min_to[j] < delta {
                    delta = min_to[j];
                    col1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[row_of_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_to[j] -= delta;
                }
            }
            col0 = col1;
            if row_of_col[col0] == 0 {
                break;
            }
        }
        loop {
            let prev = way[col0];
            row_of_col[col0] = row_of_col[prev];
            col0 = prev;
            if col0 == 0 {
                break;
            }
        }
    }

    let mut pairs: Vec<(usize, usize)> = (1..=m)
        .filter(|&j| row_of_col[j] != 0)
        .map(|j| (row_of_col[j] - 1, j - 1))
        .collect();
    pairs.sort_unstable();
    let total_cost = pairs.iter().map(|&(r, c)| cost[r][c]).sum();
    Ok(Association { pairs, total_cost })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive minimum over all injective maps rows -> columns.
    fn brute_force(cost: &[Vec<f64>]) -> f64 {
        fn go(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>) -> f64 {
            if row == cost.len() {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for c in 0..used.len() {
                if !used[c] {
                    used[c] = true;
                    best = best.min(cost[row][c] + go(cost, row + 1, used));
                    used[c] = false;
                }
            }
            best
        }
        go(cost, 0, &mut vec![false; cost[0].len()])
    }

    #[test]
    fn small_examples() {
        let a = hungarian(&[vec![1.0, 2.0], vec![3.0, 1.0]]).unwrap();
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(a.total_cost, 2.0);
        let diag: Vec<Vec<f64>> = (0..5).map(|i| (0..5).map(|j| if i == j { 0.0 } else { 10.0 }).collect()).collect();
        let a = hungarian(&diag).unwrap();
        assert!(a.pairs.iter().all(|(r, c)| r == c));
        assert!(matches!(hungarian(&[vec![1.0], vec![2.0]]), Err(Error::Config(_))));
    }

    #[test]
    fn matches_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..200 {
            let h = rng.gen_range(1..=8);
            let t = rng.gen_range(1..=h.min(6));
            let cost: Vec<Vec<f64>> = (0..t).map(|_| (0..h).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
            let a = hungarian(&cost).unwrap();
            let cols: std::collections::HashSet<usize> = a.pairs.iter().map(|p| p.1).collect();
            assert_eq!(cols.len(), t);
            assert!((a.total_cost - brute_force(&cost)).abs() < 1e-12);
        }
    }
}
