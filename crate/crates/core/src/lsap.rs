//! Rectangular linear sum assignment (Hungarian algorithm with potentials,
//! shortest augmenting path formulation, O(n^2 m)).
//!
//! Used for attractor/centroid matching, PIT permutation search and DER
//! speaker mapping.

/// Minimum-cost assignment on a `rows x cols` row-major cost matrix.
///
/// Returns, for every row, the column assigned to it. When `rows > cols`
/// exactly `rows - cols` rows are left unassigned (`None`). Costs must be
/// finite.
///
/// Ties are resolved by scan order: among equally cheap columns the lowest
/// index is taken first, so identical inputs always give identical output.
pub fn linear_sum_assignment(cost: &[f64], rows: usize, cols: usize) -> Vec<Option<usize>> {
    assert_eq!(cost.len(), rows * cols, "cost matrix size mismatch");
    debug_assert!(cost.iter().all(|c| c.is_finite()), "non-finite cost");
    if rows == 0 || cols == 0 {
        return vec![None; rows];
    }
    if rows <= cols {
        solve(|i, j| cost[i * cols + j], rows, cols)
            .into_iter()
            .map(Some)
            .collect()
    } else {
        let by_col = solve(|i, j| cost[j * cols + i], cols, rows);
        let mut out = vec![None; rows];
        for (c, r) in by_col.into_iter().enumerate() {
            out[r] = Some(c);
        }
        out
    }
}

/// Core solver for `n <= m`; returns the column of each row.
fn solve(a: impl Fn(usize, usize) -> f64, n: usize, m: usize) -> Vec<usize> {
    debug_assert!(n <= m);
    // 1-based potentials; index 0 is the virtual source column.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    let mut minv = vec![0.0f64; m + 1];
    let mut used = vec![false; m + 1];

    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0usize;
        minv.iter_mut().for_each(|x| *x = f64::INFINITY);
        used.iter_mut().for_each(|x| *x = false);
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = a(i0 - 1, j - 1) - u[i0] - v[j];
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

    let mut out = vec![0usize; n];
    for j in 1..=m {
        if owner[j] != 0 {
            out[owner[j] - 1] = j - 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn total(cost: &[f64], cols: usize, a: &[Option<usize>]) -> f64 {
        a.iter()
            .enumerate()
            .filter_map(|(i, c)| c.map(|c| cost[i * cols + c]))
            .sum()
    }

    /// Exhaustive minimum over injective row->column maps (rows <= cols).
    fn brute(cost: &[f64], rows: usize, cols: usize) -> f64 {
        fn rec(cost: &[f64], cols: usize, i: usize, rows: usize, used: &mut [bool]) -> f64 {
            if i == rows {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for j in 0..cols {
                if !used[j] {
                    used[j] = true;
                    best = best.min(cost[i * cols + j] + rec(cost, cols, i + 1, rows, used));
                    used[j] = false;
                }
            }
            best
        }
        rec(cost, cols, 0, rows, &mut vec![false; cols])
    }

    #[test]
    fn square_known_case() {
        let cost = [4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0];
        let a = linear_sum_assignment(&cost, 3, 3);
        assert_eq!(a, vec![Some(1), Some(0), Some(2)]);
        assert_eq!(total(&cost, 3, &a), 5.0);
    }

    #[test]
    fn more_rows_than_cols_leaves_rows_unassigned() {
        let cost = [1.0, 10.0, 10.0, 1.0, 5.0, 5.0];
        let a = linear_sum_assignment(&cost, 3, 2);
        assert_eq!(a.iter().filter(|x| x.is_none()).count(), 1);
        assert_eq!(a[0], Some(0));
        assert_eq!(a[1], Some(1));
        assert_eq!(a[2], None);
    }

    #[test]
    fn uniform_costs_give_identity() {
        let cost = vec![1.0; 12];
        let a = linear_sum_assignment(&cost, 3, 4);
        assert_eq!(a, vec![Some(0), Some(1), Some(2)]);
    }

    #[test]
    fn empty() {
        assert!(linear_sum_assignment(&[], 0, 3).is_empty());
        assert_eq!(linear_sum_assignment(&[], 2, 0), vec![None, None]);
    }

    proptest! {
        #[test]
        fn matches_brute_force(rows in 1usize..5, extra in 0usize..3, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let cols = rows + extra;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let cost: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-5.0..5.0)).collect();
            let a = linear_sum_assignment(&cost, rows, cols);
            let mut seen = vec![false; cols];
            for c in a.iter().flatten() {
                prop_assert!(!seen[*c]);
                seen[*c] = true;
            }
            let got = total(&cost, cols, &a);
            prop_assert!((got - brute(&cost, rows, cols)).abs() < 1e-9);
        }
    }
}
