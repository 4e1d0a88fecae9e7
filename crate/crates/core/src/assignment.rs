//! Maximum-weight linear sum assignment (Hungarian method with potentials).
//!
//! Costs are lexicographic pairs: the negated weight first, then `|i - j|`,
//! so among equally heavy assignments the one closest to the diagonal wins.
//! With all weights equal this returns row i -> column i.

use std::cmp::Ordering;
use std::ops::{Add, Sub};

#[derive(Clone, Copy, Debug, PartialEq)]
struct Cost(f64, i64);

impl Cost {
    const ZERO: Cost = Cost(0.0, 0);
    const INF: Cost = Cost(f64::INFINITY, i64::MAX);

    fn lt(self, other: Cost) -> bool {
        match self.0.partial_cmp(&other.0) {
            Some(Ordering::Less) => true,
            Some(Ordering::Equal) => self.1 < other.1,
            _ => false,
        }
    }
}

impl Add for Cost {
    type Output = Cost;
    fn add(self, o: Cost) -> Cost {
        Cost(self.0 + o.0, self.1.saturating_add(o.1))
    }
}

impl Sub for Cost {
    type Output = Cost;
    fn sub(self, o: Cost) -> Cost {
        Cost(self.0 - o.0, self.1.saturating_sub(o.1))
    }
}

/// Solves for n <= m rows/cols; returns the column for each row.
fn hungarian(n: usize, m: usize, cost: impl Fn(usize, usize) -> Cost) -> Vec<usize> {
    // 1-based arrays; column 0 is the virtual root.
    let mut u = vec![Cost::ZERO; n + 1];
    let mut v = vec![Cost::ZERO; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![Cost::INF; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = Cost::INF;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur.lt(minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j].lt(delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] = u[p[j]] + delta;
                    v[j] = v[j] - delta;
                } else {
                    minv[j] = minv[j] - delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0usize; n];
    for j in 1..=m {
        if p[j] != 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    row_to_col
}

/// Assigns min(n1, n2) rows to distinct columns maximizing the total weight.
/// `weights` is row-major `n1 x n2`. Returns the column of each row (`None`
/// for rows left over when n1 > n2).
pub fn solve_assignment(weights: &[f64], n1: usize, n2: usize) -> Vec<Option<usize>> {
    assert_eq!(weights.len(), n1 * n2, "weight matrix must be n1 x n2");
    debug_assert!(weights.iter().all(|w| w.is_finite()), "weights must be finite");
    if n1 == 0 || n2 == 0 {
        return vec![None; n1];
    }
    let tie = |i: usize, j: usize| (i as i64 - j as i64).abs();
    if n1 <= n2 {
        hungarian(n1, n2, |i, j| Cost(-weights[i * n2 + j], tie(i, j)))
            .into_iter()
            .map(Some)
            .collect()
    } else {
        let cols = hungarian(n2, n1, |j, i| Cost(-weights[i * n2 + j], tie(i, j)));
        let mut row_to_col = vec![None; n1];
        for (j, i) in cols.into_iter().enumerate() {
            row_to_col[i] = Some(j);
        }
        row_to_col
    }
}

/// Total weight of an assignment.
pub fn assignment_weight(weights: &[f64], n2: usize, row_to_col: &[Option<usize>]) -> f64 {
    row_to_col
        .iter()
        .enumerate()
        .filter_map(|(i, j)| j.map(|j| weights[i * n2 + j]))
        .sum()
}
