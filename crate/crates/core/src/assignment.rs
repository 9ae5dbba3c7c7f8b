//! Minimum-cost perfect matching on square cost matrices.

use crate::error::{Error, Result};
use crate::parts::EquivalenceClass;

/// Square matrix of finite costs, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    n: usize,
    values: Vec<f64>,
}

impl CostMatrix {
    pub fn new(n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::shape("cost matrix", format!("{n}×{n} needs {} entries, got {}", n * n, values.len())));
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("cost entry ({}, {})", bad / n.max(1), bad % n.max(1))));
        }
        Ok(Self { n, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::shape("cost matrix", "rows must all have length n"));
        }
        Self::new(n, rows.concat())
    }

    pub fn from_fn(n: usize, mut cost: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                values.push(cost(i, j));
            }
        }
        Self::new(n, values)
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.n + col]
    }

    /// Summed in row order, so equal permutations give bit-equal totals.
    pub fn total(&self, assignment: &[usize]) -> f64 {
        assignment.iter().enumerate().map(|(r, &c)| self.get(r, c)).sum()
    }
}

/// `assignment[row] = col` for a minimum-cost permutation, in O(n³).
///
/// Shortest augmenting paths with row and column potentials.
pub fn hungarian(costs: &CostMatrix) -> Vec<usize> {
    let n = costs.size();
    if n == 0 {
        return Vec::new();
    }
    // One-based internally; index 0 is the virtual source column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of_col = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        row_of_col[0] = row;
        let mut col0 = 0;
        let mut min_to = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let i0 = row_of_col[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = costs.get(i0 - 1, j - 1) - u[i0] - v[j];
                if reduced < min_to[j] {
                    min_to[j] = reduced;
                    way[j] = col0;
                }
                if min_to[j] < delta {
                    delta = min_to[j];
                    col1 = j;
                }
            }
            for j in 0..=n {
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
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[row_of_col[j] - 1] = j - 1;
    }
    assignment
}

pub const BRUTE_FORCE_LIMIT: usize = 8;

/// Exhaustive minimum over all permutations in lexicographic order; the
/// first minimum found wins ties.
pub fn brute_force_assignment(costs: &CostMatrix) -> Result<Vec<usize>> {
    let n = costs.size();
    if n > BRUTE_FORCE_LIMIT {
        return Err(Error::invalid(format!("brute force is limited to n ≤ {BRUTE_FORCE_LIMIT}, got {n}")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = perm.clone();
    let mut best_cost = costs.total(&perm);
    while next_permutation(&mut perm) {
        let c = costs.total(&perm);
        if c < best_cost {
            best_cost = c;
            best.copy_from_slice(&perm);
        }
    }
    Ok(best)
}

fn next_permutation(p: &mut [usize]) -> bool {
    if p.len() < 2 {
        return false;
    }
    let Some(i) = (0..p.len() - 1).rev().find(|&i| p[i] < p[i + 1]) else {
        return false;
    };
    let j = (i + 1..p.len()).rev().find(|&j| p[j] > p[i]).expect("a larger element exists");
    p.swap(i, j);
    p[i + 1..].reverse();
    true
}

/// Independent Hungarian matching inside every class.
///
/// Returns `matched[gt] = pred`: the prediction slot assigned to each
/// ground-truth part. `cost(pred, gt)` is only queried within a class.
pub fn match_within_classes(
    classes: &[EquivalenceClass],
    mut cost: impl FnMut(usize, usize) -> f64,
) -> Result<Vec<usize>> {
    let n: usize = classes.iter().map(EquivalenceClass::len).sum();
    let mut matched = vec![usize::MAX; n];
    for class in classes {
        let m = &class.members;
        if m.len() == 1 {
            matched[m[0]] = m[0];
            continue;
        }
        let costs = CostMatrix::from_fn(m.len(), |g, p| cost(m[p], m[g]))?;
        for (g, p) in hungarian(&costs).into_iter().enumerate() {
            matched[m[g]] = m[p];
        }
    }
    if matched.contains(&usize::MAX) {
        return Err(Error::invalid("classes do not cover every part id"));
    }
    Ok(matched)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn m(rows: &[&[f64]]) -> CostMatrix {
        CostMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn small_examples() {
        let a = m(&[&[0.0, 1.0], &[1.0, 0.0]]);
        assert_eq!(hungarian(&a), vec![0, 1]);
        let b = m(&[&[4.0, 1.0], &[2.0, 3.0]]);
        assert_eq!(hungarian(&b), vec![1, 0]);
        assert_eq!(b.total(&hungarian(&b)), 3.0);
        assert_eq!(brute_force_assignment(&m(&[&[5.0]])).unwrap(), vec![0]);
        assert!(hungarian(&CostMatrix::new(0, vec![]).unwrap()).is_empty());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(CostMatrix::new(2, vec![0.0, f64::NAN, 1.0, 1.0]).is_err());
        assert!(CostMatrix::new(2, vec![0.0; 3]).is_err());
        assert!(brute_force_assignment(&CostMatrix::new(9, vec![0.0; 81]).unwrap()).is_err());
    }

    #[test]
    fn brute_force_prefers_lexicographic_ties() {
        assert_eq!(brute_force_assignment(&CostMatrix::new(3, vec![1.0; 9]).unwrap()).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn next_permutation_enumerates_all() {
        let mut p = vec![0, 1, 2, 3];
        let mut count = 1;
        while next_permutation(&mut p) {
            count += 1;
        }
        assert_eq!(count, 24);
        assert_eq!(p, vec![3, 2, 1, 0]);
    }

    #[test]
    fn agrees_with_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for n in 1..=7 {
            for _ in 0..30 {
                let costs = CostMatrix::new(n, (0..n * n).map(|_| rng.gen_range(-5.0..5.0)).collect()).unwrap();
                let h = hungarian(&costs);
                let b = brute_force_assignment(&costs).unwrap();
                assert_eq!(costs.total(&h), costs.total(&b));
            }
        }
    }

    proptest! {
        #[test]
        fn row_shift_keeps_optimum(values in prop::collection::vec(0.0f64..10.0, 25), row in 0usize..5, shift in -3.0f64..3.0) {
            let costs = CostMatrix::new(5, values.clone()).unwrap();
            let mut shifted = values;
            for j in 0..5 {
                shifted[row * 5 + j] += shift;
            }
            let shifted = CostMatrix::new(5, shifted).unwrap();
            let base = costs.total(&hungarian(&costs));
            let moved = hungarian(&shifted);
            prop_assert!((shifted.total(&moved) - (base + shift)).abs() < 1e-9);
            prop_assert!((costs.total(&moved) - base).abs() < 1e-9);
        }

        #[test]
        fn result_is_a_permutation(values in prop::collection::vec(-1.0f64..1.0, 36)) {
            let mut p = hungarian(&CostMatrix::new(6, values).unwrap());
            p.sort_unstable();
            prop_assert_eq!(p, (0..6).collect::<Vec<_>>());
        }
    }

    #[test]
    fn class_matching() {
        let singles: Vec<EquivalenceClass> =
            (0..3).map(|i| EquivalenceClass { representative: i, members: vec![i] }).collect();
        assert_eq!(match_within_classes(&singles, |_, _| 1.0).unwrap(), vec![0, 1, 2]);

        // Parts 0 and 2 are equivalent and their predictions are swapped.
        let classes = vec![
            EquivalenceClass { representative: 0, members: vec![0, 2] },
            EquivalenceClass { representative: 1, members: vec![1] },
        ];
        let swapped = |pred: usize, gt: usize| -> f64 {
            match (pred, gt) {
                (0, 2) | (2, 0) => 0.0,
                (0, 0) | (2, 2) => 1.0,
                _ => panic!("cross-class query ({pred}, {gt})"),
            }
        };
        let matched = match_within_classes(&classes, swapped).unwrap();
        assert_eq!(matched, vec![2, 1, 0]);
    }
}
