//! Set losses and subset metrics.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{contract_err, dim_err, Result};

/// A matching between the rows of two sets.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    /// `(row of A, row of B)` pairs.
    pub pairs: Vec<(usize, usize)>,
    pub total_cost: f64,
}

fn check_width(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<usize> {
    let d = a.first().or(b.first()).map_or(0, Vec::len);
    if a.iter().chain(b).any(|r| r.len() != d) {
        return dim_err("set elements have different widths");
    }
    Ok(d)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `cost[i][j] = ‖a_i − b_j‖²`.
pub fn pairwise_cost(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    check_width(a, b)?;
    Ok(a.iter()
        .map(|ai| b.iter().map(|bj| sq_dist(ai, bj)).collect())
        .collect())
}

/// Minimum-cost assignment of every row to a distinct column of a
/// rectangular cost matrix with `rows <= cols` (shortest augmenting paths
/// with dual potentials, `O(rows² · cols)`).
fn solve_rows(cost: &[Vec<f64>], cols: usize) -> Vec<usize> {
    let n = cost.len();
    let m = cols;
    // 1-based potentials and matching; column 0 is the virtual source.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
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
    let mut row_to_col = vec![0; n];
    for j in 1..=m {
        if owner[j] != 0 {
            row_to_col[owner[j] - 1] = j - 1;
        }
    }
    row_to_col
}

/// Minimum-cost matching on `min(rows, cols)` pairs of an arbitrary cost matrix.
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> Result<Assignment> {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    if cost.iter().any(|r| r.len() != cols) {
        return dim_err("ragged cost matrix");
    }
    if cost.iter().flatten().any(|c| !c.is_finite()) {
        return contract_err("cost matrix has non-finite entries");
    }
    let pairs: Vec<(usize, usize)> = if rows <= cols {
        solve_rows(cost, cols).into_iter().enumerate().collect()
    } else {
        let t: Vec<Vec<f64>> = (0..cols).map(|j| cost.iter().map(|r| r[j]).collect()).collect();
        let mut p: Vec<(usize, usize)> = solve_rows(&t, rows)
            .into_iter()
            .enumerate()
            .map(|(j, i)| (i, j))
            .collect();
        p.sort_unstable();
        p
    };
    let total_cost = pairs.iter().map(|&(i, j)| cost[i][j]).sum();
    Ok(Assignment { pairs, total_cost })
}

/// Hungarian loss between equal-size sets: optimal matching cost over `|A|`.
pub fn hungarian(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<(f64, Assignment)> {
    if a.len() != b.len() {
        return contract_err(format!("hungarian needs equal sizes, got {} and {}", a.len(), b.len()));
    }
    if a.is_empty() {
        return contract_err("hungarian of empty sets");
    }
    let cost = pairwise_cost(a, b)?;
    let assignment = min_cost_assignment(&cost)?;
    Ok((assignment.total_cost / a.len() as f64, assignment))
}

fn mean_min(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .map(|ai| b.iter().map(|bj| sq_dist(ai, bj)).fold(f64::INFINITY, f64::min))
        .sum::<f64>()
        / a.len() as f64
}

/// `(1/|A|)·Σ_a min_b ‖a−b‖² + (1/|B|)·Σ_b min_a ‖a−b‖²`.
pub fn chamfer(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return contract_err("chamfer of an empty set");
    }
    check_width(a, b)?;
    Ok(mean_min(a, b) + mean_min(b, a))
}

/// The one-sided term `(1/|A|)·Σ_a min_b ‖a−b‖²`.
pub fn chamfer_one_sided(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return contract_err("chamfer of an empty set");
    }
    check_width(a, b)?;
    Ok(mean_min(a, b))
}

pub fn set_size_rmse(true_sizes: &[usize], pred_sizes: &[usize]) -> Result<f64> {
    if true_sizes.len() != pred_sizes.len() {
        return dim_err(format!(
            "{} true sizes vs {} predicted sizes",
            true_sizes.len(),
            pred_sizes.len()
        ));
    }
    if true_sizes.is_empty() {
        return contract_err("no sizes given");
    }
    let sse: f64 = true_sizes
        .iter()
        .zip(pred_sizes)
        .map(|(&t, &p)| (t as f64 - p as f64).powi(2))
        .sum();
    Ok((sse / true_sizes.len() as f64).sqrt())
}

/// Frequency-weighted precision, recall and F1 of `R` predicted subsets.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SubsetScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Subsets are index sets; order and duplicates inside one subset are ignored.
pub fn subset_metrics(predictions: &[Vec<usize>], valid: &[Vec<usize>]) -> Result<SubsetScores> {
    if predictions.is_empty() {
        return contract_err("no predictions");
    }
    let valid: BTreeSet<BTreeSet<usize>> = valid.iter().map(|s| s.iter().copied().collect()).collect();
    if valid.is_empty() {
        return contract_err("empty valid family");
    }
    let mut freq: BTreeMap<BTreeSet<usize>, usize> = BTreeMap::new();
    for p in predictions {
        *freq.entry(p.iter().copied().collect()).or_default() += 1;
    }
    let hits: usize = freq.iter().filter(|(s, _)| valid.contains(*s)).map(|(_, &c)| c).sum();
    let covered = freq.keys().filter(|s| valid.contains(*s)).count();
    let precision = hits as f64 / predictions.len() as f64;
    let recall = covered as f64 / valid.len() as f64;
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(SubsetScores { precision, recall, f1 })
}


#[cfg(test)]
mod tests {
    use super::oracle::brute_force_assignment;
    use super::*;
    use proptest::prelude::*;

    fn p(v: &[(f64, f64)]) -> Vec<Vec<f64>> {
        v.iter().map(|&(a, b)| vec![a, b]).collect()
    }

    #[test]
    fn pairwise_examples() {
        assert_eq!(pairwise_cost(&p(&[(1.0, 2.0)]), &p(&[(1.0, 2.0)])).unwrap(), vec![vec![0.0]]);
        assert_eq!(pairwise_cost(&p(&[(0.0, 0.0)]), &p(&[(3.0, 4.0)])).unwrap(), vec![vec![25.0]]);
        assert!(pairwise_cost(&[vec![0.0]], &[vec![0.0, 1.0]]).is_err());
    }

    #[test]
    fn pairwise_matches_scalar_recomputation() {
        let a = p(&[(0.1, 0.2), (-1.0, 3.0), (2.5, 0.0), (0.0, -0.7)]);
        let b = p(&[(1.1, 0.2), (0.3, 0.3), (-2.0, 1.0), (4.0, 4.0)]);
        let c = pairwise_cost(&a, &b).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let dx = a[i][0] - b[j][0];
                let dy = a[i][1] - b[j][1];
                assert_eq!(c[i][j], dx * dx + dy * dy);
            }
        }
    }

    #[test]
    fn hungarian_examples() {
        let a = p(&[(0.0, 0.0), (1.0, 0.0)]);
        let b = p(&[(1.0, 0.0), (0.0, 0.0)]);
        let (loss, asg) = hungarian(&a, &b).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(asg.pairs, vec![(0, 1), (1, 0)]);
        assert_eq!(hungarian(&a, &a).unwrap().0, 0.0);
        assert!(hungarian(&a, &b[..1]).is_err());
    }

    #[test]
    fn rectangular_assignment_uses_the_smaller_side() {
        let cost = vec![vec![5.0, 1.0], vec![2.0, 9.0], vec![0.5, 0.5]];
        let asg = min_cost_assignment(&cost).unwrap();
        assert_eq!(asg.pairs.len(), 2);
        assert_eq!(asg.total_cost, 1.5);
    }

    #[test]
    fn chamfer_examples() {
        assert_eq!(chamfer(&p(&[(0.0, 0.0)]), &p(&[(3.0, 4.0)])).unwrap(), 50.0);
        assert_eq!(chamfer(&p(&[(0.0, 0.0), (1.0, 0.0)]), &p(&[(0.0, 0.0)])).unwrap(), 0.5);
        let a = p(&[(0.3, 0.1), (0.2, 0.9)]);
        assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
        assert!(chamfer(&a, &[]).is_err());
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(set_size_rmse(&[3, 4], &[3, 4]).unwrap(), 0.0);
        assert!((set_size_rmse(&[3, 4], &[3, 5]).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(set_size_rmse(&[0], &[2]).unwrap(), 2.0);
        assert!(set_size_rmse(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn subset_examples() {
        let s1 = vec![0, 2];
        let s2 = vec![1];
        let s3 = vec![3];
        let mut preds = vec![s1.clone(); 7];
        preds.extend(vec![s2.clone(); 3]);
        let m = subset_metrics(&preds, &[s1.clone(), s3.clone()]).unwrap();
        assert!((m.precision - 0.7).abs() < 1e-12);
        assert!((m.recall - 0.5).abs() < 1e-12);
        assert!((m.f1 - 0.7 / 1.2).abs() < 1e-12);

        let m = subset_metrics(&[s1.clone(), vec![2, 0], s3.clone()], &[s1.clone(), s3.clone()]).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));

        let m = subset_metrics(std::slice::from_ref(&s2), std::slice::from_ref(&s1)).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        assert!(subset_metrics(&[s1], &[]).is_err());
    }

    fn set_strategy(n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 2), n)
    }

    fn pair_strategy() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        (1usize..=7).prop_flat_map(|n| (set_strategy(n), set_strategy(n)))
    }

    proptest! {
        #[test]
        fn hungarian_matches_exhaustive_oracle((a, b) in pair_strategy()) {
            let cost = pairwise_cost(&a, &b).unwrap();
            let asg = min_cost_assignment(&cost).unwrap();
            let best = brute_force_assignment(&cost);
            prop_assert!((asg.total_cost - best).abs() <= 1e-9 * best.max(1.0));
            let mut rows: Vec<_> = asg.pairs.iter().map(|p| p.0).collect();
            let mut cols: Vec<_> = asg.pairs.iter().map(|p| p.1).collect();
            rows.sort_unstable();
            cols.sort_unstable();
            prop_assert_eq!(rows, (0..a.len()).collect::<Vec<_>>());
            prop_assert_eq!(cols, (0..a.len()).collect::<Vec<_>>());
            let recomputed: f64 = asg.pairs.iter().map(|&(i, j)| cost[i][j]).sum();
            prop_assert_eq!(recomputed, asg.total_cost);
        }

        #[test]
        fn hungarian_is_symmetric_and_nonnegative((a, b) in pair_strategy()) {
            let ab = hungarian(&a, &b).unwrap().0;
            let ba = hungarian(&b, &a).unwrap().0;
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - ba).abs() <= 1e-9 * ab.max(1.0));
        }

        #[test]
        fn losses_are_permutation_invariant((a, b) in pair_strategy(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut a2 = a.clone();
            a2.shuffle(&mut rng);
            let h1 = hungarian(&a, &b).unwrap().0;
            let h2 = hungarian(&a2, &b).unwrap().0;
            prop_assert!((h1 - h2).abs() <= 1e-9 * h1.max(1.0));
            let c1 = chamfer(&a, &b).unwrap();
            let c2 = chamfer(&a2, &b).unwrap();
            prop_assert!((c1 - c2).abs() <= 1e-12 * c1.max(1.0));
        }

        #[test]
        fn hungarian_zero_on_a_shuffled_copy(a in set_strategy(5), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut b = a.clone();
            b.shuffle(&mut rng);
            prop_assert_eq!(hungarian(&a, &b).unwrap().0, 0.0);
        }

        #[test]
        fn chamfer_symmetric_and_one_sided_bound((a, b) in pair_strategy()) {
            prop_assert_eq!(chamfer(&a, &b).unwrap(), chamfer(&b, &a).unwrap());
            let one = chamfer_one_sided(&a, &b).unwrap();
            let h = hungarian(&a, &b).unwrap().0;
            prop_assert!(one <= h + 1e-12);
        }
    }
}
