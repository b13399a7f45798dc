use std::collections::BTreeMap;

use serde::Serialize;

use super::EvalError;

/// Chance-corrected agreement. `kappa` is `None` when chance agreement is 1
/// (for Cohen's kappa only when observed agreement is below 1 as well).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Agreement {
    pub kappa: Option<f64>,
    pub observed: f64,
    pub chance: f64,
}

/// `(num, den)` of `(p_o - p_e) / (1 - p_e)` scaled to integers; `den == 0`
/// means `p_e == 1`.
fn finish(num: i128, den: i128, observed: f64, chance: f64, perfect_is_one: bool) -> Agreement {
    let kappa = if den == 0 {
        (perfect_is_one && observed == 1.0).then_some(1.0)
    } else {
        Some(num as f64 / den as f64)
    };
    Agreement { kappa, observed, chance }
}

/// Cohen's kappa from a square agreement table (`table[a][b]` counts items
/// rated `a` by the first rater and `b` by the second).
pub fn cohen_kappa_table(table: &[Vec<u64>]) -> Result<Agreement, EvalError> {
    let k = table.len();
    if let Some(row) = table.iter().find(|r| r.len() != k) {
        return Err(EvalError::ShapeMismatch { left: k, right: row.len() });
    }
    let n: u64 = table.iter().flatten().sum();
    if n == 0 {
        return Err(EvalError::EmptyInput);
    }
    let agree: u64 = (0..k).map(|i| table[i][i]).sum();
    let marginal: u128 = (0..k)
        .map(|i| {
            let row: u64 = table[i].iter().sum();
            let col: u64 = table.iter().map(|r| r[i]).sum();
            row as u128 * col as u128
        })
        .sum();
    let nn = n as u128 * n as u128;
    let num = (n as u128 * agree as u128) as i128 - marginal as i128;
    let den = nn as i128 - marginal as i128;
    Ok(finish(num, den, agree as f64 / n as f64, marginal as f64 / nn as f64, true))
}

/// Cohen's kappa of two aligned label sequences.
pub fn cohen_kappa<T: Ord>(a: &[T], b: &[T]) -> Result<Agreement, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::ShapeMismatch { left: a.len(), right: b.len() });
    }
    let cats: BTreeMap<&T, usize> = {
        let mut m = BTreeMap::new();
        for x in a.iter().chain(b) {
            m.insert(x, 0);
        }
        m.into_keys().enumerate().map(|(i, c)| (c, i)).collect()
    };
    let mut table = vec![vec![0u64; cats.len()]; cats.len()];
    for (x, y) in a.iter().zip(b) {
        table[cats[x]][cats[y]] += 1;
    }
    cohen_kappa_table(&table)
}

/// Scott's pi: two raters with chance agreement from the pooled marginals.
/// Equals Fleiss' kappa with two ratings per item.
pub fn scott_pi<T: Ord>(a: &[T], b: &[T]) -> Result<Agreement, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::ShapeMismatch { left: a.len(), right: b.len() });
    }
    if a.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut pooled: BTreeMap<&T, u128> = BTreeMap::new();
    for x in a.iter().chain(b) {
        *pooled.entry(x).or_default() += 1;
    }
    let n = a.len() as u128;
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count() as u128;
    let sq: u128 = pooled.values().map(|c| c * c).sum();
    let num = (4 * n * agree) as i128 - sq as i128;
    let den = (4 * n * n) as i128 - sq as i128;
    Ok(finish(num, den, agree as f64 / n as f64, sq as f64 / (4 * n * n) as f64, false))
}

/// Fleiss' kappa. `ratings[i][j]` is the number of raters who put item `i`
/// in category `j`; every row must sum to the same `n >= 2`.
pub fn fleiss_kappa(ratings: &[Vec<u64>]) -> Result<Agreement, EvalError> {
    let first = ratings.first().ok_or(EvalError::EmptyInput)?;
    let k = first.len();
    let n: u64 = first.iter().sum();
    for (i, row) in ratings.iter().enumerate() {
        if row.len() != k {
            return Err(EvalError::ShapeMismatch { left: k, right: row.len() });
        }
        let got: u64 = row.iter().sum();
        if got != n || n < 2 {
            return Err(EvalError::RaterCount { item: i, expected: n.max(2), got });
        }
    }
    let items = ratings.len() as u128;
    let n = n as u128;
    // Sum over items of sum_j n_ij^2 - n, and the category totals.
    let mut s: u128 = 0;
    let mut totals = vec![0u128; k];
    for row in ratings {
        s += row.iter().map(|&c| c as u128 * c as u128).sum::<u128>() - n;
        for (t, &c) in totals.iter_mut().zip(row) {
            *t += c as u128;
        }
    }
    let t = items * n;
    let q: u128 = totals.iter().map(|c| c * c).sum();
    let pairs = items * n * (n - 1);
    let num = (s * t * t) as i128 - (q * pairs) as i128;
    let den = (pairs * (t * t - q)) as i128;
    let observed = s as f64 / pairs as f64;
    Ok(finish(num, den, observed, q as f64 / (t * t) as f64, false))
}

/// Builds the Fleiss rating matrix from per-item label lists over a sorted
/// category set.
pub fn category_counts<T: Ord + Clone>(items: &[Vec<T>]) -> (Vec<T>, Vec<Vec<u64>>) {
    let mut cats: Vec<T> = items.iter().flatten().cloned().collect();
    cats.sort();
    cats.dedup();
    let rows = items
        .iter()
        .map(|labels| {
            let mut row = vec![0u64; cats.len()];
            for l in labels {
                row[cats.binary_search(l).expect("category collected above")] += 1;
            }
            row
        })
        .collect();
    (cats, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_for;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn cohen_derived_table() {
        let a = cohen_kappa_table(&[vec![20, 5], vec![10, 15]]).unwrap();
        assert_eq!(a.kappa, Some(0.4));
        assert_eq!(a.observed, 0.7);
        assert_eq!(a.chance, 0.5);
    }

    #[test]
    fn cohen_from_sequences_matches_table() {
        let mut a = Vec::new();
        let mut b = Vec::new();
        for (x, y, n) in [(0, 0, 20), (0, 1, 5), (1, 0, 10), (1, 1, 15)] {
            a.extend(std::iter::repeat_n(x, n));
            b.extend(std::iter::repeat_n(y, n));
        }
        assert_eq!(cohen_kappa(&a, &b).unwrap().kappa, Some(0.4));
    }

    #[test]
    fn perfect_and_degenerate() {
        let seq = ["x", "y", "x", "z"];
        assert_eq!(cohen_kappa(&seq, &seq).unwrap().kappa, Some(1.0));
        assert_eq!(fleiss_kappa(&[vec![3, 0], vec![0, 3], vec![3, 0]]).unwrap().kappa, Some(1.0));
        assert_eq!(fleiss_kappa(&[vec![3], vec![3]]).unwrap().kappa, None);
        assert_eq!(cohen_kappa(&["a", "a"], &["a", "a"]).unwrap().kappa, Some(1.0));
        assert!(cohen_kappa(&["a"], &["a", "b"]).is_err());
        assert!(matches!(
            fleiss_kappa(&[vec![2, 1], vec![1, 1]]),
            Err(EvalError::RaterCount { item: 1, .. })
        ));
    }

    #[test]
    fn fleiss_reference_example() {
        // Fleiss (1971) style worked example: 10 items, 14 raters, 5 categories.
        let r = vec![
            vec![0, 0, 0, 0, 14],
            vec![0, 2, 6, 4, 2],
            vec![0, 0, 3, 5, 6],
            vec![0, 3, 9, 2, 0],
            vec![2, 2, 8, 1, 1],
            vec![7, 7, 0, 0, 0],
            vec![3, 2, 6, 3, 0],
            vec![2, 5, 3, 2, 2],
            vec![6, 5, 2, 1, 0],
            vec![0, 2, 2, 3, 7],
        ];
        let k = fleiss_kappa(&r).unwrap().kappa.unwrap();
        assert!((k - 0.20993).abs() < 1e-4, "{k}");
    }

    #[test]
    fn independent_raters_near_zero() {
        let mut rng = rng_for(11, "test/kappa");
        let a: Vec<u8> = (0..10_000).map(|_| rng.random_range(0..3)).collect();
        let b: Vec<u8> = (0..10_000).map(|_| rng.random_range(0..3)).collect();
        assert!(cohen_kappa(&a, &b).unwrap().kappa.unwrap().abs() < 0.1);
    }

    proptest! {
        #[test]
        fn fleiss_two_raters_equals_scott(pairs in prop::collection::vec((0u8..4, 0u8..4), 1..80)) {
            let (a, b): (Vec<u8>, Vec<u8>) = pairs.iter().copied().unzip();
            let items: Vec<Vec<u8>> = pairs.iter().map(|&(x, y)| vec![x, y]).collect();
            let (_, counts) = category_counts(&items);
            let f = fleiss_kappa(&counts).unwrap();
            let s = scott_pi(&a, &b).unwrap();
            match (f.kappa, s.kappa) {
                (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-12),
                (x, y) => prop_assert_eq!(x, y),
            }
            if let Some(k) = cohen_kappa(&a, &b).unwrap().kappa {
                prop_assert!(k <= 1.0);
            }
            if let Some(k) = f.kappa {
                prop_assert!(k <= 1.0 + 1e-12);
            }
        }
    }
}
