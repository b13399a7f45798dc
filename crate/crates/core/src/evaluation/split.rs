use std::collections::HashMap;

use rand::seq::SliceRandom;
use serde::Serialize;

use super::EvalError;
use crate::seed::rng_for;

/// Example indices of an 80/10/10 split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct HoldoutSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Example indices of one cross-validation fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Example indices grouped by image, images in order of first appearance.
fn groups<S: AsRef<str>>(image_of: &[S]) -> Vec<Vec<usize>> {
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut out: Vec<Vec<usize>> = Vec::new();
    for (i, id) in image_of.iter().enumerate() {
        let g = *index.entry(id.as_ref()).or_insert_with(|| {
            out.push(Vec::new());
            out.len() - 1
        });
        out[g].push(i);
    }
    out
}

fn shuffled_groups<S: AsRef<str>>(image_of: &[S], seed: u64, label: &str) -> Vec<Vec<usize>> {
    let mut g = groups(image_of);
    g.shuffle(&mut rng_for(seed, label));
    g
}

fn flatten(groups: &[Vec<usize>]) -> Vec<usize> {
    let mut v: Vec<usize> = groups.iter().flatten().copied().collect();
    v.sort_unstable();
    v
}

/// Image-grouped 80/10/10 split. `image_of[i]` is the image of example `i`.
/// Validation and test each receive `round(n / 10)` images.
pub fn split_80_10_10<S: AsRef<str>>(image_of: &[S], seed: u64) -> HoldoutSplit {
    let g = shuffled_groups(image_of, seed, "split/holdout");
    let n = g.len();
    let tenth = (n as f64 / 10.0).round() as usize;
    let (val, test) = (tenth, tenth);
    let train = n - val - test;
    HoldoutSplit {
        train: flatten(&g[..train]),
        val: flatten(&g[train..train + val]),
        test: flatten(&g[train + val..]),
    }
}

/// Image-grouped k-fold cross-validation. Fold sizes differ by at most one
/// image.
pub fn k_fold<S: AsRef<str>>(image_of: &[S], k: usize, seed: u64) -> Result<Vec<Fold>, EvalError> {
    let g = shuffled_groups(image_of, seed, "split/kfold");
    if k < 2 || k > g.len() {
        return Err(EvalError::InvalidK { k, images: g.len() });
    }
    Ok((0..k)
        .map(|f| {
            let (mut test, mut train) = (Vec::new(), Vec::new());
            for (i, grp) in g.iter().enumerate() {
                if i % k == f {
                    test.extend_from_slice(grp);
                } else {
                    train.extend_from_slice(grp);
                }
            }
            test.sort_unstable();
            train.sort_unstable();
            Fold { train, test }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn images_of(ids: &[String], idx: &[usize]) -> HashSet<String> {
        idx.iter().map(|&i| ids[i].clone()).collect()
    }

    fn corpus(faces_per_image: &[usize]) -> Vec<String> {
        faces_per_image
            .iter()
            .enumerate()
            .flat_map(|(i, &n)| std::iter::repeat_n(format!("img{i}"), n))
            .collect()
    }

    #[test]
    fn ten_images_split_8_1_1() {
        let ids = corpus(&[2, 1, 3, 1, 1, 2, 4, 1, 1, 2]);
        let s = split_80_10_10(&ids, 1);
        assert_eq!(images_of(&ids, &s.train).len(), 8);
        assert_eq!(images_of(&ids, &s.val).len(), 1);
        assert_eq!(images_of(&ids, &s.test).len(), 1);
        assert_eq!(split_80_10_10(&ids, 1), s);
    }

    #[test]
    fn ten_fold_on_ten_images() {
        let ids = corpus(&[1, 2, 1, 3, 1, 1, 2, 1, 1, 1]);
        let folds = k_fold(&ids, 10, 3).unwrap();
        assert!(folds.iter().all(|f| images_of(&ids, &f.test).len() == 1));
        assert_eq!(k_fold(&ids, 11, 3), Err(EvalError::InvalidK { k: 11, images: 10 }));
        assert_eq!(k_fold(&ids, 1, 3), Err(EvalError::InvalidK { k: 1, images: 10 }));
    }

    proptest! {
        #[test]
        fn holdout_partition(sizes in prop::collection::vec(1usize..5, 1..60), seed: u64) {
            let ids = corpus(&sizes);
            let s = split_80_10_10(&ids, seed);
            let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..ids.len()).collect::<Vec<_>>());
            let (a, b, c) = (images_of(&ids, &s.train), images_of(&ids, &s.val), images_of(&ids, &s.test));
            prop_assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
            let n = sizes.len() as f64;
            prop_assert!((b.len() as f64 - n / 10.0).abs() <= 0.5);
            prop_assert!((c.len() as f64 - n / 10.0).abs() <= 0.5);
            prop_assert_eq!(split_80_10_10(&ids, seed), s);
        }

        #[test]
        fn kfold_partition(sizes in prop::collection::vec(1usize..5, 2..60), k in 2usize..12, seed: u64) {
            let ids = corpus(&sizes);
            prop_assume!(k <= sizes.len());
            let folds = k_fold(&ids, k, seed).unwrap();
            prop_assert_eq!(folds.len(), k);
            let mut seen = vec![0usize; ids.len()];
            let counts: Vec<usize> = folds.iter().map(|f| images_of(&ids, &f.test).len()).collect();
            for f in &folds {
                for &i in &f.test {
                    seen[i] += 1;
                }
                prop_assert!(images_of(&ids, &f.train).is_disjoint(&images_of(&ids, &f.test)));
                prop_assert_eq!(f.train.len() + f.test.len(), ids.len());
            }
            prop_assert!(seen.iter().all(|&c| c == 1));
            prop_assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
            prop_assert_eq!(k_fold(&ids, k, seed).unwrap(), folds);
        }
    }
}
