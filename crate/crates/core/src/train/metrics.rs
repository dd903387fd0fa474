//! Ranking metrics for multilabel scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Average precision of one class: rank by descending score (ties keep
/// input order) and average the precision at each positive. `None` when
/// there are no positives.
pub fn average_precision(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if positive[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    (hits > 0).then(|| sum / hits as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapResult {
    pub map: f64,
    /// Per class; `None` for classes without positives.
    pub per_class: Vec<Option<f64>>,
    /// Classes left out of the mean for lack of positives.
    pub excluded: Vec<usize>,
}

/// Mean over classes of [`average_precision`]; `scores` and `targets` are
/// `N × C`, targets multi-hot.
pub fn mean_average_precision(scores: &Tensor<f64>, targets: &Tensor<f64>) -> Result<MapResult> {
    if scores.shape() != targets.shape() || scores.rank() != 2 {
        return Err(Error::shape("mean_average_precision", scores.shape(), targets.shape()));
    }
    let (n, c) = (scores.shape()[0], scores.shape()[1]);
    let mut per_class = Vec::with_capacity(c);
    let mut excluded = Vec::new();
    for j in 0..c {
        let col: Vec<f64> = (0..n).map(|i| scores.data()[i * c + j]).collect();
        let pos: Vec<bool> = (0..n).map(|i| targets.data()[i * c + j] > 0.5).collect();
        let ap = average_precision(&col, &pos);
        if ap.is_none() {
            excluded.push(j);
        }
        per_class.push(ap);
    }
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(Error::NoPositives);
    }
    Ok(MapResult {
        map: present.iter().sum::<f64>() / present.len() as f64,
        per_class,
        excluded,
    })
}

/// Fraction of rows where some true class is among the `k` largest logits
/// (ties resolved toward lower class index).
pub fn top_k_accuracy(logits: &Tensor<f64>, targets: &Tensor<f64>, k: usize) -> Result<f64> {
    if logits.shape() != targets.shape() || logits.rank() != 2 {
        return Err(Error::shape("top_k_accuracy", logits.shape(), targets.shape()));
    }
    let c = logits.shape()[1];
    if k == 0 || k > c {
        return Err(Error::validation("k", format!("{k} not in 1..={c}")));
    }
    let rows = logits.shape()[0];
    if rows == 0 {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for (row, t) in logits.rows().zip(targets.rows()) {
        let mut order: Vec<usize> = (0..c).collect();
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]));
        if order[..k].iter().any(|&j| t[j] > 0.5) {
            correct += 1;
        }
    }
    Ok(correct as f64 / rows as f64)
}

/// Fraction of rows whose highest score is a true class.
pub fn argmax_accuracy(scores: &Tensor<f64>, targets: &Tensor<f64>) -> Result<f64> {
    top_k_accuracy(scores, targets, 1)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn t(rows: usize, cols: usize, data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(&[rows, cols], data).unwrap()
    }

    #[test]
    fn hand_ranked_examples() {
        let ap = average_precision(&[0.9, 0.8, 0.1], &[true, false, true]).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        let ap = average_precision(&[0.1, 0.2, 0.3, 0.4], &[true, false, false, false]).unwrap();
        assert_eq!(ap, 0.25);
        assert_eq!(average_precision(&[0.3, 0.2], &[false, false]), None);
    }

    #[test]
    fn perfect_ranking_is_one() {
        let s = t(3, 2, &[0.9, 0.1, 0.2, 0.8, 0.7, 0.3]);
        let y = t(3, 2, &[1., 0., 0., 1., 1., 0.]);
        assert_eq!(mean_average_precision(&s, &y).unwrap().map, 1.0);
    }

    #[test]
    fn ties_keep_input_order() {
        assert_eq!(average_precision(&[0.5, 0.5], &[false, true]), Some(0.5));
        assert_eq!(average_precision(&[0.5, 0.5], &[true, false]), Some(1.0));
    }

    #[test]
    fn classes_without_positives_are_excluded() {
        let s = t(2, 3, &[0.9, 0.1, 0.5, 0.2, 0.8, 0.4]);
        let y = t(2, 3, &[1., 0., 0., 0., 1., 0.]);
        let r = mean_average_precision(&s, &y).unwrap();
        assert_eq!(r.excluded, vec![2]);
        assert_eq!(r.per_class[2], None);
        assert_eq!(r.map, 1.0);
        let err = mean_average_precision(&s, &Tensor::zeros(&[2, 3])).unwrap_err();
        assert!(matches!(err, Error::NoPositives));
    }

    #[test]
    fn top_k_examples() {
        let l = t(2, 3, &[0.1, 0.9, 0.5, 0.3, 0.2, 0.1]);
        let y = t(2, 3, &[0., 1., 0., 0., 0., 1.]);
        assert_eq!(top_k_accuracy(&l, &y, 1).unwrap(), 0.5);
        assert_eq!(top_k_accuracy(&l, &y, 3).unwrap(), 1.0);
        assert!(top_k_accuracy(&l, &y, 4).is_err());
    }

    #[test]
    fn random_top5_of_200_matches_binomial_rate() {
        let (trials, c, k) = (100_000usize, 200usize, 5usize);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut logits = Vec::with_capacity(trials * c);
        let mut targets = vec![0.0; trials * c];
        for i in 0..trials {
            logits.extend((0..c).map(|_| rng.gen::<f64>()));
            targets[i * c + rng.gen_range(0..c)] = 1.0;
        }
        let acc = top_k_accuracy(&t(trials, c, &logits), &t(trials, c, &targets), k).unwrap();
        let p = k as f64 / c as f64;
        let sigma = (p * (1.0 - p) / trials as f64).sqrt();
        assert!((acc - p).abs() < 3.0 * sigma, "{acc} vs {p} ± {}", 3.0 * sigma);
    }

    proptest! {
        #[test]
        fn map_is_invariant_under_increasing_transforms(seed in any::<u64>(), n in 2usize..30, c in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s: Vec<f64> = (0..n * c).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let mut y: Vec<f64> = (0..n * c).map(|_| if rng.gen_bool(0.3) { 1.0 } else { 0.0 }).collect();
            y[0] = 1.0;
            let warped: Vec<f64> = s.iter().map(|v| (2.0 * v).exp() + v.powi(3)).collect();
            let a = mean_average_precision(&t(n, c, &s), &t(n, c, &y)).unwrap();
            let b = mean_average_precision(&t(n, c, &warped), &t(n, c, &y)).unwrap();
            prop_assert!((0.0..=1.0).contains(&a.map));
            prop_assert_eq!(a, b);
        }
    }
}
