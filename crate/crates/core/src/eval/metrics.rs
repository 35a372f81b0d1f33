//! Threshold accuracy and average precision.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scores in `[0, 1]` (probability of "generated") with binary labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSet {
    pub subset: String,
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
}

impl ScoredSet {
    pub fn new(subset: impl Into<String>, scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} labels", scores.len()),
                actual: format!("{}", labels.len()),
            });
        }
        if scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::InvalidInput("scores must lie in [0, 1]".into()));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::InvalidInput("labels must be 0 or 1".into()));
        }
        Ok(Self {
            subset: subset.into(),
            scores,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Decision threshold: `score >= threshold` means generated.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Fraction of examples whose thresholded score matches the label.
pub fn accuracy(s: &ScoredSet, threshold: f64) -> Result<f64> {
    if s.is_empty() {
        return Err(Error::Empty("scored set"));
    }
    let correct = s
        .scores
        .iter()
        .zip(&s.labels)
        .filter(|(&p, &y)| u8::from(p >= threshold) == y)
        .count();
    Ok(correct as f64 / s.len() as f64)
}

/// Mean of precision@k over the ranks k of positives, ranking by score
/// descending with ties kept in original order.
pub fn average_precision(s: &ScoredSet) -> Result<f64> {
    let positives = s.labels.iter().filter(|&&l| l == 1).count();
    if positives == 0 {
        return Err(Error::InvalidInput("average precision needs at least one positive".into()));
    }
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s.scores[b].total_cmp(&s.scores[a]));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if s.labels[i] == 1 {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / positives as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(scores: &[f64], labels: &[u8]) -> ScoredSet {
        ScoredSet::new("s", scores.to_vec(), labels.to_vec()).unwrap()
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&set(&[0.9, 0.8, 0.3], &[1, 1, 0]), 0.5).unwrap(), 1.0);
        assert!((accuracy(&set(&[0.9, 0.8, 0.7], &[1, 0, 1]), 0.5).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(accuracy(&set(&[0.5, 0.5], &[1, 1]), 0.5).unwrap(), 1.0);
        assert!(accuracy(&set(&[], &[]), 0.5).is_err());
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&set(&[0.9, 0.8, 0.1], &[1, 1, 0])).unwrap(), 1.0);
        let ap = average_precision(&set(&[0.9, 0.8, 0.7], &[1, 0, 1])).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
        assert!(average_precision(&set(&[0.2, 0.3], &[0, 0])).is_err());
    }

    #[test]
    fn single_positive_first_and_last() {
        assert_eq!(average_precision(&set(&[0.9, 0.1, 0.2, 0.3], &[1, 0, 0, 0])).unwrap(), 1.0);
        assert_eq!(average_precision(&set(&[0.05, 0.1, 0.2, 0.3], &[1, 0, 0, 0])).unwrap(), 0.25);
    }

    #[test]
    fn construction_rejects_bad_sets() {
        assert!(ScoredSet::new("s", vec![0.1], vec![]).is_err());
        assert!(ScoredSet::new("s", vec![1.5], vec![1]).is_err());
        assert!(ScoredSet::new("s", vec![0.5], vec![2]).is_err());
    }

    proptest! {
        #[test]
        fn ap_invariant_under_increasing_transform(
            rows in proptest::collection::vec((0.0f64..1.0, 0u8..2), 1..60)
        ) {
            prop_assume!(rows.iter().any(|r| r.1 == 1));
            let s = set(&rows.iter().map(|r| r.0).collect::<Vec<_>>(), &rows.iter().map(|r| r.1).collect::<Vec<_>>());
            let t = ScoredSet { scores: s.scores.iter().map(|v| v.powi(3)).collect(), ..s.clone() };
            prop_assert_eq!(average_precision(&s).unwrap(), average_precision(&t).unwrap());
        }

        #[test]
        fn accuracy_invariant_under_permutation(
            rows in proptest::collection::vec((0.0f64..1.0, 0u8..2), 1..60),
            rot in 0usize..60
        ) {
            let s = set(&rows.iter().map(|r| r.0).collect::<Vec<_>>(), &rows.iter().map(|r| r.1).collect::<Vec<_>>());
            let mut perm = rows.clone();
            let k = rot % perm.len();
            perm.rotate_left(k);
            perm.reverse();
            let p = set(&perm.iter().map(|r| r.0).collect::<Vec<_>>(), &perm.iter().map(|r| r.1).collect::<Vec<_>>());
            prop_assert_eq!(accuracy(&s, 0.5).unwrap(), accuracy(&p, 0.5).unwrap());
        }

        #[test]
        fn ap_lies_in_unit_interval(
            rows in proptest::collection::vec((0.0f64..1.0, 0u8..2), 1..60)
        ) {
            prop_assume!(rows.iter().any(|r| r.1 == 1));
            let s = set(&rows.iter().map(|r| r.0).collect::<Vec<_>>(), &rows.iter().map(|r| r.1).collect::<Vec<_>>());
            let ap = average_precision(&s).unwrap();
            prop_assert!(ap > 0.0 && ap <= 1.0);
        }
    }
}
