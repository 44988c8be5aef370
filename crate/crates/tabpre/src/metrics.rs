//! Evaluation metrics: RMSE, accuracy, ROC-AUC (Mann-Whitney rank form),
//! log-loss.

use serde::{Deserialize, Serialize};

use crate::data::TaskType;
use crate::error::TabError;

pub const PROB_CLIP: f64 = 1e-15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Rmse,
    Accuracy,
    RocAuc,
    Logloss,
}

impl MetricKind {
    /// Dataset-to-metric mapping: regression→rmse, multiclass→accuracy,
    /// binclass→roc_auc. Datasets scored by log-loss opt in explicitly.
    pub fn for_task(task: TaskType, use_logloss: bool) -> MetricKind {
        match task {
            TaskType::Regression => MetricKind::Rmse,
            TaskType::Binclass => MetricKind::RocAuc,
            TaskType::Multiclass => {
                if use_logloss {
                    MetricKind::Logloss
                } else {
                    MetricKind::Accuracy
                }
            }
        }
    }

    pub fn higher_is_better(self) -> bool {
        matches!(self, MetricKind::Accuracy | MetricKind::RocAuc)
    }

    /// Signed value where larger is always better, for argmax-style
    /// comparisons across metric kinds.
    pub fn oriented(self, value: f64) -> f64 {
        if self.higher_is_better() {
            value
        } else {
            -value
        }
    }
}

pub fn rmse(pred: &[f64], y: &[f64]) -> Result<f64, TabError> {
    if pred.len() != y.len() {
        return Err(TabError::Metric("length mismatch".into()));
    }
    let s: f64 = pred.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((s / pred.len() as f64).sqrt())
}

/// Accuracy from per-row logits (argmax) against class labels.
pub fn accuracy(logits: &[Vec<f64>], y: &[usize]) -> Result<f64, TabError> {
    if logits.len() != y.len() {
        return Err(TabError::Metric("length mismatch".into()));
    }
    let correct = logits
        .iter()
        .zip(y)
        .filter(|(row, &t)| {
            let arg = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap();
            arg == t
        })
        .count();
    Ok(correct as f64 / y.len() as f64)
}

/// Multiclass log-loss on probabilities clipped at 1e-15.
pub fn logloss(probs: &[Vec<f64>], y: &[usize]) -> Result<f64, TabError> {
    if probs.len() != y.len() {
        return Err(TabError::Metric("length mismatch".into()));
    }
    let s: f64 = probs
        .iter()
        .zip(y)
        .map(|(row, &t)| -row[t].clamp(PROB_CLIP, 1.0 - PROB_CLIP).ln())
        .sum();
    Ok(s / y.len() as f64)
}

/// Binary log-loss on positive-class probabilities.
pub fn logloss_binary(probs: &[f64], y: &[usize]) -> Result<f64, TabError> {
    let rows: Vec<Vec<f64>> = probs.iter().map(|&p| vec![1.0 - p, p]).collect();
    logloss(&rows, y)
}

/// ROC-AUC via the Mann-Whitney rank-sum formulation:
/// P(score⁺ > score⁻) + ½·P(tie). Ties get average ranks.
pub fn roc_auc(scores: &[f64], labels: &[usize]) -> Result<f64, TabError> {
    if scores.len() != labels.len() {
        return Err(TabError::Metric("length mismatch".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(TabError::Metric("roc_auc requires both classes present".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    // average ranks over tie groups (1-based ranks)
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    let rank_sum_pos: f64 = labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l == 1)
        .map(|(i, _)| ranks[i])
        .sum();
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Two-sample Kolmogorov-Smirnov statistic (maximum CDF gap).
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|x, y| x.partial_cmp(y).unwrap());
    sb.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < sa.len() && j < sb.len() {
        let x = sa[i].min(sb[j]);
        while i < sa.len() && sa[i] <= x {
            i += 1;
        }
        while j < sb.len() && sb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// One-sided sign test p-value: probability of at least `wins` successes in
/// `n` fair coin flips (ties must be excluded by the caller).
pub fn sign_test_p(wins: usize, n: usize) -> f64 {
    let mut p = 0.0;
    for k in wins..=n {
        p += binom(n, k) * 0.5f64.powi(n as i32);
    }
    p.min(1.0)
}

fn binom(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    let mut r = 1.0;
    for i in 0..k {
        r = r * (n - i) as f64 / (i + 1) as f64;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// O(n²) pair-counting oracle for ROC-AUC.
    fn auc_brute(scores: &[f64], labels: &[usize]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            if li != 1 {
                continue;
            }
            for (j, &lj) in labels.iter().enumerate() {
                if lj != 0 {
                    continue;
                }
                den += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
        num / den
    }

    #[test]
    fn spec_example_point_75() {
        let auc = roc_auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap();
        assert!((auc - 0.75).abs() < 1e-12);
    }

    #[test]
    fn perfect_and_inverted() {
        let scores = vec![0.1, 0.2, 0.8, 0.9];
        let labels = vec![0, 0, 1, 1];
        assert!((roc_auc(&scores, &labels).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        assert!(roc_auc(&neg, &labels).unwrap().abs() < 1e-12);
    }

    #[test]
    fn matches_pair_counting_on_random_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..100 {
            let n = 10 + (rng.gen::<u64>() % 90) as usize;
            // quantize scores so ties occur
            let scores: Vec<f64> =
                (0..n).map(|_| (rng.gen::<f64>() * 10.0).round() / 10.0).collect();
            let mut labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2usize)).collect();
            labels[0] = 0;
            labels[1] = 1;
            let fast = roc_auc(&scores, &labels).unwrap();
            let slow = auc_brute(&scores, &labels);
            assert!((fast - slow).abs() < 1e-12, "fast {fast} slow {slow}");
        }
    }

    #[test]
    fn auc_monotone_invariance_and_antisymmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 200;
        let scores: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2usize)).collect();
        let base = roc_auc(&scores, &labels).unwrap();
        let warped: Vec<f64> = scores.iter().map(|&s| (3.0 * s).exp()).collect();
        assert!((roc_auc(&warped, &labels).unwrap() - base).abs() < 1e-12);
        let negated: Vec<f64> = scores.iter().map(|&s| -s).collect();
        assert!((roc_auc(&negated, &labels).unwrap() + base - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_class_is_an_error() {
        assert!(roc_auc(&[0.1, 0.2], &[1, 1]).is_err());
    }

    #[test]
    fn trivial_values() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        let shifted: Vec<f64> = vec![3.0, 4.0, 5.0];
        let truth = vec![1.0, 2.0, 3.0];
        assert!((rmse(&shifted, &truth).unwrap() - 2.0).abs() < 1e-12);
        let ll = logloss_binary(&[0.5, 0.5], &[0, 1]).unwrap();
        assert!((ll - (2.0f64).ln()).abs() < 1e-12);
        let acc = accuracy(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[0, 1]).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn logloss_nonnegative_zero_iff_onehot() {
        let ll = logloss(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[0, 1]).unwrap();
        assert!(ll >= 0.0 && ll < 1e-10);
        let ll2 = logloss(&[vec![0.9, 0.1]], &[0]).unwrap();
        assert!(ll2 > 0.0);
    }

    #[test]
    fn sign_test_values() {
        // P(X >= 9), X ~ Binom(10, 1/2) = 11/1024
        assert!((sign_test_p(9, 10) - 11.0 / 1024.0).abs() < 1e-12);
        assert!((sign_test_p(0, 5) - 1.0).abs() < 1e-12);
    }
}
