//! Evaluation metrics: accuracy, rank-based AUC, matched-threshold F1.

use crate::error::{Error, Result};

/// Scores with binary labels, the input shared by AUC and F1.
#[derive(Debug, Clone)]
pub struct ScoredLabels<'a> {
    pub scores: &'a [f64],
    pub labels: &'a [u8],
}

impl<'a> ScoredLabels<'a> {
    pub fn new(scores: &'a [f64], labels: &'a [u8]) -> Result<Self> {
        if scores.len() != labels.len() || scores.is_empty() {
            return Err(Error::Data(format!(
                "scores ({}) and labels ({}) must be equal-length and nonempty",
                scores.len(),
                labels.len()
            )));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::Data("labels must be 0 or 1".into()));
        }
        Ok(ScoredLabels { scores, labels })
    }

    fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }
}

/// Fraction of exact matches.
pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    if preds.len() != labels.len() || preds.is_empty() {
        return Err(Error::Data("accuracy needs equal-length nonempty inputs".into()));
    }
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Rank-based (Mann-Whitney) AUC; tied scores contribute half credit via
/// average ranks.
pub fn binary_auc(s: &ScoredLabels) -> Result<f64> {
    let n_pos = s.positives();
    let n_neg = s.labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Data("AUC needs both classes present".into()));
    }
    let mut order: Vec<usize> = (0..s.scores.len()).collect();
    order.sort_by(|&a, &b| s.scores[a].partial_cmp(&s.scores[b]).unwrap());

    // average ranks over tie groups (1-based ranks)
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && s.scores[order[j + 1]] == s.scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            if s.labels[idx] == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// F1 at the threshold where the predicted-positive count equals the true
/// positive count. Ties are broken by score descending, then index
/// ascending, so the top-k set is deterministic.
pub fn f1_at_matched_threshold(s: &ScoredLabels) -> Result<f64> {
    let n_pos = s.positives();
    let n_neg = s.labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Data("F1 needs both classes present".into()));
    }
    let mut order: Vec<usize> = (0..s.scores.len()).collect();
    order.sort_by(|&a, &b| {
        s.scores[b]
            .partial_cmp(&s.scores[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let predicted_pos = &order[..n_pos];
    let tp = predicted_pos.iter().filter(|&&i| s.labels[i] == 1).count() as f64;
    let fp = n_pos as f64 - tp;
    let fn_ = n_pos as f64 - tp;
    if tp == 0.0 {
        return Ok(0.0);
    }
    let precision = tp / (tp + fp);
    let recall = tp / (tp + fn_);
    Ok(2.0 * precision * recall / (precision + recall))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mat::rng_from;
    use rand::Rng;

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[1, 0, 1], &[1, 0, 1]).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 0, 1], &[0, 1, 0]).unwrap(), 0.0);
        assert_eq!(accuracy(&[1, 0, 1, 1], &[1, 0, 1, 0]).unwrap(), 0.75);
        assert!(accuracy(&[], &[]).is_err());
    }

    #[test]
    fn auc_examples() {
        let labels = [0u8, 0, 1, 1];
        let sep = ScoredLabels::new(&[0.1, 0.2, 0.8, 0.9], &labels).unwrap();
        assert_eq!(binary_auc(&sep).unwrap(), 1.0);

        let anti = ScoredLabels::new(&[0.9, 0.8, 0.2, 0.1], &labels).unwrap();
        assert_eq!(binary_auc(&anti).unwrap(), 0.0);

        let mixed_labels = [0u8, 1, 0, 1];
        let mixed = ScoredLabels::new(&[1.0, 2.0, 3.0, 4.0], &mixed_labels).unwrap();
        assert_eq!(binary_auc(&mixed).unwrap(), 0.75);

        let one_class = [1u8, 1, 1];
        assert!(binary_auc(&ScoredLabels::new(&[1.0, 2.0, 3.0], &one_class).unwrap()).is_err());
    }

    /// Brute force over all (positive, negative) pairs, ties at half credit.
    fn auc_brute(scores: &[f64], labels: &[u8]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if labels[i] == 1 && labels[j] == 0 {
                    den += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    #[test]
    fn auc_matches_pairwise_brute_force_with_ties() {
        let mut rng = rng_from(31);
        for trial in 0..20 {
            let n = 30;
            // quantized scores force plenty of ties
            let scores: Vec<f64> = (0..n).map(|_| (rng.gen_range(0..8) as f64) / 4.0).collect();
            let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2) as u8).collect();
            if labels.iter().all(|&l| l == 0) || labels.iter().all(|&l| l == 1) {
                continue;
            }
            let fast = binary_auc(&ScoredLabels::new(&scores, &labels).unwrap()).unwrap();
            let brute = auc_brute(&scores, &labels);
            assert!((fast - brute).abs() < 1e-12, "trial {trial}: {fast} vs {brute}");
        }
    }

    #[test]
    fn auc_is_invariant_to_monotone_transforms_and_flips_with_labels() {
        let mut rng = rng_from(32);
        let n = 50;
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2) as u8).collect();
        let base = binary_auc(&ScoredLabels::new(&scores, &labels).unwrap()).unwrap();

        let warped: Vec<f64> = scores.iter().map(|v| (v * 0.7).exp() + 3.0).collect();
        let w = binary_auc(&ScoredLabels::new(&warped, &labels).unwrap()).unwrap();
        assert!((base - w).abs() < 1e-12);

        // tie-free scores: complementing labels maps AUC to 1 - AUC
        let flipped: Vec<u8> = labels.iter().map(|l| 1 - l).collect();
        let f = binary_auc(&ScoredLabels::new(&scores, &flipped).unwrap()).unwrap();
        assert!((base + f - 1.0).abs() < 1e-12);
    }

    #[test]
    fn matched_threshold_f1_examples() {
        let labels = [0u8, 0, 1, 1];
        let sep = ScoredLabels::new(&[0.1, 0.2, 0.8, 0.9], &labels).unwrap();
        assert_eq!(f1_at_matched_threshold(&sep).unwrap(), 1.0);

        // scores equal to labels
        let eq = ScoredLabels::new(&[0.0, 0.0, 1.0, 1.0], &labels).unwrap();
        assert_eq!(f1_at_matched_threshold(&eq).unwrap(), 1.0);

        // hand-evaluated: top-2 scores pick indices {0,1}, one of which is
        // positive -> TP=1, FP=1, FN=1 -> F1 = 0.5
        let hand_labels = [0u8, 1, 1, 0];
        let hand = ScoredLabels::new(&[4.0, 3.0, 2.0, 1.0], &hand_labels).unwrap();
        assert_eq!(f1_at_matched_threshold(&hand).unwrap(), 0.5);
    }

    #[test]
    fn matched_threshold_implies_precision_equals_recall() {
        let mut rng = rng_from(33);
        let n = 40;
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2) as u8).collect();
        let s = ScoredLabels::new(&scores, &labels).unwrap();
        let f1 = f1_at_matched_threshold(&s).unwrap();
        // with |predicted positives| == |true positives|, precision == recall
        // == F1; verify F1 equals TP / P directly
        let n_pos = labels.iter().filter(|&&l| l == 1).count();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
        let tp = order[..n_pos].iter().filter(|&&i| labels[i] == 1).count();
        assert!((f1 - tp as f64 / n_pos as f64).abs() < 1e-12);
    }
}
