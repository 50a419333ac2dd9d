//! Ranking metrics over scored positive/negative pairs.

use crate::error::{Error, Result};

fn class_counts(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidInput("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidInput("ranking metrics need both classes".into()));
    }
    Ok((pos, neg))
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half (rank-sum form of the Mann–Whitney statistic).
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = class_counts(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // 1-based ranks start+1..=end share their average
        let avg = (start + 1 + end) as f64 / 2.0;
        let hits = order[start..end].iter().filter(|&&i| labels[i]).count();
        rank_sum += avg * hits as f64;
        start = end;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// `Σ_k (R_k − R_{k−1})·P_k` over the list ranked by descending score.
/// Tied scores keep their input order (stable sort).
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, _) = class_counts(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut ap = 0.0;
    for (k, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            ap += (1.0 / pos as f64) * (hits as f64 / (k + 1) as f64);
        }
    }
    Ok(ap)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_ranking() {
        let s = [0.9, 0.8, 0.2, 0.1];
        let l = [true, true, false, false];
        assert_eq!(auc(&s, &l).unwrap(), 1.0);
        assert_eq!(average_precision(&s, &l).unwrap(), 1.0);
    }

    #[test]
    fn constant_scores_give_half() {
        let s = [0.3; 6];
        let l = [false, true, true, false, true, false];
        assert_eq!(auc(&s, &l).unwrap(), 0.5);
    }

    #[test]
    fn negatives_first_by_hand() {
        // ranked: n n p p -> precision 1/3 and 2/4
        let s = [4.0, 3.0, 2.0, 1.0];
        let l = [false, false, true, true];
        let want = 0.5 * (1.0 / 3.0) + 0.5 * (2.0 / 4.0);
        assert_eq!(average_precision(&s, &l).unwrap(), want);
        assert_eq!(auc(&s, &l).unwrap(), 0.0);
    }

    #[test]
    fn single_positive_first() {
        let s = [0.9, 0.5, 0.4, 0.1, 0.0];
        let l = [true, false, false, false, false];
        assert_eq!(average_precision(&s, &l).unwrap(), 1.0);
    }

    #[test]
    fn single_class_is_rejected() {
        assert!(auc(&[0.1, 0.2], &[true, true]).is_err());
        assert!(average_precision(&[0.1, 0.2], &[false, false]).is_err());
    }
}
