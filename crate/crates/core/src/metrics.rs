//! Classification metrics.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// `matrix[truth][predicted]` counts.
pub fn confusion(predictions: &[usize], labels: &[usize], n_class: usize) -> Result<Vec<Vec<u64>>> {
    check_pairs(predictions, labels, n_class)?;
    let mut m = vec![vec![0u64; n_class]; n_class];
    for (&p, &t) in predictions.iter().zip(labels) {
        m[t][p] += 1;
    }
    Ok(m)
}

fn check_pairs(predictions: &[usize], labels: &[usize], n_class: usize) -> Result<()> {
    if predictions.is_empty() {
        return Err(Error::EmptyInput("metric inputs"));
    }
    if predictions.len() != labels.len() {
        return Err(Error::shape("metric labels", predictions.len(), labels.len()));
    }
    if let Some(&bad) = predictions.iter().chain(labels).find(|&&c| c >= n_class) {
        return Err(Error::LabelOutOfRange { label: bad, n_class });
    }
    Ok(())
}

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::EmptyInput("metric inputs"));
    }
    if predictions.len() != labels.len() {
        return Err(Error::shape("metric labels", predictions.len(), labels.len()));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// Per-class F1 scores; a class absent from both predictions and truth scores 0.
pub fn per_class_f1(predictions: &[usize], labels: &[usize], n_class: usize) -> Result<Vec<f64>> {
    let m = confusion(predictions, labels, n_class)?;
    Ok((0..n_class)
        .map(|c| {
            let tp = m[c][c];
            let fn_ = m[c].iter().sum::<u64>() - tp;
            let fp = m.iter().map(|row| row[c]).sum::<u64>() - tp;
            let denom = 2 * tp + fp + fn_;
            if denom == 0 {
                0.0
            } else {
                (2 * tp) as f64 / denom as f64
            }
        })
        .collect())
}

/// Unweighted mean of the per-class F1 scores.
pub fn macro_f1(predictions: &[usize], labels: &[usize], n_class: usize) -> Result<f64> {
    let f1 = per_class_f1(predictions, labels, n_class)?;
    Ok(f1.iter().sum::<f64>() / n_class as f64)
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half.
///
/// Pairs are counted in integer half-units (a win is 2, a tie is 1) after a
/// sort, so the result is exactly `(wins + ties / 2) / (P * N)`.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("auroc inputs"));
    }
    if scores.len() != labels.len() {
        return Err(Error::shape("auroc labels", scores.len(), labels.len()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("auroc score is NaN".into()));
    }
    let positives = labels.iter().filter(|&&l| l).count() as u64;
    let negatives = labels.len() as u64 - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut half_units: u128 = 0;
    let mut negatives_below: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut pos, mut neg) = (0u64, 0u64);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                pos += 1;
            } else {
                neg += 1;
            }
            j += 1;
        }
        half_units += pos as u128 * (2 * negatives_below as u128 + neg as u128);
        negatives_below += neg;
        i = j;
    }
    Ok(half_units as f64 / (2 * positives as u128 * negatives as u128) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let y = [0, 1, 2, 1, 0];
        assert_eq!(macro_f1(&y, &y, 3).unwrap(), 1.0);
        assert_eq!(accuracy(&y, &y).unwrap(), 1.0);
    }

    #[test]
    fn constant_prediction_on_balanced_truth() {
        let truth = [0, 0, 1, 1, 2, 2];
        let pred = [0; 6];
        assert!((macro_f1(&pred, &truth, 3).unwrap() - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn absent_class_scores_zero() {
        assert_eq!(per_class_f1(&[0, 1], &[0, 1], 3).unwrap(), vec![1.0, 1.0, 0.0]);
    }

    #[test]
    fn hand_auroc() {
        let a = auroc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap();
        assert_eq!(a, 0.75);
        assert_eq!(auroc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.5, 0.5], &[false, true]).unwrap(), 0.5);
    }

    #[test]
    fn metric_errors() {
        assert!(matches!(auroc(&[0.1, 0.2], &[true, true]), Err(Error::SingleClass)));
        assert!(auroc(&[], &[]).is_err());
        assert!(macro_f1(&[], &[], 2).is_err());
        assert!(matches!(macro_f1(&[3], &[0], 3), Err(Error::LabelOutOfRange { .. })));
    }

    #[test]
    fn confusion_rows_are_truth() {
        let m = confusion(&[1, 1, 0], &[0, 1, 0], 2).unwrap();
        assert_eq!(m, vec![vec![1, 1], vec![0, 1]]);
    }
}
