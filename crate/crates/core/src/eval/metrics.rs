use std::cmp::Ordering;

use crate::error::{CsclError, Result};

/// Area under the ROC curve as the Mann–Whitney statistic: the fraction of
/// (positive, negative) pairs where the positive scores higher, ties ½.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(CsclError::shape(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(CsclError::NonFinite(format!("score {s}")));
    }
    if labels.iter().any(|&y| y > 1) {
        return Err(CsclError::invalid("labels must be 0 or 1"));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(CsclError::invalid("auc needs both classes"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    // twice the rank sum of the positives, with tied groups sharing their mean rank
    let mut rank_sum2: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j, mean (i + 1 + j) / 2
        let pos = order[i..j].iter().filter(|&&k| labels[k] == 1).count() as u64;
        rank_sum2 += pos * (i + 1 + j) as u64;
        i = j;
    }
    let p = n_pos as u64;
    let u2 = rank_sum2 - p * (p + 1);
    Ok(u2 as f64 / 2.0 / (n_pos * n_neg) as f64)
}

/// Harrell's concordance index. A pair is comparable when the subject with
/// the strictly earlier time had an event; it is concordant when that subject
/// has the higher risk, and counts ½ on a risk tie.
pub fn c_index(risks: &[f64], times: &[f64], events: &[bool]) -> Result<f64> {
    if risks.len() != times.len() || risks.len() != events.len() {
        return Err(CsclError::shape("risks, times and events differ in length"));
    }
    if risks.iter().chain(times).any(|v| !v.is_finite()) {
        return Err(CsclError::NonFinite("risk or time".into()));
    }
    let mut comparable: u64 = 0;
    let mut concordant2: u64 = 0;
    for i in 0..risks.len() {
        if !events[i] {
            continue;
        }
        for j in 0..risks.len() {
            if times[i] < times[j] {
                comparable += 1;
                concordant2 += match risks[i].partial_cmp(&risks[j]) {
                    Some(Ordering::Greater) => 2,
                    Some(Ordering::Equal) => 1,
                    _ => 0,
                };
            }
        }
    }
    if comparable == 0 {
        return Err(CsclError::precondition("c-index: no comparable pairs"));
    }
    Ok(concordant2 as f64 / 2.0 / comparable as f64)
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(), 0.75);
        assert_eq!(auc(&[1.0, 2.0, 3.0], &[0, 1, 1]).unwrap(), 1.0);
        assert_eq!(auc(&[0.5; 6], &[0, 1, 0, 1, 1, 0]).unwrap(), 0.5);
        assert!(auc(&[0.1, 0.2], &[1, 1]).is_err());
        assert!(auc(&[0.1], &[1, 0]).is_err());
    }

    #[test]
    fn c_index_examples() {
        let all = [true; 3];
        assert_eq!(
            c_index(&[3.0, 2.0, 1.0], &[1.0, 2.0, 3.0], &all).unwrap(),
            1.0
        );
        let c = c_index(
            &[0.9, 0.3, 0.1, 0.6],
            &[2.0, 4.0, 5.0, 7.0],
            &[true, false, true, true],
        )
        .unwrap();
        assert_eq!(c, 0.75);
        assert_eq!(
            c_index(&[1.0; 4], &[1.0, 2.0, 3.0, 4.0], &[true; 4]).unwrap(),
            0.5
        );
        assert!(c_index(&[1.0, 2.0], &[1.0, 2.0], &[false, false]).is_err());
    }

    #[test]
    fn mean_std_population() {
        assert_eq!(mean_std(&[1.0, 3.0]), (2.0, 1.0));
    }
}
