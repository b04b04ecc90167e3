use crate::error::{Error, Result};

/// Confusion-matrix rates at one threshold. Predicted positive means
/// `score ≥ threshold`; a rate whose denominator is zero is reported as 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThresholdStats {
    pub accuracy: f64,
    pub specificity: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn check(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(bad) = scores.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite score {bad}")));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    Ok((pos, labels.len() - pos))
}

fn both_classes(scores: &[f64], labels: &[bool], what: &str) -> Result<(usize, usize)> {
    let (pos, neg) = check(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "{what} needs both classes ({pos} positive, {neg} negative)"
        )));
    }
    Ok((pos, neg))
}

/// `(tp, fp)` after admitting every sample with score ≥ each distinct
/// threshold, from the highest threshold down.
fn sweep(scores: &[f64], labels: &[bool]) -> Vec<(f64, usize, usize)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push((t, tp, fp));
    }
    out
}

/// Trapezoidal area under the ROC curve over all distinct thresholds.
/// Tied scores contribute half credit.
///
/// ```
/// use sliceflow::metrics::auroc;
/// let a = auroc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap();
/// assert!((a - 0.75).abs() < 1e-12);
/// ```
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = both_classes(scores, labels, "AUROC")?;
    let mut area = 0.0;
    let (mut tp0, mut fp0) = (0usize, 0usize);
    for (_, tp, fp) in sweep(scores, labels) {
        area += (fp - fp0) as f64 * (tp + tp0) as f64 / 2.0;
        tp0 = tp;
        fp0 = fp;
    }
    Ok(area / (pos as f64 * neg as f64))
}

/// Average precision: `Σ (R_k − R_{k−1}) · P_k` over distinct thresholds.
pub fn auprc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, _) = check(scores, labels)?;
    if pos == 0 {
        return Err(Error::UndefinedMetric("AUPRC needs at least one positive".into()));
    }
    let mut ap = 0.0;
    let mut tp0 = 0usize;
    for (_, tp, fp) in sweep(scores, labels) {
        if tp > tp0 {
            ap += (tp - tp0) as f64 / pos as f64 * (tp as f64 / (tp + fp) as f64);
        }
        tp0 = tp;
    }
    Ok(ap)
}

fn f1_from(tp: usize, fp: usize, pos: usize) -> f64 {
    let denom = (tp + fp + pos) as f64;
    if denom == 0.0 {
        0.0
    } else {
        2.0 * tp as f64 / denom
    }
}

/// Threshold maximising F1 over all distinct score values, with ties going
/// to the larger threshold. The maximum also equals the best Dice score.
///
/// ```
/// use sliceflow::metrics::best_f1_threshold;
/// let (t, f1) = best_f1_threshold(&[0.9, 0.1], &[false, true]).unwrap();
/// assert_eq!(t, 0.1);
/// assert!((f1 - 2.0 / 3.0).abs() < 1e-12);
/// ```
pub fn best_f1_threshold(scores: &[f64], labels: &[bool]) -> Result<(f64, f64)> {
    let (pos, _) = both_classes(scores, labels, "best F1")?;
    let mut best = (f64::NAN, -1.0);
    for (t, tp, fp) in sweep(scores, labels) {
        let f1 = f1_from(tp, fp, pos);
        if f1 > best.1 {
            best = (t, f1);
        }
    }
    Ok(best)
}

/// Largest Dice coefficient between the mask and any binarisation
/// `score ≥ t`, by direct recount at every distinct score.
pub fn max_dice(scores: &[f64], mask: &[bool]) -> Result<f64> {
    both_classes(scores, mask, "max Dice")?;
    let mut thresholds = scores.to_vec();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let truth = mask.iter().filter(|&&m| m).count();
    let mut best = 0f64;
    for &t in &thresholds {
        let (mut inter, mut predicted) = (0usize, 0usize);
        for (&s, &m) in scores.iter().zip(mask) {
            if s >= t {
                predicted += 1;
                inter += usize::from(m);
            }
        }
        best = best.max(2.0 * inter as f64 / (predicted + truth) as f64);
    }
    Ok(best)
}

pub fn thresholded_stats(scores: &[f64], labels: &[bool], threshold: f64) -> Result<ThresholdStats> {
    check(scores, labels)?;
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(ThresholdStats {
        accuracy: ratio(tp + tn, tp + tn + fp + fn_),
        specificity: ratio(tn, tn + fp),
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
        f1: ratio(2 * tp, 2 * tp + fp + fn_),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pair_count(scores: &[f64], labels: &[bool]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li && !lj {
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
    fn auroc_examples() {
        assert_eq!(auroc(&[0.1, 0.9], &[false, true]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.3; 4], &[false, true, false, true]).unwrap(), 0.5);
        assert!(matches!(auroc(&[0.1, 0.2], &[true, true]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn auprc_examples() {
        let ap = auprc(&[0.9, 0.8, 0.7], &[true, false, true]).unwrap();
        assert!((ap - 0.8333).abs() < 1e-4);
        assert_eq!(auprc(&[0.2, 0.9], &[false, true]).unwrap(), 1.0);
        assert_eq!(auprc(&[0.5, 0.1, 0.7], &[true; 3]).unwrap(), 1.0);
        assert!(auprc(&[0.5], &[false]).is_err());
    }

    #[test]
    fn f1_examples() {
        let (t, f1) = best_f1_threshold(&[0.2, 0.8, 0.9], &[false, true, true]).unwrap();
        assert_eq!((t, f1), (0.8, 1.0));
    }

    #[test]
    fn stats_examples() {
        let s = thresholded_stats(&[1.0, 0.0], &[true, false], 0.5).unwrap();
        assert_eq!((s.accuracy, s.specificity, s.precision, s.f1), (1.0, 1.0, 1.0, 1.0));
        let s = thresholded_stats(&[0.1, 0.2], &[true, false], 0.9).unwrap();
        assert_eq!((s.precision, s.specificity), (0.0, 1.0));
        let s = thresholded_stats(&[1.0, 1.0, 0.0, 0.0], &[true, false, false, true], 0.5).unwrap();
        assert_eq!((s.accuracy, s.specificity, s.precision, s.f1), (0.5, 0.5, 0.5, 0.5));
    }

    fn labelled(max: usize) -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
        prop::collection::vec((0u8..12, any::<bool>()), 2..max).prop_map(|v| {
            let scores = v.iter().map(|&(s, _)| f64::from(s) / 11.0).collect();
            let labels = v.iter().map(|&(_, l)| l).collect();
            (scores, labels)
        })
    }

    proptest! {
        #[test]
        fn auroc_equals_pair_counting((scores, labels) in labelled(200)) {
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            let a = auroc(&scores, &labels).unwrap();
            prop_assert!((a - pair_count(&scores, &labels)).abs() <= 1e-9);
        }

        #[test]
        fn auroc_invariant_under_monotone_maps((scores, labels) in labelled(100)) {
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
            prop_assert_eq!(auroc(&scores, &labels).unwrap(), auroc(&warped, &labels).unwrap());
        }

        #[test]
        fn max_f1_is_max_dice((scores, labels) in labelled(100)) {
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            let (_, f1) = best_f1_threshold(&scores, &labels).unwrap();
            prop_assert!((f1 - max_dice(&scores, &labels).unwrap()).abs() <= 1e-12);
        }

        #[test]
        fn rates_in_unit_interval((scores, labels) in labelled(60), t in 0.0f64..1.0) {
            let s = thresholded_stats(&scores, &labels, t).unwrap();
            for v in [s.accuracy, s.specificity, s.precision, s.recall, s.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
