use super::components::label_components;
use crate::error::{Error, Result};
use crate::store::MaskVolume;

/// Per-region overlap curve integrated up to `fpr_limit`, normalised by the
/// limit.
///
/// Regions are the connected components of the mask. At each distinct score
/// `t` (descending), the FPR is measured over background voxels and the
/// overlap is the mean over regions of the fraction of the region with
/// `score ≥ t`. The curve starts at `(0, 0)` and is integrated with the
/// trapezoid rule, interpolating linearly at the limit.
///
/// ```
/// use sliceflow::metrics::pro;
/// use sliceflow::store::MaskVolume;
///
/// let mask = MaskVolume::new(1, 2, 2, vec![true, false, false, false]).unwrap();
/// let perfect = [1.0, 0.0, 0.0, 0.0];
/// assert!((pro(&perfect, &mask, 0.3).unwrap() - 1.0).abs() < 1e-12);
/// ```
pub fn pro(scores: &[f64], mask: &MaskVolume, fpr_limit: f64) -> Result<f64> {
    integrate(&pro_curve(scores, mask)?, fpr_limit)
}

/// `(fpr, mean overlap)` at every distinct threshold, highest first, after
/// the `(0, 0)` origin.
pub fn pro_curve(scores: &[f64], mask: &MaskVolume) -> Result<Vec<(f64, f64)>> {
    let truth = mask.data();
    if scores.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} scores for a mask of {} voxels",
            scores.len(),
            truth.len()
        )));
    }
    if let Some(bad) = scores.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite score {bad}")));
    }
    let (labels, regions) = label_components(truth, mask.dims());
    if regions == 0 {
        return Err(Error::UndefinedMetric("PRO needs at least one anomalous region".into()));
    }
    let negatives = truth.iter().filter(|&&t| !t).count();
    if negatives == 0 {
        return Err(Error::UndefinedMetric("PRO needs background voxels".into()));
    }
    let mut sizes = vec![0usize; regions];
    for r in labels.iter().flatten() {
        sizes[*r] += 1;
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut curve = vec![(0.0, 0.0)];
    let mut fp = 0usize;
    let mut hits = vec![0usize; regions];
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            match labels[order[i]] {
                Some(r) => hits[r] += 1,
                None => fp += 1,
            }
            i += 1;
        }
        let overlap = hits.iter().zip(&sizes).map(|(&h, &s)| h as f64 / s as f64).sum::<f64>() / regions as f64;
        curve.push((fp as f64 / negatives as f64, overlap));
    }
    Ok(curve)
}

/// Trapezoidal area of a curve with non-decreasing x over `[0, limit]`,
/// divided by `limit`.
pub fn integrate(curve: &[(f64, f64)], limit: f64) -> Result<f64> {
    if !(limit > 0.0 && limit <= 1.0) {
        return Err(Error::Parameter(format!("FPR limit must lie in (0, 1], got {limit}")));
    }
    let mut area = 0.0;
    for pair in curve.windows(2) {
        let ((x0, y0), (x1, y1)) = (pair[0], pair[1]);
        if x0 >= limit {
            break;
        }
        if x1 > limit {
            let y = y0 + (y1 - y0) * (limit - x0) / (x1 - x0);
            area += (limit - x0) * (y0 + y) / 2.0;
            break;
        }
        area += (x1 - x0) * (y0 + y1) / 2.0;
    }
    Ok(area / limit)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(rows: &[&str]) -> MaskVolume {
        let h = rows.len();
        let w = rows[0].len();
        MaskVolume::new(1, h, w, rows.iter().flat_map(|r| r.chars().map(|c| c == '#')).collect()).unwrap()
    }

    #[test]
    fn perfect_prediction() {
        let m = grid(&[".....", ".##..", ".##..", ".....", "....."]);
        let s: Vec<f64> = m.data().iter().map(|&b| f64::from(u8::from(b))).collect();
        assert!((pro(&s, &m, 0.3).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn complement_prediction_is_poor() {
        let m = grid(&[".....", ".##..", ".##..", ".....", "....."]);
        let s: Vec<f64> = m.data().iter().map(|&b| if b { 0.0 } else { 1.0 }).collect();
        let v = pro(&s, &m, 0.3).unwrap();
        assert!(v < 0.5, "{v}");
    }

    #[test]
    fn half_of_two_regions() {
        let m = grid(&["#...#", ".....", "....."]);
        // first region always above every background voxel, second always below
        let mut s = vec![0.5; 15];
        s[0] = 1.0;
        s[4] = 0.0;
        let curve = pro_curve(&s, &m).unwrap();
        assert_eq!(curve[1], (0.0, 0.5));
        assert_eq!(curve[2], (1.0, 0.5));
        assert!((pro(&s, &m, 0.3).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn single_region_is_integrated_recall() {
        let m = grid(&["##..", "....", "...."]);
        let s = [0.9, 0.3, 0.8, 0.1, 0.2, 0.4, 0.5, 0.6, 0.7, 0.05, 0.15, 0.25];
        // recall stays at 0.5 until the region's second voxel at 0.3
        let v = pro(&s, &m, 0.3).unwrap();
        let expected = (0.0 * 0.5 + 0.3 * 0.5) / 0.3;
        assert!((v - expected).abs() < 1e-12, "{v}");
    }

    #[test]
    fn empty_mask_is_undefined() {
        let m = grid(&["...", "..."]);
        assert!(matches!(pro(&[0.0; 6], &m, 0.3), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn integrate_interpolates_at_limit() {
        let curve = [(0.0, 0.0), (0.0, 0.2), (0.6, 0.8)];
        // y at 0.3 = 0.5; area = 0.3·(0.2+0.5)/2
        let v = integrate(&curve, 0.3).unwrap();
        assert!((v - 0.35).abs() < 1e-12);
        assert!(integrate(&curve, 0.0).is_err());
    }
}
