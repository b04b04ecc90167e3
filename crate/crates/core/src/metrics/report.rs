use std::fmt::Write as _;

use super::pro::pro;
use super::ranking::{auprc, auroc, best_f1_threshold, thresholded_stats};
use crate::error::{Error, Result};
use crate::scorer::{image_scores_dataset, ScoreVolume};
use crate::store::MaskVolume;

/// Metrics of one scope. Rates are in `[0, 1]`; `pro` is absent at image
/// level.
#[derive(Clone, Debug, PartialEq)]
pub struct ScopeMetrics {
    pub auroc: f64,
    pub auprc: f64,
    pub pro: Option<f64>,
    /// Best F1 over thresholds, identical to the best Dice.
    pub max_dice: f64,
    pub specificity: f64,
    pub accuracy: f64,
    pub precision: f64,
    /// The F1-optimal threshold (mean over volumes at pixel level).
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Skipped {
    pub volume: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub fpr_limit: f64,
    pub pixel: Option<ScopeMetrics>,
    pub pixel_volumes: usize,
    pub image: Option<ScopeMetrics>,
    pub image_slices: usize,
    pub skipped: Vec<Skipped>,
}

/// Pixel metrics of one volume: upscaled scores against its mask.
pub fn volume_metrics(scores: &ScoreVolume, mask: &MaskVolume, fpr_limit: f64) -> Result<ScopeMetrics> {
    if scores.upscaled.dims() != [mask.dims().0, mask.dims().1, mask.dims().2] {
        return Err(Error::Dimension(format!(
            "scores of {} are {:?}, mask is {:?}",
            scores.volume,
            scores.upscaled.dims(),
            mask.dims()
        )));
    }
    let s = scores.upscaled.to_f64();
    let labels = mask.data();
    let (threshold, max_dice) = best_f1_threshold(&s, labels)?;
    let stats = thresholded_stats(&s, labels, threshold)?;
    Ok(ScopeMetrics {
        auroc: auroc(&s, labels)?,
        auprc: auprc(&s, labels)?,
        pro: Some(pro(&s, mask, fpr_limit)?),
        max_dice,
        specificity: stats.specificity,
        accuracy: stats.accuracy,
        precision: stats.precision,
        threshold,
    })
}

fn slice_metrics(scores: &[f64], labels: &[bool]) -> Result<ScopeMetrics> {
    let (threshold, max_dice) = best_f1_threshold(scores, labels)?;
    let stats = thresholded_stats(scores, labels, threshold)?;
    Ok(ScopeMetrics {
        auroc: auroc(scores, labels)?,
        auprc: auprc(scores, labels)?,
        pro: None,
        max_dice,
        specificity: stats.specificity,
        accuracy: stats.accuracy,
        precision: stats.precision,
        threshold,
    })
}

/// Pixel metrics per volume, averaged over the volumes where every metric is
/// defined; image metrics once over all slices with dataset-wide
/// normalisation. A slice is positive when its mask slice has any anomalous
/// voxel.
pub fn evaluate(volumes: &[(ScoreVolume, MaskVolume)], fpr_limit: f64) -> Result<EvalReport> {
    if volumes.is_empty() {
        return Err(Error::UndefinedMetric("no test volumes with masks".into()));
    }
    if !(fpr_limit > 0.0 && fpr_limit <= 1.0) {
        return Err(Error::Config(format!("FPR limit must lie in (0, 1], got {fpr_limit}")));
    }
    let mut skipped = Vec::new();
    let mut per_volume = Vec::new();
    for (scores, mask) in volumes {
        match volume_metrics(scores, mask, fpr_limit) {
            Ok(m) => per_volume.push(m),
            Err(Error::UndefinedMetric(reason)) => {
                log::warn!("skipping volume {} at pixel level: {reason}", scores.volume);
                skipped.push(Skipped {
                    volume: scores.volume.clone(),
                    reason,
                });
            }
            Err(e) => return Err(e),
        }
    }
    let pixel = (!per_volume.is_empty()).then(|| mean_metrics(&per_volume));

    let score_list: Vec<ScoreVolume> = volumes.iter().map(|(s, _)| s.clone()).collect();
    let labels: Vec<bool> = volumes
        .iter()
        .flat_map(|(_, m)| (0..m.dims().0).map(move |d| m.slice(d).iter().any(|&b| b)))
        .collect();
    let image = match image_scores_dataset(&score_list).and_then(|s| slice_metrics(&s, &labels)) {
        Ok(m) => Some(m),
        Err(e @ (Error::UndefinedMetric(_) | Error::Normalization(_))) => {
            log::warn!("image-level metrics undefined: {e}");
            skipped.push(Skipped {
                volume: "<image level>".into(),
                reason: e.to_string(),
            });
            None
        }
        Err(e) => return Err(e),
    };
    if pixel.is_none() && image.is_none() {
        return Err(Error::UndefinedMetric("no metric is defined on this test set".into()));
    }
    Ok(EvalReport {
        fpr_limit,
        pixel_volumes: per_volume.len(),
        pixel,
        image_slices: labels.len(),
        image,
        skipped,
    })
}

fn mean_metrics(all: &[ScopeMetrics]) -> ScopeMetrics {
    let n = all.len() as f64;
    let mean = |f: &dyn Fn(&ScopeMetrics) -> f64| all.iter().map(f).sum::<f64>() / n;
    ScopeMetrics {
        auroc: mean(&|m| m.auroc),
        auprc: mean(&|m| m.auprc),
        pro: Some(mean(&|m| m.pro.unwrap_or(0.0))),
        max_dice: mean(&|m| m.max_dice),
        specificity: mean(&|m| m.specificity),
        accuracy: mean(&|m| m.accuracy),
        precision: mean(&|m| m.precision),
        threshold: mean(&|m| m.threshold),
    }
}

impl EvalReport {
    /// Text report with rates ×100 at two decimals.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let pct = |v: f64| format!("{:.2}", 100.0 * v);
        let scope = |out: &mut String, name: &str, count: (&str, usize), m: &Option<ScopeMetrics>| {
            let _ = writeln!(out, "[{name}]");
            let _ = writeln!(out, "{} = {}", count.0, count.1);
            match m {
                None => {
                    let _ = writeln!(out, "defined = false");
                }
                Some(m) => {
                    let _ = writeln!(out, "auroc = {}", pct(m.auroc));
                    let _ = writeln!(out, "auprc = {}", pct(m.auprc));
                    if let Some(p) = m.pro {
                        let _ = writeln!(out, "pro = {}", pct(p));
                    }
                    let _ = writeln!(out, "max_dice = {}", pct(m.max_dice));
                    let _ = writeln!(out, "specificity = {}", pct(m.specificity));
                    let _ = writeln!(out, "accuracy = {}", pct(m.accuracy));
                    let _ = writeln!(out, "precision = {}", pct(m.precision));
                    let _ = writeln!(out, "f1_threshold = {:.6}", m.threshold);
                }
            }
            out.push('\n');
        };
        let _ = writeln!(out, "fpr_limit = {}\n", self.fpr_limit);
        scope(&mut out, "pixel", ("volumes", self.pixel_volumes), &self.pixel);
        scope(&mut out, "image", ("slices", self.image_slices), &self.image);
        for s in &self.skipped {
            let _ = writeln!(out, "[[skipped]]\nvolume = {:?}\nreason = {:?}\n", s.volume, s.reason);
        }
        out
    }
}
