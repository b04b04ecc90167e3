//! Anomaly maps from flow log-likelihoods.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::flow::{positional_grid, FlowModel};
use crate::numerics::interp::resize_trilinear;
use crate::numerics::Tensor;
use crate::pipeline::VolumeEmbedding;
use crate::store::{read_tensor, write_tensor};

/// `s = 1 − exp(log p)`. High for unlikely features; can be negative when
/// the density exceeds one.
///
/// ```
/// use sliceflow::scorer::anomaly_score;
/// assert_eq!(anomaly_score(0.0), 0.0);
/// assert!((anomaly_score(-1.0) - 0.6321).abs() < 1e-4);
/// ```
pub fn anomaly_score(logp: f64) -> f64 {
    -logp.exp_m1()
}

/// Min-max scaling to `[0, 1]`.
pub fn normalize_min_max(values: &[f64]) -> Result<Vec<f64>> {
    let (lo, hi) = range(values)?;
    if hi <= lo {
        return Err(Error::Normalization(format!(
            "constant score field ({lo}) over {} values",
            values.len()
        )));
    }
    Ok(values.iter().map(|v| (v - lo) / (hi - lo)).collect())
}

/// Min-max normalised anomaly scores straight from log-likelihoods.
///
/// Equal to `normalize_min_max` of [`anomaly_score`] but evaluated as
/// `(1 − e^{lp − lp_max}) / (1 − e^{lp_min − lp_max})`, which stays finite
/// when `exp(lp)` would overflow.
pub fn normalize_log_likelihoods(logp: &[f64]) -> Result<Vec<f64>> {
    let (lo, hi) = range(logp)?;
    let denom = -(lo - hi).exp_m1();
    if hi <= lo || denom <= 0.0 {
        return Err(Error::Normalization(format!(
            "constant log-likelihood field ({lo}) over {} voxels",
            logp.len()
        )));
    }
    Ok(logp
        .iter()
        .map(|&l| (-(l - hi).exp_m1() / denom).clamp(0.0, 1.0))
        .collect())
}

fn range(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::Normalization("empty score field".into()));
    }
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::Normalization(format!("non-finite score {bad}")));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((lo, hi))
}

/// Scores of one volume.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreVolume {
    pub volume: String,
    /// Per-voxel log-likelihood, `D × H0 × W0`. Kept instead of
    /// `1 − exp(log p)`, which may overflow.
    pub logp: Tensor,
    /// Per-volume min-max normalised anomaly scores, `D × H0 × W0`.
    pub normalized: Tensor,
    /// `normalized` resampled to `D × H × W`.
    pub upscaled: Tensor,
    /// Max of each upscaled slice.
    pub image: Vec<f64>,
}

const FILES: [&str; 4] = ["logp.fsx", "normalized.fsx", "upscaled.fsx", "image.fsx"];

impl ScoreVolume {
    /// Builds every derived field from per-voxel log-likelihoods laid out
    /// `D × H0 × W0`.
    pub fn from_log_likelihoods(
        volume: &str,
        logp: Vec<f64>,
        (depth, h0, w0): (usize, usize, usize),
        (height, width): (usize, usize),
    ) -> Result<Self> {
        let normalized = normalize_log_likelihoods(&logp)?;
        let up = resize_trilinear(&normalized, 1, (depth, h0, w0), (depth, height, width))?;
        let upscaled = Tensor::from_f64(vec![depth, height, width], &up)?;
        let image = upscaled
            .data()
            .chunks(height * width)
            .map(|s| s.iter().map(|&v| f64::from(v)).fold(f64::NEG_INFINITY, f64::max))
            .collect();
        Ok(Self {
            volume: volume.to_string(),
            logp: Tensor::from_f64(vec![depth, h0, w0], &logp)?,
            normalized: Tensor::from_f64(vec![depth, h0, w0], &normalized)?,
            upscaled,
            image,
        })
    }

    pub fn depth(&self) -> usize {
        self.logp.dims()[0]
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let image = Tensor::from_f64(vec![self.image.len()], &self.image)?;
        for (name, t) in FILES.iter().zip([&self.logp, &self.normalized, &self.upscaled, &image]) {
            write_tensor(dir.join(name), t)?;
        }
        Ok(())
    }

    pub fn load(volume: &str, dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let [logp, normalized, upscaled, image] = FILES.map(|f| read_tensor(dir.join(f)));
        let (logp, normalized, upscaled, image) = (logp?, normalized?, upscaled?, image?);
        let depth = logp.dims()[0];
        let consistent = logp.rank() == 3
            && normalized.dims() == logp.dims()
            && upscaled.rank() == 3
            && upscaled.dims()[0] == depth
            && image.dims() == [depth];
        if !consistent {
            return Err(Error::Format {
                field: "dims",
                detail: format!("score files in {} have inconsistent shapes", dir.display()),
            });
        }
        Ok(Self {
            volume: volume.to_string(),
            image: image.to_f64(),
            logp,
            normalized,
            upscaled,
        })
    }
}

/// Scores every voxel of `vol` and upsamples the map to `target` (`H × W`).
pub fn score_volume(model: &FlowModel, vol: &VolumeEmbedding, target: (usize, usize)) -> Result<ScoreVolume> {
    let logp = voxel_log_likelihoods(model, vol)?;
    let (d, h0, w0, _) = vol.dims();
    ScoreVolume::from_log_likelihoods(&vol.volume, logp, (d, h0, w0), target)
}

/// Per-voxel log-likelihood, `D × H0 × W0` row-major.
pub fn voxel_log_likelihoods(model: &FlowModel, vol: &VolumeEmbedding) -> Result<Vec<f64>> {
    let (d, h0, w0, c) = vol.dims();
    if c != model.dim() {
        return Err(Error::Config(format!(
            "model expects {}-dim features, volume {} has {c}",
            model.dim(),
            vol.volume
        )));
    }
    let cond: Vec<f64> = positional_grid(h0, w0, model.cond_dim())?
        .into_iter()
        .map(f64::from)
        .collect();
    let per_slice = h0 * w0;
    let mut out = Vec::with_capacity(d * per_slice);
    for (k, slice) in vol.grid.data().chunks(per_slice * c).enumerate() {
        let x: Vec<f64> = slice.iter().map(|&v| f64::from(v)).collect();
        let lp = model.log_likelihood_rows(&x, &cond, per_slice).map_err(|e| match e {
            Error::Numeric(m) => Error::Numeric(format!("volume {} slice {k}: {m}", vol.volume)),
            other => other,
        })?;
        out.extend(lp);
    }
    Ok(out)
}

/// Slice maxima of all volumes, in volume then slice order, min-max
/// normalised across the whole dataset.
pub fn image_scores_dataset(volumes: &[ScoreVolume]) -> Result<Vec<f64>> {
    if volumes.is_empty() {
        return Err(Error::Normalization("no volumes to normalise".into()));
    }
    let all: Vec<f64> = volumes.iter().flat_map(|v| v.image.iter().copied()).collect();
    normalize_min_max(&all)
}
