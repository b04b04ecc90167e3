//! Synthetic two-layer feature volumes with planted anomalies.
//!
//! Normal features are smooth Gaussian-bump fields shared by the whole
//! dataset, modulated per volume and per slice, plus i.i.d. noise. Layer 2
//! lives on an `H/2 × W/2` grid and layer 3 on `H/4 × W/4`. Test volumes get
//! one ellipsoidal region spanning several slices whose features are shifted
//! and noisier; the mask marks it at full `D × H × W` resolution.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::store::{write_tensor, ManifestDocument, MaskVolume, Split, VolumeDocument};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub train: usize,
    pub val: usize,
    /// Test volumes with a planted region.
    pub test: usize,
    /// Test volumes without anomalies.
    pub normal_test: usize,
    pub depth: usize,
    pub height: usize,
    pub width: usize,
    pub layer2_channels: usize,
    pub layer3_channels: usize,
    /// Fraction of a test volume's voxels inside the planted region.
    pub anomaly_fraction: f64,
    /// Region half-extent along depth relative to the in-plane half-extent.
    pub depth_aspect: f64,
    /// Per-channel mean shift inside the region.
    pub shift: f64,
    /// Noise standard deviation multiplier inside the region.
    pub noise_gain: f64,
    /// Std of the i.i.d. per-entry noise.
    pub noise: f64,
    /// Std of the slowly varying per-volume modulation.
    pub volume_jitter: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            train: 20,
            val: 2,
            test: 10,
            normal_test: 0,
            depth: 12,
            height: 32,
            width: 32,
            layer2_channels: 24,
            layer3_channels: 32,
            anomaly_fraction: 0.05,
            depth_aspect: 0.6,
            shift: 0.6,
            noise_gain: 1.5,
            noise: 0.3,
            volume_jitter: 0.05,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height % 4 != 0 || self.width % 4 != 0 || self.height == 0 || self.width == 0 {
            return Err(Error::Config(format!(
                "height and width must be positive multiples of 4, got {}x{}",
                self.height, self.width
            )));
        }
        if self.depth == 0 || self.layer2_channels == 0 || self.layer3_channels == 0 {
            return Err(Error::Config("depth and channel counts must be positive".into()));
        }
        if self.train == 0 {
            return Err(Error::Config("at least one training volume is required".into()));
        }
        if !(0.0..1.0).contains(&self.anomaly_fraction) {
            return Err(Error::Config(format!(
                "anomaly fraction must lie in [0, 1), got {}",
                self.anomaly_fraction
            )));
        }
        let non_negative = [self.depth_aspect, self.shift, self.noise_gain, self.noise, self.volume_jitter];
        if non_negative.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || self.depth_aspect == 0.0 {
            return Err(Error::Config("shape and noise parameters must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// Number of planted voxels per anomalous test volume.
    pub fn planted_voxels(&self) -> usize {
        (self.anomaly_fraction * (self.depth * self.height * self.width) as f64).round() as usize
    }
}

/// Smooth field: a sum of Gaussian bumps on an `h × w` grid.
struct BumpField {
    bumps: Vec<(f64, f64, f64, f64)>,
}

impl BumpField {
    fn random<R: Rng>(rng: &mut R) -> Self {
        let bumps = (0..4)
            .map(|_| {
                let cy: f64 = rng.random();
                let cx: f64 = rng.random();
                let width = rng.random_range(0.15..0.45);
                let amp = rng.random_range(-1.0..1.0);
                (cy, cx, width, amp)
            })
            .collect();
        Self { bumps }
    }

    fn at(&self, y: f64, x: f64) -> f64 {
        self.bumps
            .iter()
            .map(|&(cy, cx, s, a)| a * (-((y - cy).powi(2) + (x - cx).powi(2)) / (2.0 * s * s)).exp())
            .sum()
    }
}

/// Layer fields of one layer: per channel a base field plus a second field
/// whose weight varies by volume and slice.
struct LayerModel {
    base: Vec<BumpField>,
    mode: Vec<BumpField>,
    shift_dir: Vec<f64>,
}

impl LayerModel {
    fn random<R: Rng>(channels: usize, rng: &mut R) -> Self {
        Self {
            base: (0..channels).map(|_| BumpField::random(rng)).collect(),
            mode: (0..channels).map(|_| BumpField::random(rng)).collect(),
            shift_dir: (0..channels).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect(),
        }
    }
}

/// Picks exactly `count` voxels nearest to a random centre under an
/// ellipsoidal metric, so the region is one contiguous blob.
fn plant_region<R: Rng>(cfg: &SynthConfig, count: usize, rng: &mut R) -> MaskVolume {
    let (d, h, w) = (cfg.depth, cfg.height, cfg.width);
    let n = d * h * w;
    // half-extents for a region of `count` voxels: (4/3)π·r³·aspect = count
    let r = (count as f64 * 3.0 / (4.0 * std::f64::consts::PI * cfg.depth_aspect)).cbrt();
    let rd = (r * cfg.depth_aspect).max(0.5);
    let mut centre = |extent: usize, radius: f64| {
        let lo = radius.min(extent as f64 / 2.0);
        let hi = (extent as f64 - 1.0 - radius).max(lo);
        if hi > lo {
            rng.random_range(lo..hi)
        } else {
            lo
        }
    };
    let (cd, ch, cw) = (centre(d, rd), centre(h, r), centre(w, r));
    let mut dist: Vec<(f64, usize)> = (0..n)
        .map(|i| {
            let (z, y, x) = (i / (h * w), (i / w) % h, i % w);
            let v = ((z as f64 - cd) / rd).powi(2) + ((y as f64 - ch) / r).powi(2) + ((x as f64 - cw) / r).powi(2);
            (v, i)
        })
        .collect();
    dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut data = vec![false; n];
    for &(_, i) in dist.iter().take(count) {
        data[i] = true;
    }
    MaskVolume::new(d, h, w, data).expect("dims are consistent")
}

/// Fraction of each `block × block` cell of a mask slice that is anomalous,
/// on the `(h / block) × (w / block)` grid.
fn coverage(mask: &MaskVolume, slice: usize, block: usize) -> Vec<f64> {
    let (_, h, w) = mask.dims();
    let (gh, gw) = (h / block, w / block);
    let s = mask.slice(slice);
    let mut out = vec![0.0; gh * gw];
    for y in 0..h {
        for x in 0..w {
            if s[y * w + x] {
                out[(y / block) * gw + x / block] += 1.0;
            }
        }
    }
    let area = (block * block) as f64;
    out.iter_mut().for_each(|v| *v /= area);
    out
}

/// Features of one slice, `C × gh × gw`.
#[allow(clippy::too_many_arguments)]
fn layer_map<R: Rng>(
    model: &LayerModel,
    (gh, gw): (usize, usize),
    weight: f64,
    offsets: &[f64],
    cover: Option<&[f64]>,
    cfg: &SynthConfig,
    rng: &mut R,
) -> Result<Tensor> {
    let c = model.base.len();
    let mut data = Vec::with_capacity(c * gh * gw);
    for ch in 0..c {
        for y in 0..gh {
            for x in 0..gw {
                let (fy, fx) = ((y as f64 + 0.5) / gh as f64, (x as f64 + 0.5) / gw as f64);
                let mut v = model.base[ch].at(fy, fx) + weight * model.mode[ch].at(fy, fx) + offsets[ch];
                let e: f64 = StandardNormal.sample(rng);
                let k = cover.map_or(0.0, |c| c[y * gw + x]);
                v += e * cfg.noise * (1.0 + k * (cfg.noise_gain - 1.0));
                v += k * cfg.shift * model.shift_dir[ch];
                data.push(v as f32);
            }
        }
    }
    Tensor::new(vec![c, gh, gw], data)
}

/// Generates the dataset into `out` and returns the manifest path.
pub fn synthesize(cfg: &SynthConfig, out: impl AsRef<Path>) -> Result<PathBuf> {
    cfg.validate()?;
    let out = out.as_ref();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let l2 = LayerModel::random(cfg.layer2_channels, &mut rng);
    let l3 = LayerModel::random(cfg.layer3_channels, &mut rng);
    let grid2 = (cfg.height / 2, cfg.width / 2);
    let grid3 = (cfg.height / 4, cfg.width / 4);
    let jitter = Normal::new(0.0, cfg.volume_jitter).map_err(|e| Error::Config(e.to_string()))?;

    let plan: Vec<(String, Split, bool)> = (0..cfg.train)
        .map(|i| (format!("train_{i:03}"), Split::Train, false))
        .chain((0..cfg.val).map(|i| (format!("val_{i:03}"), Split::Val, false)))
        .chain((0..cfg.test).map(|i| (format!("test_{i:03}"), Split::Test, true)))
        .chain((0..cfg.normal_test).map(|i| (format!("test_normal_{i:03}"), Split::Test, false)))
        .collect();

    let mut doc = ManifestDocument::default();
    for (id, split, planted) in plan {
        let vol_dir = out.join("features").join(&id);
        fs::create_dir_all(&vol_dir).map_err(|e| Error::io(&vol_dir, e))?;
        let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let amp: f64 = 0.5 + 0.5 * rng.random::<f64>();
        let off2: Vec<f64> = (0..cfg.layer2_channels).map(|_| jitter.sample(&mut rng)).collect();
        let off3: Vec<f64> = (0..cfg.layer3_channels).map(|_| jitter.sample(&mut rng)).collect();
        let mask = (split == Split::Test).then(|| {
            let count = if planted { cfg.planted_voxels() } else { 0 };
            plant_region(cfg, count, &mut rng)
        });

        let mut slices = Vec::with_capacity(cfg.depth);
        for s in 0..cfg.depth {
            let weight = amp * (phase + s as f64 * 0.35).sin();
            let (c2, c3) = match &mask {
                Some(m) => (Some(coverage(m, s, 2)), Some(coverage(m, s, 4))),
                None => (None, None),
            };
            let m2 = layer_map(&l2, grid2, weight, &off2, c2.as_deref(), cfg, &mut rng)?;
            let m3 = layer_map(&l3, grid3, weight, &off3, c3.as_deref(), cfg, &mut rng)?;
            let mut entry = BTreeMap::new();
            for (layer, map) in [(2u32, m2), (3u32, m3)] {
                let rel = format!("features/{id}/s{s:03}_l{layer}.fsx");
                write_tensor(out.join(&rel), &map)?;
                entry.insert(layer.to_string(), rel);
            }
            slices.push(entry);
        }
        let mask_rel = match &mask {
            Some(m) => {
                let rel = format!("masks/{id}.fsx");
                let dir = out.join("masks");
                fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                write_tensor(out.join(&rel), &m.to_tensor())?;
                Some(rel)
            }
            None => None,
        };
        doc.volumes.push(VolumeDocument {
            id,
            split,
            depth: cfg.depth,
            height: Some(cfg.height),
            width: Some(cfg.width),
            mask: mask_rel,
            slices,
        });
    }
    let path = out.join("manifest.toml");
    fs::write(&path, doc.to_toml()?).map_err(|e| Error::io(&path, e))?;
    let cfg_path = out.join("synth.toml");
    let text = toml::to_string(cfg).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(&cfg_path, text).map_err(|e| Error::io(&cfg_path, e))?;
    Ok(path)
}
