//! Slice encoder and depth aggregation.
//!
//! A slice's backbone maps are locally averaged, brought to the resolution
//! of the first (largest) layer, concatenated along channels and pooled down
//! to the embedding width. Neighbouring slice embeddings are then averaged
//! to give every voxel some depth context.

use crate::error::{Error, Result};
use crate::numerics::interp::resize_bilinear;
use crate::numerics::Tensor;
use crate::store::VolumeEntry;

/// Layer feature maps of one slice, each `C_l × H_l × W_l`, in layer order.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStack {
    layers: Vec<(u32, Tensor)>,
}

impl FeatureStack {
    pub fn new(mut layers: Vec<(u32, Tensor)>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Parameter("feature stack needs at least one layer".into()));
        }
        layers.sort_by_key(|(id, _)| *id);
        let mut prev: Option<(usize, usize)> = None;
        for (id, t) in &layers {
            let [_, h, w] = t.dims() else {
                return Err(Error::Dimension(format!(
                    "layer {id} must be C x H x W, got {:?}",
                    t.dims()
                )));
            };
            if let Some((ph, pw)) = prev {
                if *h > ph || *w > pw {
                    return Err(Error::Dimension(format!(
                        "layer {id} is {h}x{w}, larger than the previous {ph}x{pw}"
                    )));
                }
            }
            prev = Some((*h, *w));
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[(u32, Tensor)] {
        &self.layers
    }

    /// Spatial size of the first layer.
    pub fn base_size(&self) -> (usize, usize) {
        let d = self.layers[0].1.dims();
        (d[1], d[2])
    }

    pub fn total_channels(&self) -> usize {
        self.layers.iter().map(|(_, t)| t.dims()[0]).sum()
    }
}

/// Fused grid of one slice, `H0 × W0 × C` (channel-last).
#[derive(Clone, Debug, PartialEq)]
pub struct SliceEmbedding {
    pub grid: Tensor,
    pub slice: usize,
}

impl SliceEmbedding {
    pub fn dims(&self) -> (usize, usize, usize) {
        let d = self.grid.dims();
        (d[0], d[1], d[2])
    }
}

/// Depth-aggregated grid of one volume, `D × H0 × W0 × C` (channel-last).
#[derive(Clone, Debug, PartialEq)]
pub struct VolumeEmbedding {
    pub grid: Tensor,
    pub volume: String,
    pub radius: usize,
}

impl VolumeEmbedding {
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        let d = self.grid.dims();
        (d[0], d[1], d[2], d[3])
    }

    /// Feature vector at voxel (d, h, w).
    pub fn voxel(&self, d: usize, h: usize, w: usize) -> &[f32] {
        let (_, hh, ww, c) = self.dims();
        let off = ((d * hh + h) * ww + w) * c;
        &self.grid.data()[off..off + c]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderConfig {
    pub patch: usize,
    pub embed_dim: usize,
    pub radius: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            patch: 3,
            embed_dim: 1024,
            radius: 1,
        }
    }
}

/// Mean over the `p × p` neighbourhood of every position. Out-of-bounds
/// cells are skipped and the divisor counts only in-bounds cells.
pub fn patch_aggregate(map: &Tensor, p: usize) -> Result<Tensor> {
    if p == 0 || p % 2 == 0 {
        return Err(Error::Parameter(format!("patch size must be odd and positive, got {p}")));
    }
    let [c, h, w] = *map.dims() else {
        return Err(Error::Dimension(format!(
            "patch_aggregate needs C x H x W, got {:?}",
            map.dims()
        )));
    };
    if p == 1 {
        return Ok(map.clone());
    }
    let half = p / 2;
    let span = |i: usize, n: usize| (i.saturating_sub(half), (i + half).min(n - 1));
    let src = map.data();
    let mut out = Vec::with_capacity(src.len());
    let mut rows = vec![0f64; h * w];
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        // separable box sums: along w, then along h
        for y in 0..h {
            for x in 0..w {
                let (lo, hi) = span(x, w);
                rows[y * w + x] = plane[y * w + lo..=y * w + hi]
                    .iter()
                    .map(|&v| f64::from(v))
                    .sum();
            }
        }
        for y in 0..h {
            let (ylo, yhi) = span(y, h);
            for x in 0..w {
                let (xlo, xhi) = span(x, w);
                let sum: f64 = (ylo..=yhi).map(|yy| rows[yy * w + x]).sum();
                let count = ((yhi - ylo + 1) * (xhi - xlo + 1)) as f64;
                out.push((sum / count) as f32);
            }
        }
    }
    Tensor::new(vec![c, h, w], out)
}

/// Bilinearly resizes every layer to the first layer's size and stacks the
/// channels in layer order: `(Σ C_l) × H0 × W0`.
pub fn upscale_concat(stack: &FeatureStack) -> Result<Tensor> {
    let (h0, w0) = stack.base_size();
    let mut out = Vec::with_capacity(stack.total_channels() * h0 * w0);
    for (_, t) in stack.layers() {
        let [c, h, w] = *t.dims() else { unreachable!("checked in FeatureStack::new") };
        if (h, w) == (h0, w0) {
            out.extend_from_slice(t.data());
        } else {
            let resized = resize_bilinear(&t.to_f64(), c, (h, w), (h0, w0))?;
            out.extend(resized.into_iter().map(|v| v as f32));
        }
    }
    Tensor::new(vec![stack.total_channels(), h0, w0], out)
}

/// Channel bins for adaptive mean pooling: bin `j` covers
/// `[⌈j·C/T⌉, ⌈(j+1)·C/T⌉)`, so earlier bins take the extra channel.
pub fn channel_bins(channels: usize, target: usize) -> Vec<(usize, usize)> {
    let edge = |j: usize| (j * channels).div_ceil(target);
    (0..target).map(|j| (edge(j), edge(j + 1))).collect()
}

/// Adaptive mean pooling along channels down to `target` channels.
pub fn reduce_channels(map: &Tensor, target: usize) -> Result<Tensor> {
    let [c, h, w] = *map.dims() else {
        return Err(Error::Dimension(format!(
            "reduce_channels needs C x H x W, got {:?}",
            map.dims()
        )));
    };
    if target == 0 || c < target {
        return Err(Error::Parameter(format!(
            "cannot pool {c} channels into {target}"
        )));
    }
    if c == target {
        return Ok(map.clone());
    }
    let plane = h * w;
    let src = map.data();
    let mut out = Vec::with_capacity(target * plane);
    for (lo, hi) in channel_bins(c, target) {
        let n = (hi - lo) as f64;
        for i in 0..plane {
            let s: f64 = (lo..hi).map(|ch| f64::from(src[ch * plane + i])).sum();
            out.push((s / n) as f32);
        }
    }
    Tensor::new(vec![target, h, w], out)
}

/// `reduce_channels(upscale_concat(patch_aggregate per layer))`, returned
/// channel-last.
pub fn encode_slice(stack: &FeatureStack, patch: usize, embed_dim: usize) -> Result<SliceEmbedding> {
    let aggregated = stack
        .layers()
        .iter()
        .map(|(id, t)| Ok((*id, patch_aggregate(t, patch)?)))
        .collect::<Result<Vec<_>>>()?;
    let fused = upscale_concat(&FeatureStack::new(aggregated)?)?;
    let reduced = reduce_channels(&fused, embed_dim)?;
    Ok(SliceEmbedding {
        grid: channels_last(&reduced)?,
        slice: 0,
    })
}

fn channels_last(t: &Tensor) -> Result<Tensor> {
    let [c, h, w] = *t.dims() else { unreachable!() };
    let src = t.data();
    let mut out = vec![0f32; src.len()];
    for ch in 0..c {
        for i in 0..h * w {
            out[i * c + ch] = src[ch * h * w + i];
        }
    }
    Tensor::new(vec![h, w, c], out)
}

/// Windowed mean over slices: voxel `d` averages slices
/// `max(0, d−r) ..= min(D−1, d+r)`. `r = 0` keeps slices independent.
pub fn aggregate_depth(slices: &[SliceEmbedding], radius: usize) -> Result<VolumeEmbedding> {
    let first = slices
        .first()
        .ok_or_else(|| Error::Parameter("no slices to aggregate".into()))?;
    let depth = slices.len();
    if radius >= depth {
        return Err(Error::Parameter(format!(
            "depth radius {radius} must be smaller than the slice count {depth}"
        )));
    }
    let (h, w, c) = first.dims();
    if let Some(bad) = slices.iter().position(|s| s.dims() != (h, w, c)) {
        return Err(Error::Dimension(format!(
            "slice {bad} is {:?}, expected {:?}",
            slices[bad].dims(),
            (h, w, c)
        )));
    }
    let n = h * w * c;
    let mut out = Vec::with_capacity(depth * n);
    let mut acc = vec![0f64; n];
    for d in 0..depth {
        let lo = d.saturating_sub(radius);
        let hi = (d + radius).min(depth - 1);
        acc.iter_mut().for_each(|a| *a = 0.0);
        for s in &slices[lo..=hi] {
            for (a, &v) in acc.iter_mut().zip(s.grid.data()) {
                *a += f64::from(v);
            }
        }
        let k = (hi - lo + 1) as f64;
        out.extend(acc.iter().map(|&a| (a / k) as f32));
    }
    Ok(VolumeEmbedding {
        grid: Tensor::new(vec![depth, h, w, c], out)?,
        volume: String::new(),
        radius,
    })
}

/// Reads, encodes and aggregates every slice of a manifest volume.
pub fn encode_volume(volume: &VolumeEntry, cfg: &EncoderConfig) -> Result<VolumeEmbedding> {
    let slices = (0..volume.depth)
        .map(|j| {
            let stack = FeatureStack::new(volume.read_slice(j)?)?;
            let mut e = encode_slice(&stack, cfg.patch, cfg.embed_dim)?;
            e.slice = j;
            Ok(e)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut emb = aggregate_depth(&slices, cfg.radius)?;
    emb.volume = volume.id.clone();
    Ok(emb)
}
