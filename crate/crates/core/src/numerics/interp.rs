//! Linear resampling on regular grids with the sample-center convention
//! (`align_corners = false`): output index `o` maps to source coordinate
//! `(o + 0.5)·in/out − 0.5`, clamped to the valid range.

use crate::error::{Error, Result};

/// Source index pair and blend weight for each output position along one axis.
#[derive(Clone, Debug)]
struct AxisTaps {
    lo: Vec<usize>,
    hi: Vec<usize>,
    frac: Vec<f64>,
}

fn axis_taps(input: usize, output: usize) -> AxisTaps {
    let scale = input as f64 / output as f64;
    let mut taps = AxisTaps {
        lo: Vec::with_capacity(output),
        hi: Vec::with_capacity(output),
        frac: Vec::with_capacity(output),
    };
    for o in 0..output {
        let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
        let lo = src.floor() as usize;
        let hi = (lo + 1).min(input - 1);
        taps.lo.push(lo);
        taps.hi.push(hi);
        taps.frac.push(src - lo as f64);
    }
    taps
}

/// Bilinear resize of `channels` stacked planes of `in_h × in_w` to
/// `out_h × out_w`. Input and output are channel-major.
pub fn resize_bilinear(
    data: &[f64],
    channels: usize,
    (in_h, in_w): (usize, usize),
    (out_h, out_w): (usize, usize),
) -> Result<Vec<f64>> {
    resize_trilinear(data, channels, (1, in_h, in_w), (1, out_h, out_w))
}

/// Trilinear resize of `channels` stacked `d × h × w` volumes.
pub fn resize_trilinear(
    data: &[f64],
    channels: usize,
    (in_d, in_h, in_w): (usize, usize, usize),
    (out_d, out_h, out_w): (usize, usize, usize),
) -> Result<Vec<f64>> {
    let in_sizes = [in_d, in_h, in_w];
    let out_sizes = [out_d, out_h, out_w];
    if in_sizes.iter().chain(&out_sizes).any(|&s| s == 0) || channels == 0 {
        return Err(Error::Dimension(format!(
            "resize {in_sizes:?} -> {out_sizes:?} with {channels} channels"
        )));
    }
    let in_len = in_d * in_h * in_w;
    if data.len() != channels * in_len {
        return Err(Error::Dimension(format!(
            "{} values for {channels} x {in_sizes:?}",
            data.len()
        )));
    }
    let td = axis_taps(in_d, out_d);
    let th = axis_taps(in_h, out_h);
    let tw = axis_taps(in_w, out_w);
    let out_len = out_d * out_h * out_w;
    let mut out = Vec::with_capacity(channels * out_len);
    for c in 0..channels {
        let vol = &data[c * in_len..(c + 1) * in_len];
        let at = |z: usize, y: usize, x: usize| vol[(z * in_h + y) * in_w + x];
        for od in 0..out_d {
            let (z0, z1, fz) = (td.lo[od], td.hi[od], td.frac[od]);
            for oh in 0..out_h {
                let (y0, y1, fy) = (th.lo[oh], th.hi[oh], th.frac[oh]);
                for ow in 0..out_w {
                    let (x0, x1, fx) = (tw.lo[ow], tw.hi[ow], tw.frac[ow]);
                    let plane = |z| {
                        let top = at(z, y0, x0) * (1.0 - fx) + at(z, y0, x1) * fx;
                        let bottom = at(z, y1, x0) * (1.0 - fx) + at(z, y1, x1) * fx;
                        top * (1.0 - fy) + bottom * fy
                    };
                    let v = if fz == 0.0 {
                        plane(z0)
                    } else {
                        plane(z0) * (1.0 - fz) + plane(z1) * fz
                    };
                    out.push(v);
                }
            }
        }
    }
    Ok(out)
}
