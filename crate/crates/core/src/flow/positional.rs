use crate::error::{Error, Result};

/// 2D sinusoidal encoding of grid cell `(h, w)`.
///
/// The first `P/2` entries encode `h` and the last `P/2` encode `w`, each as
/// interleaved `sin, cos` pairs at frequencies `10000^(−4i/P)`.
pub fn positional_encoding(h: usize, w: usize, height: usize, width: usize, dim: usize) -> Result<Vec<f32>> {
    if dim == 0 || dim % 4 != 0 {
        return Err(Error::Parameter(format!(
            "positional dimension must be a positive multiple of 4, got {dim}"
        )));
    }
    if h >= height || w >= width {
        return Err(Error::Parameter(format!(
            "cell ({h}, {w}) outside a {height}x{width} grid"
        )));
    }
    let mut out = Vec::with_capacity(dim);
    encode_axis(h as f64, dim, &mut out);
    encode_axis(w as f64, dim, &mut out);
    Ok(out)
}

fn encode_axis(pos: f64, dim: usize, out: &mut Vec<f32>) {
    let half = dim / 2;
    for i in 0..half / 2 {
        let freq = 10000f64.powf(-((2 * i) as f64) / half as f64);
        out.push((pos * freq).sin() as f32);
        out.push((pos * freq).cos() as f32);
    }
}

/// Encodings for every cell of a `height × width` grid, row-major, each of
/// length `dim`.
pub fn positional_grid(height: usize, width: usize, dim: usize) -> Result<Vec<f32>> {
    let mut out = Vec::with_capacity(height * width * dim);
    for h in 0..height {
        for w in 0..width {
            out.extend(positional_encoding(h, w, height, width, dim)?);
        }
    }
    Ok(out)
}
