use crate::error::{Error, Result};

/// Dense row-major tensor of 32-bit reals.
///
/// Values are immutable once a tensor leaves a constructor: every public
/// operation returns a fresh tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if dims.is_empty() || dims.iter().any(|&d| d == 0) {
            return Err(Error::Dimension(format!(
                "tensor dims must be non-empty and positive, got {dims:?}"
            )));
        }
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(Error::Dimension(format!(
                "dims {dims:?} need {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite value {} at flat index {i}",
                data[i]
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        let len = dims.iter().product();
        Self::new(dims, vec![0.0; len])
    }

    pub fn filled(dims: Vec<usize>, value: f32) -> Result<Self> {
        let len = dims.iter().product();
        Self::new(dims, vec![value; len])
    }

    /// Builds a tensor from 64-bit values, rounding each to the nearest f32.
    pub fn from_f64(dims: Vec<usize>, data: &[f64]) -> Result<Self> {
        Self::new(dims, data.iter().map(|&v| v as f32).collect())
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v)).collect()
    }

    /// Same data, new dims. The element count must not change.
    pub fn reshape(&self, dims: Vec<usize>) -> Result<Self> {
        let len: usize = dims.iter().product();
        if len != self.data.len() {
            return Err(Error::Dimension(format!(
                "cannot reshape {:?} into {dims:?}",
                self.dims
            )));
        }
        Self::new(dims, self.data.clone())
    }

    /// Reads the element at a multi-index. Panics on out-of-range indices.
    pub fn get(&self, index: &[usize]) -> f32 {
        self.data[self.offset(index)]
    }

    fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.dims.len(), "index rank mismatch");
        let mut off = 0;
        for (&i, &d) in index.iter().zip(&self.dims) {
            assert!(i < d, "index {i} out of range for dim {d}");
            off = off * d + i;
        }
        off
    }

    #[cfg(test)]
    pub(crate) fn nan_for_tests() -> Self {
        Self {
            dims: vec![1],
            data: vec![f32::NAN],
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f32> {
        if self.dims != other.dims {
            return Err(Error::Dimension(format!(
                "{:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max))
    }
}

/// `out[i,j] = Σ_k input[i,k]·weight[k,j] + bias[j]`, accumulated in f64.
pub fn affine_forward(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, d_in) = as_matrix(input, "input")?;
    let (w_in, d_out) = as_matrix(weight, "weight")?;
    if w_in != d_in {
        return Err(Error::Dimension(format!(
            "input has {d_in} columns but weight has {w_in} rows"
        )));
    }
    if bias.rank() != 1 || bias.dims()[0] != d_out {
        return Err(Error::Dimension(format!(
            "bias dims {:?} do not match output width {d_out}",
            bias.dims()
        )));
    }
    let x = input.data();
    let w = weight.data();
    let mut out = Vec::with_capacity(n * d_out);
    let mut acc = vec![0f64; d_out];
    for row in 0..n {
        for (j, a) in acc.iter_mut().enumerate() {
            *a = f64::from(bias.data()[j]);
        }
        for k in 0..d_in {
            let xv = f64::from(x[row * d_in + k]);
            if xv == 0.0 {
                continue;
            }
            let wrow = &w[k * d_out..(k + 1) * d_out];
            for (a, &wv) in acc.iter_mut().zip(wrow) {
                *a += xv * f64::from(wv);
            }
        }
        out.extend(acc.iter().map(|&v| v as f32));
    }
    Tensor::new(vec![n, d_out], out)
}

fn as_matrix(t: &Tensor, name: &str) -> Result<(usize, usize)> {
    match t.dims() {
        [r, c] => Ok((*r, *c)),
        other => Err(Error::Dimension(format!(
            "{name} must be rank 2, got dims {other:?}"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, v: &[f32]) -> Tensor {
        Tensor::new(vec![rows, cols], v.to_vec()).unwrap()
    }

    #[test]
    fn rejects_inconsistent_dims() {
        assert!(matches!(
            Tensor::new(vec![2, 3], vec![0.0; 5]),
            Err(Error::Dimension(_))
        ));
        assert!(Tensor::new(vec![0], vec![]).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        assert!(matches!(
            Tensor::new(vec![2], vec![1.0, f32::NAN]),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn affine_identity() {
        let out = affine_forward(
            &m(1, 2, &[1.0, 2.0]),
            &m(2, 2, &[1.0, 0.0, 0.0, 1.0]),
            &Tensor::zeros(vec![2]).unwrap(),
        )
        .unwrap();
        assert_eq!(out.data(), &[1.0, 2.0]);
    }

    #[test]
    fn affine_zero_weight_returns_bias() {
        let bias = Tensor::new(vec![2], vec![3.0, 4.0]).unwrap();
        let out = affine_forward(&m(1, 2, &[-7.5, 11.0]), &m(2, 2, &[0.0; 4]), &bias).unwrap();
        assert_eq!(out.data(), &[3.0, 4.0]);
    }

    #[test]
    fn affine_hand_multiply() {
        let out = affine_forward(
            &m(1, 2, &[1.0, 1.0]),
            &m(2, 2, &[1.0, 2.0, 3.0, 4.0]),
            &Tensor::zeros(vec![2]).unwrap(),
        )
        .unwrap();
        assert_eq!(out.data(), &[4.0, 6.0]);
    }

    #[test]
    fn affine_shape_mismatch() {
        let err = affine_forward(
            &m(1, 3, &[1.0, 1.0, 1.0]),
            &m(2, 2, &[1.0, 2.0, 3.0, 4.0]),
            &Tensor::zeros(vec![2]).unwrap(),
        );
        assert!(matches!(err, Err(Error::Dimension(_))));
    }
}
