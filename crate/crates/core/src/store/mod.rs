//! On-disk formats shared with the feature exporter.

mod manifest;
mod tensor_file;

pub use manifest::{
    load_manifest, DatasetManifest, ManifestDocument, Split, VolumeDocument, VolumeEntry,
};
pub use tensor_file::{decode_tensor, encode_tensor, read_tensor, write_tensor, DTYPE_F32, MAGIC};

use crate::numerics::Tensor;

/// Binary ground-truth volume, `depth × height × width`, 1 = anomalous.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskVolume {
    depth: usize,
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl MaskVolume {
    pub fn new(depth: usize, height: usize, width: usize, data: Vec<bool>) -> Result<Self, String> {
        if depth * height * width != data.len() || data.is_empty() {
            return Err(format!(
                "{} voxels for dims {depth}x{height}x{width}",
                data.len()
            ));
        }
        Ok(Self {
            depth,
            height,
            width,
            data,
        })
    }

    /// Accepts a rank-3 tensor whose values are exactly 0.0 or 1.0.
    pub fn from_tensor(t: &Tensor) -> Result<Self, String> {
        let [d, h, w] = t.dims() else {
            return Err(format!("mask must be rank 3, got dims {:?}", t.dims()));
        };
        let mut data = Vec::with_capacity(t.len());
        for (i, &v) in t.data().iter().enumerate() {
            match v {
                0.0 => data.push(false),
                1.0 => data.push(true),
                other => return Err(format!("non-binary value {other} at voxel {i}")),
            }
        }
        Self::new(*d, *h, *w, data)
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.depth, self.height, self.width],
            self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        )
        .expect("mask dims are validated at construction")
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.depth, self.height, self.width)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn positives(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Voxels of slice `d`, row-major.
    pub fn slice(&self, d: usize) -> &[bool] {
        let n = self.height * self.width;
        &self.data[d * n..(d + 1) * n]
    }
}
