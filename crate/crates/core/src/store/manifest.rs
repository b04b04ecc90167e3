//! Dataset manifests: TOML documents that list volumes, their per-slice
//! feature files and optional ground-truth masks.
//!
//! ```toml
//! [[volumes]]
//! id = "test_000"
//! split = "test"          # train | val | test
//! depth = 2
//! height = 32             # original slice resolution, required with a mask
//! width = 32
//! mask = "masks/test_000.fsx"
//!
//! [[volumes.slices]]      # one table per slice, keyed by layer id
//! 2 = "features/test_000/s000_l2.fsx"
//! 3 = "features/test_000/s000_l3.fsx"
//!
//! [[volumes.slices]]
//! 2 = "features/test_000/s001_l2.fsx"
//! 3 = "features/test_000/s001_l3.fsx"
//! ```
//!
//! Relative paths resolve against the manifest's directory.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::store::{read_tensor, MaskVolume};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

/// On-disk form, paths as written.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestDocument {
    #[serde(default)]
    pub volumes: Vec<VolumeDocument>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeDocument {
    pub id: String,
    pub split: Split,
    pub depth: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
    pub slices: Vec<BTreeMap<String, String>>,
}

impl ManifestDocument {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("manifest serialization: {e}")))
    }
}

/// A validated volume entry with resolved paths.
#[derive(Clone, Debug, PartialEq)]
pub struct VolumeEntry {
    pub id: String,
    pub split: Split,
    pub depth: usize,
    pub height: Option<usize>,
    pub width: Option<usize>,
    pub mask: Option<PathBuf>,
    /// Per slice: (layer id, feature file) in ascending layer order.
    pub slices: Vec<Vec<(u32, PathBuf)>>,
}

impl VolumeEntry {
    /// Reads the layer maps of slice `index`, in ascending layer order.
    pub fn read_slice(&self, index: usize) -> Result<Vec<(u32, Tensor)>> {
        let slice = self.slices.get(index).ok_or_else(|| Error::Validation {
            volume: self.id.clone(),
            detail: format!("slice {index} out of {}", self.slices.len()),
        })?;
        slice
            .iter()
            .map(|(layer, path)| Ok((*layer, read_tensor(path)?)))
            .collect()
    }

    pub fn read_mask(&self) -> Result<Option<MaskVolume>> {
        let Some(path) = &self.mask else {
            return Ok(None);
        };
        let t = read_tensor(path)?;
        MaskVolume::from_tensor(&t)
            .map(Some)
            .map_err(|detail| Error::Validation {
                volume: self.id.clone(),
                detail: format!("mask {}: {detail}", path.display()),
            })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub source: PathBuf,
    pub layers: Vec<u32>,
    pub volumes: Vec<VolumeEntry>,
}

impl DatasetManifest {
    pub fn volumes_in(&self, split: Split) -> impl Iterator<Item = &VolumeEntry> {
        self.volumes.iter().filter(move |v| v.split == split)
    }

    pub fn volume(&self, id: &str) -> Option<&VolumeEntry> {
        self.volumes.iter().find(|v| v.id == id)
    }
}

/// Parses and validates a manifest. Every referenced file must exist; masks
/// are read and checked for binary values and declared dims.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: ManifestDocument = toml::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    validate(doc, &root, path)
}

fn validate(doc: ManifestDocument, root: &Path, source: &Path) -> Result<DatasetManifest> {
    let mut seen = BTreeSet::new();
    let mut layer_set: Option<Vec<u32>> = None;
    let mut volumes = Vec::with_capacity(doc.volumes.len());

    for v in doc.volumes {
        let bad = |detail: String| Error::Validation {
            volume: v.id.clone(),
            detail,
        };
        if !seen.insert(v.id.clone()) {
            return Err(bad("duplicate volume id".into()));
        }
        if v.depth == 0 || v.depth != v.slices.len() {
            return Err(bad(format!(
                "depth {} but {} slices listed",
                v.depth,
                v.slices.len()
            )));
        }
        let mut slices = Vec::with_capacity(v.slices.len());
        for (j, files) in v.slices.iter().enumerate() {
            let mut entry = Vec::with_capacity(files.len());
            for (key, rel) in files {
                let layer: u32 = key
                    .parse()
                    .map_err(|_| bad(format!("slice {j}: layer key `{key}` is not an integer")))?;
                let full = root.join(rel);
                if !full.is_file() {
                    return Err(bad(format!("missing tensor file {}", full.display())));
                }
                entry.push((layer, full));
            }
            entry.sort_by_key(|(l, _)| *l);
            let layers: Vec<u32> = entry.iter().map(|(l, _)| *l).collect();
            if layers.is_empty() {
                return Err(bad(format!("slice {j} lists no layers")));
            }
            match &layer_set {
                None => layer_set = Some(layers),
                Some(expected) if *expected != layers => {
                    return Err(bad(format!(
                        "slice {j} has layers {layers:?}, expected {expected:?}"
                    )));
                }
                Some(_) => {}
            }
            slices.push(entry);
        }

        let mask = match &v.mask {
            None => None,
            Some(rel) => {
                let full = root.join(rel);
                if !full.is_file() {
                    return Err(bad(format!("missing mask file {}", full.display())));
                }
                let (Some(h), Some(w)) = (v.height, v.width) else {
                    return Err(bad("a mask requires declared height and width".into()));
                };
                let t = read_tensor(&full)?;
                let m = MaskVolume::from_tensor(&t).map_err(|d| bad(format!("mask: {d}")))?;
                if m.dims() != (v.depth, h, w) {
                    return Err(bad(format!(
                        "mask dims {:?} differ from declared {:?}",
                        m.dims(),
                        (v.depth, h, w)
                    )));
                }
                Some(full)
            }
        };

        volumes.push(VolumeEntry {
            id: v.id,
            split: v.split,
            depth: v.depth,
            height: v.height,
            width: v.width,
            mask,
            slices,
        });
    }

    Ok(DatasetManifest {
        source: source.to_path_buf(),
        layers: layer_set.unwrap_or_default(),
        volumes,
    })
}
