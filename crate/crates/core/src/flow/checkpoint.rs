//! Checkpoint directory layout:
//!
//! ```text
//! flow.toml            header: version, dim, cond_dim, hidden, layers, clamp
//! layer{k}_w1.fsx      one TensorFile per subnet parameter
//! layer{k}_b1.fsx
//! layer{k}_w2.fsx
//! layer{k}_b2.fsx
//! ```
//!
//! Layers whose active half is empty have no files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::coupling::{CouplingLayer, Subnet};
use super::model::{FlowConfig, FlowModel};
use crate::error::{Error, Result};
use crate::store::{read_tensor, write_tensor};

pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER: &str = "flow.toml";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    #[serde(flatten)]
    config: FlowConfig,
}

/// Writes `model` into directory `dir`, replacing it atomically: files go to
/// a sibling temporary directory which is then renamed into place.
pub fn save_checkpoint(model: &FlowModel, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let name = dir
        .file_name()
        .ok_or_else(|| Error::Config(format!("checkpoint path {} has no final component", dir.display())))?;
    let parent = match dir.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent).map_err(|e| Error::io(&parent, e))?;
    let tmp = parent.join(format!(".{}.tmp", name.to_string_lossy()));
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    }
    fs::create_dir(&tmp).map_err(|e| Error::io(&tmp, e))?;

    let header = Header {
        version: CHECKPOINT_VERSION,
        config: model.config().clone(),
    };
    let text = toml::to_string(&header).map_err(|e| Error::Config(e.to_string()))?;
    let path = tmp.join(HEADER);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    for (k, layer) in model.layers().iter().enumerate() {
        if let Some(s) = layer.subnet() {
            for (tag, t) in [("w1", &s.w1), ("b1", &s.b1), ("w2", &s.w2), ("b2", &s.b2)] {
                write_tensor(tmp.join(format!("layer{k}_{tag}.fsx")), t)?;
            }
        }
    }

    let old = parent.join(format!(".{}.old", name.to_string_lossy()));
    if dir.exists() {
        if old.exists() {
            fs::remove_dir_all(&old).map_err(|e| Error::io(&old, e))?;
        }
        fs::rename(dir, &old).map_err(|e| Error::io(dir, e))?;
    }
    fs::rename(&tmp, dir).map_err(|e| Error::io(dir, e))?;
    if old.exists() {
        fs::remove_dir_all(&old).map_err(|e| Error::io(&old, e))?;
    }
    Ok(())
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<FlowModel> {
    let dir = dir.as_ref();
    let path = dir.join(HEADER);
    if !path.is_file() {
        return Err(Error::Config(format!("no checkpoint at {}", dir.display())));
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let header: Header = toml::from_str(&text).map_err(|e| Error::Format {
        field: "flow.toml",
        detail: e.to_string(),
    })?;
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::Format {
            field: "version",
            detail: format!("checkpoint version {} is not supported", header.version),
        });
    }
    let cfg = header.config;
    cfg.validate()?;
    let layers = (0..cfg.layers)
        .map(|k| {
            let flipped = k % 2 == 1;
            let empty = if flipped { cfg.dim / 2 == 0 } else { cfg.dim - cfg.dim / 2 == 0 };
            let subnet = if empty {
                None
            } else {
                let read = |tag: &str| read_tensor(dir.join(format!("layer{k}_{tag}.fsx")));
                Some(Subnet {
                    w1: read("w1")?,
                    b1: read("b1")?,
                    w2: read("w2")?,
                    b2: read("b2")?,
                })
            };
            CouplingLayer::from_parts(cfg.dim, cfg.cond_dim, cfg.clamp, flipped, subnet)
        })
        .collect::<Result<Vec<_>>>()?;
    FlowModel::from_layers(cfg, layers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bit_exact_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for dim in [1, 5, 8] {
            let mut cfg = FlowConfig::new(dim);
            cfg.cond_dim = 8;
            let mut m = FlowModel::new(cfg, &mut rng).unwrap();
            m.randomize(&mut rng, 0.1).unwrap();
            let path = dir.path().join(format!("ck{dim}"));
            save_checkpoint(&m, &path).unwrap();
            save_checkpoint(&m, &path).unwrap();
            let back = load_checkpoint(&path).unwrap();
            assert_eq!(back, m);
        }
    }

    #[test]
    fn missing_checkpoint_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_checkpoint(dir.path().join("nope")), Err(Error::Config(_))));
    }
}
