use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowConfig;
use crate::objective::SppConfig;
use crate::pipeline::EncoderConfig;

/// Everything a run depends on. Written to `config.toml` in the output
/// directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub out: PathBuf,
    /// Checkpoint to read when scoring; defaults to `<out>/checkpoint`.
    pub checkpoint: Option<PathBuf>,
    pub patch: usize,
    pub radius: usize,
    pub embed_dim: usize,
    pub pos_dim: usize,
    /// Subnet hidden width; the embedding dimension when absent.
    pub hidden: Option<usize>,
    pub layers: usize,
    pub clamp: f64,
    pub lr: f64,
    pub spp: SppConfig,
    pub steps: usize,
    pub seed: u64,
    /// Cap on voxel features drawn from the step's volume.
    pub voxels_per_step: usize,
    /// Held-out log-likelihood is logged every this many steps (0 = never).
    pub val_every: usize,
    /// Intermediate checkpoints every this many steps (0 = only at the end).
    pub checkpoint_every: usize,
    pub fpr_limit: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            manifest: PathBuf::from("manifest.toml"),
            out: PathBuf::from("run"),
            checkpoint: None,
            patch: 3,
            radius: 1,
            embed_dim: 1024,
            pos_dim: 128,
            hidden: None,
            layers: 8,
            clamp: 1.9,
            lr: 1e-3,
            spp: SppConfig::default(),
            steps: 1000,
            seed: 0,
            voxels_per_step: 4096,
            val_every: 50,
            checkpoint_every: 500,
            fpr_limit: 0.3,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.patch == 0 || self.patch % 2 == 0 {
            return bad(format!("patch must be odd and positive, got {}", self.patch));
        }
        if self.embed_dim == 0 {
            return bad("embedding dimension must be positive".into());
        }
        if self.pos_dim == 0 || self.pos_dim % 4 != 0 {
            return bad(format!("positional dimension must be a positive multiple of 4, got {}", self.pos_dim));
        }
        if self.hidden == Some(0) || self.layers == 0 {
            return bad("hidden width and layer count must be positive".into());
        }
        if !(self.clamp.is_finite() && self.clamp > 0.0) {
            return bad(format!("clamp must be positive, got {}", self.clamp));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if self.voxels_per_step == 0 {
            return bad("voxels per step must be positive".into());
        }
        if !(self.fpr_limit > 0.0 && self.fpr_limit <= 1.0) {
            return bad(format!("FPR limit must lie in (0, 1], got {}", self.fpr_limit));
        }
        self.spp.validate()
    }

    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            patch: self.patch,
            embed_dim: self.embed_dim,
            radius: self.radius,
        }
    }

    pub fn flow(&self) -> FlowConfig {
        FlowConfig {
            dim: self.embed_dim,
            cond_dim: self.pos_dim,
            hidden: self.hidden.unwrap_or(self.embed_dim),
            layers: self.layers,
            clamp: self.clamp,
        }
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.out.join("checkpoint"))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("config serialization: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("config.toml");
        fs::write(&path, self.to_toml()?).map_err(|e| Error::io(&path, e))
    }
}
