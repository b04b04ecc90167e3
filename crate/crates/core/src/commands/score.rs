use std::fs;
use std::path::PathBuf;

use super::config::RunConfig;
use crate::error::{Error, Result};
use crate::flow::{load_checkpoint, FlowModel};
use crate::metrics::{evaluate, EvalReport};
use crate::pipeline::{encode_volume, EncoderConfig};
use crate::scorer::{score_volume, ScoreVolume};
use crate::store::{load_manifest, DatasetManifest, Split, VolumeEntry};

fn scores_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out.join("scores")
}

fn load_model(cfg: &RunConfig) -> Result<FlowModel> {
    load_checkpoint(cfg.checkpoint_path())
}

fn check_dims(model: &FlowModel, manifest: &DatasetManifest, cfg: &RunConfig) -> Result<()> {
    if model.cond_dim() % 4 != 0 {
        return Err(Error::Config(format!("checkpoint has positional dim {}", model.cond_dim())));
    }
    if let Some(v) = manifest.volumes.first() {
        let channels: usize = v.read_slice(0)?.iter().map(|(_, t)| t.dims()[0]).sum();
        if channels < model.dim() {
            return Err(Error::Config(format!(
                "checkpoint {} expects {}-dim embeddings but the manifest layers carry only {channels} channels",
                cfg.checkpoint_path().display(),
                model.dim()
            )));
        }
    }
    Ok(())
}

fn score_entry(model: &FlowModel, entry: &VolumeEntry, cfg: &RunConfig) -> Result<ScoreVolume> {
    let enc = EncoderConfig {
        patch: cfg.patch,
        embed_dim: model.dim(),
        radius: cfg.radius,
    };
    let emb = encode_volume(entry, &enc)?;
    let (_, h0, w0, _) = emb.dims();
    let target = (entry.height.unwrap_or(h0), entry.width.unwrap_or(w0));
    score_volume(model, &emb, target)
}

/// Scores the named volumes (all test volumes when `ids` is empty) and
/// writes `scores/<id>/{logp,normalized,upscaled,image}.fsx` under
/// `cfg.out`.
pub fn score(cfg: &RunConfig, ids: &[String]) -> Result<Vec<ScoreVolume>> {
    cfg.validate()?;
    let model = load_model(cfg)?;
    let manifest = load_manifest(&cfg.manifest)?;
    check_dims(&model, &manifest, cfg)?;
    let entries: Vec<&VolumeEntry> = if ids.is_empty() {
        manifest.volumes_in(Split::Test).collect()
    } else {
        ids.iter()
            .map(|id| {
                manifest
                    .volume(id)
                    .ok_or_else(|| Error::Config(format!("volume {id:?} is not in the manifest")))
            })
            .collect::<Result<_>>()?
    };
    let mut out = Vec::with_capacity(entries.len());
    for entry in entries {
        let s = score_entry(&model, entry, cfg)?;
        s.save(scores_dir(cfg).join(&entry.id))?;
        log::info!("scored {}", entry.id);
        out.push(s);
    }
    Ok(out)
}

/// Evaluates every masked test volume and writes `report.toml`. Score files
/// from a previous `score` run are reused; missing ones are computed.
pub fn eval(cfg: &RunConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let manifest = load_manifest(&cfg.manifest)?;
    let mut model = None;
    let mut pairs = Vec::new();
    for entry in manifest.volumes_in(Split::Test) {
        let Some(mask) = entry.read_mask()? else {
            log::warn!("test volume {} has no mask; skipped", entry.id);
            continue;
        };
        let dir = scores_dir(cfg).join(&entry.id);
        let scores = if dir.join("upscaled.fsx").is_file() {
            ScoreVolume::load(&entry.id, &dir)?
        } else {
            if model.is_none() {
                let m = load_model(cfg)?;
                check_dims(&m, &manifest, cfg)?;
                model = Some(m);
            }
            let s = score_entry(model.as_ref().expect("loaded above"), entry, cfg)?;
            s.save(&dir)?;
            s
        };
        pairs.push((scores, mask));
    }
    let report = evaluate(&pairs, cfg.fpr_limit)?;
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    let path = cfg.out.join("report.toml");
    fs::write(&path, report.to_text()).map_err(|e| Error::io(&path, e))?;
    Ok(report)
}
