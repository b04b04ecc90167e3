use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::RunConfig;
use crate::error::{Error, Result};
use crate::flow::{positional_grid, save_checkpoint, FlowModel};
use crate::numerics::{adam_step, AdamState};
use crate::objective::{add_noise, loss_and_gradient, Batch, LossParts, Pairing, SppVariant};
use crate::pipeline::{encode_volume, VolumeEmbedding};
use crate::store::{load_manifest, Split};

/// Rows per backward tape.
const TAPE_CHUNK: usize = 256;

/// One row of the loss log.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub volume: String,
    pub parts: LossParts,
    pub val_logp: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub records: Vec<StepRecord>,
    /// Mean held-out log-likelihood before the first step.
    pub val_logp_init: Option<f64>,
    /// Mean held-out log-likelihood after the last step.
    pub val_logp_final: Option<f64>,
}

/// Held-out voxels, fixed for the whole run.
struct Validation {
    x: Vec<f64>,
    cond: Vec<f64>,
    n: usize,
}

impl Validation {
    fn mean_logp(&self, model: &FlowModel) -> Result<f64> {
        let lp = model.log_likelihood_rows(&self.x, &self.cond, self.n)?;
        Ok(lp.iter().sum::<f64>() / self.n as f64)
    }
}

/// Rows of `vol` at flat voxel indices, with their positional conditions.
fn gather(vol: &VolumeEmbedding, cond_grid: &[f64], pos_dim: usize, voxels: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let (_, h0, w0, c) = vol.dims();
    let data = vol.grid.data();
    let mut x = Vec::with_capacity(voxels.len() * c);
    let mut cond = Vec::with_capacity(voxels.len() * pos_dim);
    for &v in voxels {
        x.extend(data[v * c..(v + 1) * c].iter().map(|&f| f64::from(f)));
        let cell = v % (h0 * w0);
        cond.extend_from_slice(&cond_grid[cell * pos_dim..(cell + 1) * pos_dim]);
    }
    (x, cond)
}

fn encode_split(cfg: &RunConfig, split: Split) -> Result<Vec<VolumeEmbedding>> {
    let manifest = load_manifest(&cfg.manifest)?;
    manifest
        .volumes_in(split)
        .map(|v| encode_volume(v, &cfg.encoder()))
        .collect()
}

/// Trains a flow on the manifest's train split and writes `config.toml`,
/// `loss.csv` and `checkpoint/` under `cfg.out`.
pub fn train(cfg: &RunConfig) -> Result<TrainSummary> {
    cfg.validate()?;
    let volumes = encode_split(cfg, Split::Train)?;
    if volumes.is_empty() {
        return Err(Error::Validation {
            volume: cfg.manifest.display().to_string(),
            detail: "manifest has no train volumes".into(),
        });
    }
    let (_, h0, w0, c) = volumes[0].dims();
    if let Some(v) = volumes.iter().find(|v| v.dims().1 != h0 || v.dims().2 != w0 || v.dims().3 != c) {
        return Err(Error::Validation {
            volume: v.volume.clone(),
            detail: format!("grid {:?} differs from the first train volume ({h0}x{w0}x{c})", v.dims()),
        });
    }
    let val_volumes = encode_split(cfg, Split::Val)?;
    cfg.save(&cfg.out)?;

    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut init_rng = ChaCha8Rng::seed_from_u64(master.random());
    let mut order_rng = ChaCha8Rng::seed_from_u64(master.random());
    let mut voxel_rng = ChaCha8Rng::seed_from_u64(master.random());
    let mut noise_rng = ChaCha8Rng::seed_from_u64(master.random());
    let mut pair_rng = ChaCha8Rng::seed_from_u64(master.random());
    let mut val_rng = ChaCha8Rng::seed_from_u64(master.random());

    let mut model = FlowModel::new(cfg.flow(), &mut init_rng)?;
    let cond_grid: Vec<f64> = positional_grid(h0, w0, cfg.pos_dim)?.into_iter().map(f64::from).collect();
    let checkpoint = cfg.out.join("checkpoint");
    save_checkpoint(&model, &checkpoint)?;

    let validation = if val_volumes.is_empty() {
        None
    } else {
        let mut x = Vec::new();
        let mut cond = Vec::new();
        let per = (cfg.voxels_per_step / val_volumes.len()).max(1);
        for v in &val_volumes {
            if v.dims().1 != h0 || v.dims().2 != w0 || v.dims().3 != c {
                return Err(Error::Validation {
                    volume: v.volume.clone(),
                    detail: "validation grid differs from the train grid".into(),
                });
            }
            let total = v.dims().0 * h0 * w0;
            let mut pick = index::sample(&mut val_rng, total, per.min(total)).into_vec();
            pick.sort_unstable();
            let (vx, vc) = gather(v, &cond_grid, cfg.pos_dim, &pick);
            x.extend(vx);
            cond.extend(vc);
        }
        let n = x.len() / c;
        Some(Validation { x, cond, n })
    };
    let val_logp_init = validation.as_ref().map(|v| v.mean_logp(&model)).transpose()?;

    let mut adam = AdamState::new(&model.params(), cfg.lr as f32);
    let mut log = String::from("step,volume,loss,nll,spp,boundary,val_logp\n");
    let log_path = cfg.out.join("loss.csv");
    let mut records = Vec::with_capacity(cfg.steps);
    let mut order: Vec<usize> = Vec::new();

    for step in 0..cfg.steps {
        if order.is_empty() {
            order = (0..volumes.len()).collect();
            order.shuffle(&mut order_rng);
            order.reverse();
        }
        let vol = &volumes[order.pop().expect("refilled above")];
        let total = vol.dims().0 * h0 * w0;
        let mut pick = index::sample(&mut voxel_rng, total, cfg.voxels_per_step.min(total)).into_vec();
        pick.sort_unstable();
        let (normal, normal_cond) = gather(vol, &cond_grid, cfg.pos_dim, &pick);
        let n = pick.len();
        let (anomalous, anomalous_cond) = if cfg.spp.variant == SppVariant::None {
            (Vec::new(), Vec::new())
        } else {
            let mut a = normal.clone();
            add_noise(&mut a, cfg.spp.sigma, &mut noise_rng)?;
            (a, normal_cond.clone())
        };
        let batch = Batch {
            normal,
            normal_cond,
            anomalous,
            anomalous_cond,
        };
        let pairing = Pairing::new(n, n, pair_rng.random())?;

        let fail = |e: Error| match e {
            Error::Numeric(detail) | Error::Training { detail, .. } => Error::Training { step, detail },
            other => other,
        };
        let (parts, grads) =
            loss_and_gradient(&model, &batch, &cfg.spp, &pairing, TAPE_CHUNK).map_err(fail)?;
        let updated = adam_step(&mut adam, &model.params(), &grads).map_err(fail)?;
        model.set_params(updated)?;

        let step_no = step + 1;
        let val_logp = match &validation {
            Some(v) if cfg.val_every > 0 && (step_no % cfg.val_every == 0 || step_no == cfg.steps) => {
                Some(v.mean_logp(&model).map_err(fail)?)
            }
            _ => None,
        };
        let _ = writeln!(
            log,
            "{step_no},{},{},{},{},{},{}",
            vol.volume,
            parts.total,
            parts.nll,
            parts.spp,
            parts.boundary.map(|b| b.to_string()).unwrap_or_default(),
            val_logp.map(|v| v.to_string()).unwrap_or_default()
        );
        log::debug!("step {step_no}: loss {:.4} (nll {:.4}, spp {:.4})", parts.total, parts.nll, parts.spp);
        records.push(StepRecord {
            step: step_no,
            volume: vol.volume.clone(),
            parts,
            val_logp,
        });
        if cfg.checkpoint_every > 0 && step_no % cfg.checkpoint_every == 0 && step_no != cfg.steps {
            save_checkpoint(&model, &checkpoint)?;
            fs::write(&log_path, &log).map_err(|e| Error::io(&log_path, e))?;
        }
    }

    save_checkpoint(&model, &checkpoint)?;
    fs::write(&log_path, &log).map_err(|e| Error::io(&log_path, e))?;
    let val_logp_final = validation.as_ref().map(|v| v.mean_logp(&model)).transpose()?;
    log::info!(
        "trained {} steps; held-out log p {:?} -> {:?}",
        cfg.steps,
        val_logp_init,
        val_logp_final
    );
    Ok(TrainSummary {
        checkpoint,
        records,
        val_logp_init,
        val_logp_final,
    })
}
