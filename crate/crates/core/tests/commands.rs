use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sliceflow::commands::{eval, score, train, RunConfig};
use sliceflow::flow::{load_checkpoint, FlowModel};
use sliceflow::metrics::evaluate;
use sliceflow::scorer::ScoreVolume;
use sliceflow::store::MaskVolume;
use sliceflow::synth::{synthesize, SynthConfig};
use sliceflow::Error;

fn bench(dir: &Path) -> RunConfig {
    let syn = SynthConfig {
        seed: 9,
        train: 3,
        val: 1,
        test: 2,
        depth: 5,
        height: 16,
        width: 16,
        ..SynthConfig::default()
    };
    RunConfig {
        manifest: synthesize(&syn, dir.join("data")).unwrap(),
        out: dir.join("run"),
        embed_dim: 8,
        pos_dim: 8,
        steps: 10,
        seed: 4,
        voxels_per_step: 256,
        ..RunConfig::default()
    }
}

#[test]
fn zero_steps_leaves_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig { steps: 0, ..bench(dir.path()) };
    let summary = train(&cfg).unwrap();
    assert!(summary.records.is_empty());
    assert_eq!(summary.val_logp_init, summary.val_logp_final);
    let saved = load_checkpoint(&summary.checkpoint).unwrap();
    // The initialization stream is the first draw of the master generator.
    let mut init = ChaCha8Rng::seed_from_u64(ChaCha8Rng::seed_from_u64(cfg.seed).random());
    let fresh = FlowModel::new(cfg.flow(), &mut init).unwrap();
    assert_eq!(saved.params(), fresh.params());
}

#[test]
fn training_log_is_finite_and_restartable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig { checkpoint_every: 4, ..bench(dir.path()) };
    let summary = train(&cfg).unwrap();
    assert_eq!(summary.records.len(), 10);
    assert!(summary.records.iter().all(|r| r.parts.total.is_finite()));
    let saved = RunConfig::load(cfg.out.join("config.toml")).unwrap();
    assert_eq!(saved, cfg);
}

#[test]
fn scoring_twice_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = bench(dir.path());
    train(&cfg).unwrap();
    let ids = vec!["test_001".to_string()];
    let first = score(&cfg, &ids).unwrap();
    let bytes = std::fs::read(cfg.out.join("scores/test_001/upscaled.fsx")).unwrap();
    let second = score(&cfg, &ids).unwrap();
    assert_eq!(first[0].upscaled, second[0].upscaled);
    assert_eq!(first[0].logp, second[0].logp);
    assert_eq!(std::fs::read(cfg.out.join("scores/test_001/upscaled.fsx")).unwrap(), bytes);
    assert!(matches!(score(&cfg, &["nope".to_string()]), Err(Error::Config(_))));
}

#[test]
fn missing_checkpoint_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = bench(dir.path());
    assert!(matches!(score(&cfg, &[]), Err(Error::Config(_))));
    assert!(matches!(eval(&cfg), Err(Error::Config(_))));
}

#[test]
fn checkpoint_and_manifest_dims_must_agree() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = bench(dir.path());
    train(&cfg).unwrap();
    let mut ckpt = load_checkpoint(cfg.checkpoint_path()).unwrap();
    let mut flow = ckpt.config().clone();
    // The synthetic layers carry 56 channels in total.
    flow.dim = 64;
    flow.hidden = 64;
    ckpt = FlowModel::new(flow, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let other = dir.path().join("wide_ckpt");
    sliceflow::flow::save_checkpoint(&ckpt, &other).unwrap();
    let mismatched = RunConfig { checkpoint: Some(other), ..cfg };
    assert!(matches!(score(&mismatched, &[]), Err(Error::Config(_))));
}

#[test]
fn eval_report_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = bench(dir.path());
    train(&cfg).unwrap();
    let a = eval(&cfg).unwrap();
    let text = std::fs::read(cfg.out.join("report.toml")).unwrap();
    let b = eval(&cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(std::fs::read(cfg.out.join("report.toml")).unwrap(), text);
}

#[test]
fn random_scores_sit_at_chance() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let (d, h, w) = (8, 32, 32);
    let mut pairs = Vec::new();
    for k in 0..4 {
        // Half the voxels anomalous, as one slab per volume.
        let mask: Vec<bool> = (0..d * h * w).map(|i| (i / (h * w)) < d / 2).collect();
        let logp: Vec<f64> = (0..d * h * w).map(|_| rng.random_range(-5.0..0.0)).collect();
        let s = ScoreVolume::from_log_likelihoods(&format!("v{k}"), logp, (d, h, w), (h, w)).unwrap();
        pairs.push((s, MaskVolume::new(d, h, w, mask).unwrap()));
    }
    let report = evaluate(&pairs, 0.3).unwrap();
    let auroc = report.pixel.unwrap().auroc;
    assert!((auroc - 0.5).abs() <= 0.05, "{auroc}");
}

#[test]
fn perfect_scores_give_full_marks() {
    let (d, h, w) = (4, 8, 8);
    let mask: Vec<bool> = (0..d * h * w).map(|i| i % (h * w) < 10 && i / (h * w) >= 1).collect();
    let logp: Vec<f64> = mask.iter().map(|&m| if m { -20.0 } else { -1.0 }).collect();
    let s = ScoreVolume::from_log_likelihoods("v", logp, (d, h, w), (h, w)).unwrap();
    let report = evaluate(&[(s, MaskVolume::new(d, h, w, mask).unwrap())], 0.3).unwrap();
    let pixel = report.pixel.as_ref().unwrap();
    for v in [pixel.auroc, pixel.auprc, pixel.pro.unwrap(), pixel.max_dice] {
        assert!((v - 1.0).abs() < 1e-12, "{pixel:?}");
    }
    assert!(report.to_text().contains("auroc = 100.00"));
}
