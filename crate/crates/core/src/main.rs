use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sliceflow::commands::{eval, score, train, RunConfig};
use sliceflow::objective::SppVariant;
use sliceflow::synth::{synthesize, SynthConfig};
use sliceflow::Result;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(name = "sliceflow", version, about = "Volumetric anomaly detection from slice features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a flow on the manifest's train split.
    Train(RunArgs),
    /// Score volumes (all test volumes when no ids are given).
    Score {
        #[command(flatten)]
        run: RunArgs,
        ids: Vec<String>,
    },
    /// Evaluate the test split and write report.toml.
    Eval(RunArgs),
    /// Generate the synthetic benchmark.
    Synthbench(SynthArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, default_value = "manifest.toml")]
    manifest: PathBuf,
    #[arg(long, default_value = "run")]
    out: PathBuf,
    /// Checkpoint directory [default: <out>/checkpoint]
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = SppVariant::BgSpp)]
    spp: SppVariant,
    #[arg(long, default_value_t = 0.06)]
    sigma: f64,
    #[arg(long, default_value_t = 10.0)]
    beta: f64,
    #[arg(long, default_value_t = 0.1)]
    tau: f64,
    #[arg(long, default_value_t = 1.0)]
    margin: f64,
    #[arg(long, default_value_t = 3)]
    patch: usize,
    #[arg(long, default_value_t = 1)]
    radius: usize,
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.3)]
    fpr_limit: f64,
    #[arg(long, default_value_t = 1024)]
    embed_dim: usize,
    #[arg(long, default_value_t = 128)]
    pos_dim: usize,
    /// Subnet hidden width [default: embedding dimension]
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long, default_value_t = 8)]
    layers: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 4096)]
    voxels_per_step: usize,
    #[arg(long, default_value_t = 50)]
    val_every: usize,
    #[arg(long, default_value_t = 500)]
    checkpoint_every: usize,
}

impl From<RunArgs> for RunConfig {
    fn from(a: RunArgs) -> Self {
        let mut cfg = RunConfig {
            manifest: a.manifest,
            out: a.out,
            checkpoint: a.checkpoint,
            patch: a.patch,
            radius: a.radius,
            embed_dim: a.embed_dim,
            pos_dim: a.pos_dim,
            hidden: a.hidden,
            layers: a.layers,
            lr: a.lr,
            steps: a.steps,
            seed: a.seed,
            voxels_per_step: a.voxels_per_step,
            val_every: a.val_every,
            checkpoint_every: a.checkpoint_every,
            fpr_limit: a.fpr_limit,
            ..RunConfig::default()
        };
        cfg.spp.variant = a.spp;
        cfg.spp.sigma = a.sigma;
        cfg.spp.beta = a.beta;
        cfg.spp.tau = a.tau;
        cfg.spp.margin = a.margin;
        cfg
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value = "synthbench")]
    out: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    train: usize,
    #[arg(long, default_value_t = 2)]
    val: usize,
    #[arg(long, default_value_t = 10)]
    test: usize,
    /// Anomaly-free test volumes.
    #[arg(long, default_value_t = 0)]
    normal_test: usize,
    #[arg(long, default_value_t = 12)]
    depth: usize,
    #[arg(long, default_value_t = 32)]
    height: usize,
    #[arg(long, default_value_t = 32)]
    width: usize,
    #[arg(long, default_value_t = 0.05)]
    anomaly_fraction: f64,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => {
            let summary = train(&args.into())?;
            println!("checkpoint: {}", summary.checkpoint.display());
            if let (Some(a), Some(b)) = (summary.val_logp_init, summary.val_logp_final) {
                println!("held-out log p: {a:.4} -> {b:.4}");
            }
        }
        Command::Score { run, ids } => {
            let cfg: RunConfig = run.into();
            for s in score(&cfg, &ids)? {
                println!("{}: {} slices", s.volume, s.depth());
            }
        }
        Command::Eval(args) => print!("{}", eval(&args.into())?.to_text()),
        Command::Synthbench(a) => {
            let cfg = SynthConfig {
                seed: a.seed,
                train: a.train,
                val: a.val,
                test: a.test,
                normal_test: a.normal_test,
                depth: a.depth,
                height: a.height,
                width: a.width,
                anomaly_fraction: a.anomaly_fraction,
                ..SynthConfig::default()
            };
            println!("{}", synthesize(&cfg, &a.out)?.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
