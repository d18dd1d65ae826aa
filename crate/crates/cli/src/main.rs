use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dasr_cli::{
    bench_cmd, build_dataset_cmd, evaluate_cmd, init_threads, super_resolve_cmd, train_cb_cmd, train_dim_cmd, Failure,
    Mode, RunConfig,
};

#[derive(Parser)]
#[command(name = "dasr", version, about = "Difficulty-adaptive tiled image super-resolution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (flat JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    scale: Option<usize>,
    /// bicubic, pb, cb or adaptive.
    #[arg(long, global = true)]
    mode: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Input PNG for super-resolve.
    #[arg(long, global = true)]
    input: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Label every LR patch of the HR training images and write the patch store.
    BuildDataset,
    /// Train the difficulty identifier on the patch store.
    TrainDim,
    /// Train the complex branch with the frozen identifier.
    TrainCb,
    /// Super-resolve one PNG.
    SuperResolve,
    /// Score a benchmark directory.
    Evaluate,
    /// Time full-image super-resolution over a benchmark directory.
    Bench,
}

fn run(cli: Cli) -> Result<(), Failure> {
    init_threads()?;
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.scale {
        cfg.scale = s;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let mode = cli.mode.as_deref().map(Mode::parse).transpose()?;

    match cli.command {
        Command::BuildDataset => {
            let s = build_dataset_cmd(&cfg)?;
            println!(
                "{} patches from {} images ({} skipped) -> {}; class counts {:?}",
                s.patches,
                s.images,
                s.skipped.len(),
                s.store.display(),
                s.histogram.counts
            );
        }
        Command::TrainDim => {
            let log = train_dim_cmd(&cfg)?;
            if let Some(last) = log.epochs.last() {
                println!(
                    "epoch {} loss {:.6} accuracy {:?}",
                    last.epoch, last.loss, last.accuracy
                );
            }
        }
        Command::TrainCb => {
            let log = train_cb_cmd(&cfg)?;
            if let Some(last) = log.epochs.last() {
                println!(
                    "epoch {} loss {:.6} ({} hard patches)",
                    last.epoch, last.loss, log.hard_patches
                );
            }
        }
        Command::SuperResolve => {
            let input = cli
                .input
                .ok_or_else(|| Failure::input("super-resolve needs --input <png>"))?;
            let a = super_resolve_cmd(&cfg, &input, mode.unwrap_or(Mode::Adaptive))?;
            println!(
                "{} -> {} ({}×{}), {:.1}% plain patches",
                a.input.display(),
                a.output.display(),
                a.output_dims.0,
                a.output_dims.1,
                100.0 * a.plain_fraction
            );
        }
        Command::Evaluate => {
            let (r, json, _) = evaluate_cmd(&cfg, mode.unwrap_or(Mode::Bicubic))?;
            println!(
                "{} ×{} {}: PSNR {:.2} dB, SSIM {:.4} over {} rows -> {}",
                r.dataset,
                r.scale,
                r.mode,
                r.mean.psnr_db,
                r.mean.ssim,
                r.rows.len(),
                json.display()
            );
        }
        Command::Bench => {
            let t = bench_cmd(&cfg)?;
            println!(
                "{} ×{}: median {:.4} s/frame over {} frames, {:.3} MB parameters",
                t.dataset, t.scale, t.median_seconds_per_frame, t.frames, t.parameter_megabytes
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
