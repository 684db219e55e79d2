use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ddr::commands;
use ddr::config::RunConfig;
use ddr::Error;

#[derive(Parser)]
#[command(name = "ddr", version, about = "Depth-regularized volume rendering toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set ddr.epsilon=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic scene as a dataset.
    GenScene {
        #[command(flatten)]
        common: Common,
        /// Also bake the ground-truth grid to `gt.bin`.
        #[arg(long)]
        bake: bool,
    },
    /// Train a field and camera residuals.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Dataset directory; the configured scene is synthesized if absent.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Render color and depth from a checkpoint.
    Render {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Single frame; every frame if absent.
        #[arg(long)]
        frame: Option<usize>,
    },
    /// Export a row's rendering weights as a PGM image.
    Weightmap {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Compare every analytic gradient with finite differences.
    Gradcheck {
        #[command(flatten)]
        common: Common,
    },
    /// PSNR, SSIM and weight unimodality against a dataset.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

fn resolve(c: &Common) -> Result<RunConfig, Error> {
    RunConfig::load(c.config.as_deref(), &c.overrides)
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::GenScene { common, bake } => {
            commands::gen_scene(&resolve(&common)?, &common.out, bake)?;
        }
        Command::Fit { common, data, resume } => {
            let (_, out) = commands::fit(&resolve(&common)?, &common.out, data.as_deref(), resume.as_deref())?;
            if let Some(l) = out.final_losses {
                println!("iterations {} total loss {}", out.iterations, l.total);
            }
        }
        Command::Render { common, checkpoint, frame } => {
            commands::render(&resolve(&common)?, &checkpoint, &common.out, frame)?;
        }
        Command::Weightmap { common, checkpoint } => {
            commands::weightmap(&resolve(&common)?, &checkpoint, &common.out)?;
        }
        Command::Gradcheck { common } => {
            let (_, summary) = commands::gradcheck(&resolve(&common)?, &common.out)?;
            for op in &summary.ops {
                let status = if op.passed { "pass" } else { "FAIL" };
                println!("{status} {:<16} max rel error {:.3e} (tol {:.0e})", op.name, op.max_rel_error, op.tolerance);
            }
            if !summary.passed() {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Eval { common, checkpoint, data } => {
            let (_, r) = commands::eval(&resolve(&common)?, &checkpoint, data.as_deref(), &common.out)?;
            println!(
                "psnr {:.2} ssim {:.4} modality {:.3} peak accuracy {:.3}",
                r.mean_psnr, r.mean_ssim, r.mean_modality, r.peak_accuracy
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}
