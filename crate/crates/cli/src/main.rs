use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mstnet::app;
use mstnet::config::RunConfig;

#[derive(Parser)]
#[command(name = "mstnet", version, about = "Mixed-scale triplet network for camouflaged object detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes per-epoch checkpoints and loss.csv to run.output_dir.
    Train(Common),
    /// Predict 8-bit probability maps for every image in infer.input_dir.
    Infer(Common),
    /// Score predictions against ground truth; writes metrics.json and CSVs.
    Eval(Common),
    /// Parameter/FLOP accounting, gradient and equivalence checks as JSON.
    Diag(Common),
}

#[derive(Args)]
struct Common {
    /// Configuration file of `key = value` lines.
    #[arg(long)]
    config: PathBuf,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Shorthand for `--set run.checkpoint=PATH`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = RunConfig::from_file(&self.config)
            .and_then(|mut c| {
                c.apply_env();
                c.apply_overrides(&self.overrides)?;
                Ok(c)
            })
            .map_err(|e| Usage(format!("{}: {e}", self.config.display())))?;
        if let Some(p) = &self.checkpoint {
            cfg.paths.checkpoint = Some(p.clone());
        }
        Ok(cfg)
    }
}

/// Configuration problems; reported with exit status 2.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Train(c) => {
            let r = app::run_train(&c.load()?)?;
            log::info!("finished {} iterations", r.iterations);
        }
        Command::Infer(c) => {
            let n = app::run_infer(&c.load()?)?;
            log::info!("wrote {n} predictions");
        }
        Command::Eval(c) => {
            let r = app::run_eval(&c.load()?)?;
            println!("images {}  MAE {:.4}  S {:.4}  maxF {:.4}  maxE {:.4}  wF {:.4}", r.num_images, r.mae, r.s_measure, r.f_measure.max, r.e_measure.max, r.weighted_f);
        }
        Command::Diag(c) => {
            let r = app::run_diag(&c.load()?)?;
            for check in r.checks.iter().filter(|c| !c.passed) {
                log::error!("{} failed: {}", check.name, check.detail);
            }
            return Ok(r.passed());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = e.is::<Usage>() || e.downcast_ref::<mstnet::Error>().is_some_and(|e| matches!(e, mstnet::Error::Config(_)));
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}
