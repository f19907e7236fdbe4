use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use coarseqest::exec;
use coarseqest::pipeline::{report_timings, Pipeline, RunConfig, Stage};

#[derive(Parser)]
#[command(name = "coarseqest", version, about = "Property-driven coarsening of population CTMCs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Overrides the master seed of the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Accept upstream artifacts produced by a different config.
    #[arg(long)]
    force: bool,
    /// Overrides the run directory of the config.
    #[arg(long)]
    run_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the property map on sampled states.
    Smc(RunArgs),
    /// Fill unsampled states by GP regression.
    Impute(RunArgs),
    /// JSD matrix and classical MDS.
    Embed(RunArgs),
    /// k-means macro-states.
    Cluster(RunArgs),
    /// Empirical semi-Markov dynamics.
    Coarsen(RunArgs),
    /// Fine vs coarse macro-state histograms.
    Validate(RunArgs),
    /// Every stage in order.
    All(RunArgs),
    /// SVG plots of the partition and validation artifacts.
    Plot(RunArgs),
    /// Wall-clock table over run directories.
    ReportTimings { runs: Vec<PathBuf> },
}

fn pipeline(args: &RunArgs) -> anyhow::Result<Pipeline> {
    let mut cfg = RunConfig::load(&args.config).with_context(|| format!("loading {}", args.config.display()))?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(d) = &args.run_dir {
        cfg.run_dir = d.clone();
    }
    Ok(Pipeline::new(cfg, args.force)?)
}

fn run_stages(args: &RunArgs, stages: &[Stage]) -> anyhow::Result<()> {
    let p = pipeline(args)?;
    let workers = args.workers.unwrap_or_else(exec::workers);
    exec::with_workers(workers, || -> anyhow::Result<()> {
        for &s in stages {
            let secs = p.run(s).with_context(|| format!("stage {s}"))?;
            eprintln!("{s}: {secs:.2}s");
        }
        Ok(())
    })?;
    eprintln!("artifacts in {}", p.run_dir().display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Smc(a) => run_stages(a, &[Stage::Smc]),
        Command::Impute(a) => run_stages(a, &[Stage::Impute]),
        Command::Embed(a) => run_stages(a, &[Stage::Embed]),
        Command::Cluster(a) => run_stages(a, &[Stage::Cluster]),
        Command::Coarsen(a) => run_stages(a, &[Stage::Coarsen]),
        Command::Validate(a) => run_stages(a, &[Stage::Validate]),
        Command::All(a) => run_stages(a, &Stage::ALL),
        Command::Plot(a) => pipeline(a).and_then(|p| {
            for f in p.write_plots()? {
                println!("{}", f.display());
            }
            Ok(())
        }),
        Command::ReportTimings { runs } => report_timings(runs).map(|r| print!("{r}")).map_err(Into::into),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
