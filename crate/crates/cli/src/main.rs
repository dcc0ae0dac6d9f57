use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lobqi::config::{ConfigError, RunConfig, Source};
use lobqi::par::{self, Exec};
use lobqi::pipeline::{self, PipelineError};
use lobqi::sampling::SamplingMode;

#[derive(Parser, Debug)]
#[command(name = "lobqi", version, about = "Queue-imbalance analytics for limit order books")]
struct Cli {
    /// Flat key = value run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed for every random stage.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Sampling scheme: uniform or event.
    #[arg(long, global = true)]
    mode: Option<SamplingMode>,
    /// Simulator regime: large-tick or small-tick.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Number of simulated days.
    #[arg(long, global = true)]
    days: Option<usize>,
    /// Worker threads (0 keeps the default pool).
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    /// Run on one thread without the pool.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Write simulated days as LOBSTER files under OUT/data.
    Simulate,
    /// Reconstruct and verify LOBSTER files and summarize activity.
    Ingest,
    /// Build, subsample and split the observations.
    Sample,
    /// Fit the configured models to OUT/train.csv.
    Fit,
    /// Score the fitted models on both splits.
    Evaluate,
    /// Assemble report.json and report.txt.
    Report,
    /// Run every stage in order.
    Pipeline,
}

fn resolve(cli: &Cli) -> Result<RunConfig, ConfigError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.apply_env(|k| std::env::var(k).ok());
    if let Some(p) = &cli.preset {
        cfg.source = Source::Preset(p.clone());
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if let Some(m) = cli.mode {
        cfg.mode = m;
    }
    if let Some(d) = cli.days {
        cfg.days = d;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli, cfg: &RunConfig, exec: Exec) -> Result<(), PipelineError> {
    match cli.command {
        Command::Simulate => {
            let files = pipeline::write_simulated_days(cfg, exec)?;
            println!("wrote {} files to {}", files.len(), cfg.out.display());
        }
        Command::Ingest => {
            let report = pipeline::run_ingest(cfg, exec)?;
            let bad: usize = report.days.iter().filter_map(|d| d.snapshot_mismatches).sum();
            println!("{} days ingested, {bad} snapshot mismatches", report.days.len());
            for (instrument, s) in &report.summary {
                println!(
                    "{instrument}: mean spread {:.4}, mean queues {:.1}/{:.1}",
                    s.mean_spread, s.mean_bid_queue, s.mean_ask_queue
                );
            }
        }
        Command::Sample => {
            let (set, split) = pipeline::run_sample(cfg, exec)?;
            println!(
                "{} observations from {} days ({} train, {} test)",
                set.points.len(),
                set.days.len(),
                split.train.len(),
                split.test.len()
            );
        }
        Command::Fit => {
            let fits = pipeline::run_fit(cfg, exec)?;
            if let Some(f) = &fits.logistic {
                println!("x0 = {:.4}, x1 = {:.4}", f.x0, f.x1);
            }
            if let Some(l) = &fits.local {
                println!("local alpha = {}", l.cv.selected);
            }
        }
        Command::Evaluate => {
            let ev = pipeline::run_evaluate(cfg)?;
            for r in &ev.reports {
                println!(
                    "{}: auc out {:.4}, msr out {:.4}",
                    r.model_id.as_str(),
                    r.auc_out,
                    r.msr_out
                );
            }
        }
        Command::Report => {
            let report = pipeline::run_report(cfg)?;
            print!("{}", pipeline::render_table(&report));
        }
        Command::Pipeline => {
            let outcome = pipeline::run_pipeline(cfg, exec)?;
            print!("{}", pipeline::render_table(&outcome.report));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let cfg = match resolve(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(j) = cli.jobs.filter(|&j| j > 0) {
        par::configure_threads(j);
    }
    let exec = if cli.sequential {
        Exec::Sequential
    } else {
        Exec::default()
    };
    match run(&cli, &cfg, exec) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
