use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;
use sharplab::persist::{read_run, write_run};
use sharplab::quadgrid::{stability_table, table_csv, QuadGrid};
use sharplab::sweep::{run_sweep, SweepFile};
use sharplab::train::{prepare, probe_sharpness};
use sharplab::{run_training, RunConfig};

#[derive(Parser)]
#[command(name = "sharplab", version, about = "Curvature-aware training experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Overrides every seed in the config (run, init, dataset); for
    /// `spectrum` the Lanczos start vector, for `quad` the start point.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for sweeps and learning-rate grids.
    #[arg(long, global = true, default_value_t = 1)]
    parallel: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and persist its run directory.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a grid of configurations and write summary CSVs.
    Sweep {
        #[arg(long)]
        spec: PathBuf,
    },
    /// Re-estimate λ₁ from a saved run directory.
    Spectrum {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Stability table of a quadratic over a learning-rate grid.
    Quad {
        #[arg(long)]
        grid: PathBuf,
    },
}

fn reseed(config: &mut RunConfig, seed: u64) {
    config.seed = seed;
    config.init.seed = seed;
    if let Some(d) = &mut config.dataset {
        d.seed = seed;
    }
}

fn train(config_path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let mut config = RunConfig::load(config_path)?;
    if let Some(s) = seed {
        reseed(&mut config, s);
    }
    let trace = run_training(&config)?;
    let dir = out.unwrap_or_else(|| PathBuf::from("runs").join(&trace.config_digest[..12]));
    write_run(&dir, &config, &trace)?;
    let last = trace.rows.last().context("empty trace")?;
    println!(
        "{}: {} rows, last step {}, loss {:.6}, {}",
        dir.display(),
        trace.rows.len(),
        last.step,
        last.loss,
        match trace.divergence {
            Some(d) => format!("diverged at step {} ({:?})", d.step, d.cause),
            None => format!("{:?}", trace.classification.label),
        }
    );
    Ok(())
}

fn sweep(spec_path: &Path, seed: Option<u64>, out: Option<PathBuf>, parallel: usize) -> Result<()> {
    let mut file = SweepFile::load(spec_path)?;
    if let Some(s) = seed {
        reseed(&mut file.base, s);
    }
    let dir = out.unwrap_or_else(|| PathBuf::from("runs/sweep"));
    let report = run_sweep(&file.sweep, &file.base, Some(&dir), parallel)?;
    let failed = report.cells.iter().filter(|c| c.error.is_some()).count();
    println!("{}: {} cells ({failed} failed), CSVs written", dir.display(), report.cells.len());
    Ok(())
}

#[derive(Serialize)]
struct SpectrumReport {
    checkpoint: PathBuf,
    lambda1: f64,
    residual: f64,
    iters_run: usize,
    /// `2/λ₁`, the plain-GD bound; Adam runs saved no optimizer state, so the
    /// estimate is for the unpreconditioned Hessian.
    gd_bound: f64,
}

fn spectrum(dir: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let stored = read_run(dir).with_context(|| format!("reading {}", dir.display()))?;
    let mut config = stored.config;
    if let Some(s) = seed {
        config.lanczos.seed = s;
    }
    let data = prepare(&config)?;
    let est = probe_sharpness(&config, &data, &stored.params)?;
    let report = SpectrumReport {
        checkpoint: dir.to_path_buf(),
        lambda1: est.lambda_max,
        residual: est.residual,
        iters_run: est.iters_run,
        gd_bound: 2.0 / est.lambda_max,
    };
    let json = serde_json::to_string_pretty(&report)?;
    if let Some(out) = out {
        fs::create_dir_all(&out)?;
        fs::write(out.join("spectrum.json"), &json)?;
    }
    println!("{json}");
    Ok(())
}

fn quad(grid_path: &Path, seed: Option<u64>, out: Option<PathBuf>, parallel: usize) -> Result<()> {
    let mut grid = QuadGrid::load(grid_path)?;
    if let Some(s) = seed {
        grid.seed = s;
    }
    let csv = table_csv(&stability_table(&grid, parallel)?)?;
    match out {
        Some(dir) => {
            fs::create_dir_all(&dir)?;
            fs::write(dir.join("quad.csv"), csv)?;
        }
        None => print!("{}", String::from_utf8(csv)?),
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let parallel = cli.parallel.max(1);
    match cli.command {
        Command::Train { config } => train(&config, cli.seed, cli.out),
        Command::Sweep { spec } => sweep(&spec, cli.seed, cli.out, parallel),
        Command::Spectrum { checkpoint } => spectrum(&checkpoint, cli.seed, cli.out),
        Command::Quad { grid } => quad(&grid, cli.seed, cli.out, parallel),
    }
}
