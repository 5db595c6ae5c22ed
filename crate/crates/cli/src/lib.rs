//! Command-line front end: dataset simulation, fitting, summaries, density
//! maps, replicate studies and manifest reruns.

pub mod commands;
pub mod config;
pub mod error;
pub mod formats;
pub mod manifest;
pub mod run;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::Manifest;
use crate::run::FitInputs;

#[derive(Debug, Parser)]
#[command(name = "spatcount", version, about = "Density estimation from spatially replicated counts")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Source {
    /// INI configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Built-in scenario, e.g. study1-s05-n27-t10 or study2-m35.
    #[arg(long, conflicts_with = "config")]
    pub preset: Option<String>,
}

impl Source {
    fn load(&self) -> CliResult<RunConfig> {
        match (&self.config, &self.preset) {
            (Some(path), _) => RunConfig::load(path),
            (None, Some(name)) => RunConfig::from_preset(name),
            (None, None) => Err(CliError::config("give --config or --preset")),
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a dataset from a scenario.
    Simulate {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit the model to trap counts.
    Fit {
        #[arg(long)]
        traps: PathBuf,
        #[arg(long)]
        counts: PathBuf,
        #[arg(long)]
        marked: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the MCMC seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (default: SPATCOUNT_JOBS or all cores).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Recompute the posterior summary of a run.
    Summary { run: PathBuf },
    /// Rasterize stored activity centers into a density surface.
    Map {
        run: PathBuf,
        /// Pixel side in user units (default: the configured pixel, else
        /// the trap spacing).
        #[arg(long)]
        pixel: Option<f64>,
        /// Also write a greyscale PGM image.
        #[arg(long)]
        image: bool,
    },
    /// Simulate and fit replicates of a scenario and report calibration.
    Study {
        #[command(flatten)]
        source: Source,
        #[arg(long, default_value_t = 100)]
        replicates: usize,
        #[arg(long)]
        jobs: Option<usize>,
        /// Overrides the MCMC root seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for study.csv, replicates.csv and study.txt.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-execute a run from its manifest.
    Rerun {
        run: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Fail unless every output is byte-identical to the original.
        #[arg(long)]
        verify: bool,
        #[arg(long)]
        jobs: Option<usize>,
    },
}

/// Prints a summary table to stdout; its note and warning lines go to
/// stderr through `warn_all` instead.
fn print_table(text: &str) {
    for line in text.lines() {
        if !line.starts_with("note: ") && !line.starts_with("warning: ") {
            println!("{line}");
        }
    }
}

fn warn_all(lines: &[String], notes: &[String]) {
    for n in notes {
        eprintln!("note: {n}");
    }
    for w in lines {
        eprintln!("warning: {w}");
    }
}

/// Executes one command, printing results to stdout and diagnostics to
/// stderr.
pub fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate { source, out, seed } => {
            let mut cfg = source.load()?;
            if let (Some(s), Some(scn)) = (seed, cfg.scenario.as_mut()) {
                scn.seed = s;
            }
            let report = commands::simulate(&cfg, &out)?;
            println!("{report}");
        }
        Command::Fit { traps, counts, marked, config, out, seed, jobs } => {
            let mut cfg = match &config {
                Some(p) => RunConfig::load(p)?,
                None => RunConfig::parse("")?,
            };
            if let Some(s) = seed {
                cfg.mcmc.seed = s;
            }
            let report = run::fit(&FitInputs { traps, counts, marked }, &cfg, &out, jobs)?;
            println!(
                "fit {} chains x {} kept draws in {:.1} s -> {}",
                report.manifest.chains.len(),
                report.manifest.kept_draws,
                report.manifest.wall_time_seconds,
                out.display()
            );
            print_table(&report.summary.text);
            warn_all(&report.summary.warnings, &report.summary.notes);
        }
        Command::Summary { run } => {
            let manifest = Manifest::read(&run)?;
            let s = run::summarize_run(&run, &manifest)?;
            print_table(&s.text);
            warn_all(&s.warnings, &s.notes);
        }
        Command::Map { run, pixel, image } => {
            let mut manifest = Manifest::read(&run)?;
            let pixel = match pixel {
                Some(p) => p,
                None => {
                    let cfg = RunConfig::load(&run.join(run::CONFIG_ECHO)).map_err(|e| CliError::io(e.message))?;
                    cfg.output.pixel.unwrap_or(manifest.trap_spacing)
                }
            };
            let (record, raster) = run::map_run(&run, &manifest, pixel, image)?;
            let mean_n = run::snapshot_mean_n(&raster, &run, &manifest)?;
            manifest.raster = Some(record);
            manifest.write(&run)?;
            println!(
                "raster {} x {} pixels of side {} from {} snapshots: total {:.6}, snapshot mean N {:.6}",
                raster.nx,
                raster.ny,
                raster.pixel,
                raster.draws,
                raster.total(),
                mean_n
            );
        }
        Command::Study { source, replicates, jobs, seed, out } => {
            let mut cfg = source.load()?;
            if let Some(s) = seed {
                cfg.mcmc.seed = s;
            }
            let report = commands::study(&cfg, replicates, jobs, out.as_deref())?;
            print!("{}", commands::study_table(&report));
            for (i, e) in &report.failures {
                eprintln!("warning: replicate {i} failed: {e}");
            }
        }
        Command::Rerun { run, out, verify, jobs } => {
            let report = run::rerun(&run, &out, verify, jobs)?;
            if verify {
                println!("rerun of {} reproduced every output in {}", run.display(), out.display());
            } else {
                println!("rerun of {} written to {}", run.display(), out.display());
            }
            print_table(&report.summary.text);
            warn_all(&report.summary.warnings, &report.summary.notes);
        }
    }
    Ok(())
}
