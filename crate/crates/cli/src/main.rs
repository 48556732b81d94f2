//! `rnf`: run experiments from TOML configurations and turn their records into plot tables.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rnf_core::experiment::{emit_plotdata, read_records, run, ExperimentConfig};

#[derive(Parser)]
#[command(name = "rnf", version, about = "Rational normal form experiments for 1-D NLS")]
struct Cli {
    /// Root for relative output paths.
    #[arg(long, env = "RNF_OUTPUT_ROOT", global = true)]
    output_root: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML file.
    Run {
        config: PathBuf,
        /// Output directory; overrides `output` in the file.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the number of trials.
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Write plot tables from a run directory or a records file.
    Plotdata {
        records: PathBuf,
        /// Directory for the tables; defaults to `<run>/plot`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn under_root(root: Option<&Path>, p: PathBuf) -> PathBuf {
    match root {
        Some(r) if p.is_relative() => r.join(p),
        _ => p,
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let root = cli.output_root.as_deref();
    match cli.command {
        Command::Run { config, out, seed, trials } => {
            let text = std::fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
            let mut cfg = ExperimentConfig::from_toml(&text)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(t) = trials {
                cfg.trials = t;
            }
            cfg.validate()?;
            let dir = out.or_else(|| cfg.output.clone()).unwrap_or_else(|| {
                PathBuf::from("runs").join(format!("{}-{}", cfg.experiment.name(), &cfg.hash()[..12]))
            });
            let dir = under_root(root, dir);
            let outcome = run(&cfg, &dir)?;
            println!("{} records in {} ({:.2} s)", outcome.records.len(), outcome.out_dir.display(), outcome.wall_time_s);
            for f in &outcome.files {
                println!("  {}", f.display());
            }
        }
        Command::Plotdata { records, out } => {
            let records = under_root(root, records);
            let (file, dir) = if records.is_dir() {
                (records.join("records.jsonl"), records.clone())
            } else {
                let parent = records.parent().map(Path::to_path_buf).unwrap_or_default();
                (records.clone(), parent)
            };
            if !file.exists() {
                bail!("no records at {}", file.display());
            }
            let recs = read_records(&file)?;
            let out = out.map(|o| under_root(root, o)).unwrap_or_else(|| dir.join("plot"));
            for f in emit_plotdata(&recs, &out)? {
                println!("{}", f.display());
            }
        }
    }
    Ok(())
}
